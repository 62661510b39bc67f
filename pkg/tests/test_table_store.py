import os
import tempfile
import unittest
from unittest import mock

from nfsense.core.app_logger import DATA_DIR_ENV, app_data_dir
from nfsense.core.table_store import TableStore


class TestTableStore(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.store = TableStore(os.path.join(self.tmp.name, "cache"))

    def tearDown(self):
        self.store.close()
        self.tmp.cleanup()

    def touch(self, key: str) -> str:
        path = self.store.path_for(key)
        with open(path, "wb") as f:
            f.write(b"x")
        return path

    def test_creates_directory_and_index(self):
        self.assertTrue(os.path.isdir(self.store.base_dir))
        self.assertTrue(os.path.isfile(self.store.db_path))
        self.assertEqual(self.store.entries(), [])

    def test_register_and_lookup(self):
        path = self.touch("ka-1")
        ok, _ = self.store.register("ka-1", 0, 0xABC)
        self.assertTrue(ok)
        self.assertEqual(self.store.lookup("ka-1"), path)
        entry = self.store.entries()[0]
        self.assertEqual(entry["cache_key"], "ka-1")
        self.assertEqual(entry["fingerprint"], "0000000000000abc")
        self.assertEqual(entry["file_name"], "ka-1.nflt")

    def test_register_replaces(self):
        self.touch("kv-1")
        self.store.register("kv-1", 1, 1)
        self.store.register("kv-1", 1, 2)
        self.assertEqual(len(self.store.entries()), 1)
        self.assertEqual(self.store.entries()[0]["fingerprint"], f"{2:016x}")

    def test_unknown_key(self):
        self.assertIsNone(self.store.lookup("nothing"))

    def test_missing_file_drops_the_entry(self):
        path = self.touch("ka-2")
        self.store.register("ka-2", 0, 5)
        os.remove(path)
        self.assertIsNone(self.store.lookup("ka-2"))
        self.assertEqual(self.store.entries(), [])

    def test_forget(self):
        self.touch("ka-3")
        self.store.register("ka-3", 0, 5)
        self.store.forget("ka-3")
        self.assertIsNone(self.store.lookup("ka-3"))

    def test_index_survives_reopening(self):
        self.touch("ka-4")
        self.store.register("ka-4", 0, 7)
        self.store.close()
        reopened = TableStore(self.store.base_dir)
        try:
            self.assertIsNotNone(reopened.lookup("ka-4"))
        finally:
            reopened.close()


class TestDataDir(unittest.TestCase):

    def test_environment_override(self):
        with tempfile.TemporaryDirectory() as tmp, mock.patch.dict(os.environ, {DATA_DIR_ENV: tmp}):
            self.assertEqual(app_data_dir(), tmp)
            store = TableStore()
            try:
                self.assertEqual(store.base_dir, os.path.join(tmp, "tables"))
            finally:
                store.close()


if __name__ == '__main__':
    unittest.main()

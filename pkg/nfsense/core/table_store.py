import logging
import os
import sqlite3

from .app_logger import app_data_dir

logger = logging.getLogger("nfsense.core.table_store")


class TableStore:
    """
    On-disk cache of built lookup tables.

    Table files live in one directory; an SQLite index maps cache keys to file names together
    with the table kind and array-config fingerprint. Serialization is the caller's concern:
    the store only hands out paths and keeps the index consistent.
    """
    DB_NAME = "tables.sqlite3"

    def __init__(self, base_dir: str | None = None):
        self.base_dir = base_dir or os.path.join(app_data_dir(), "tables")
        if not os.path.exists(self.base_dir):
            try:
                os.makedirs(self.base_dir, exist_ok=True)
                logger.info(f"Created table cache directory: {self.base_dir}")
            except OSError as e:
                logger.error(f"Error creating table cache directory '{self.base_dir}': {e}. Using current directory as fallback.")
                self.base_dir = "."

        self.db_path = os.path.join(self.base_dir, self.DB_NAME)
        self._conn = None
        try:
            self._ensure_db_and_table()
            logger.info(f"TableStore initialized at '{self.db_path}'.")
        except sqlite3.Error as e:
            logger.critical(f"Failed to initialize table index at '{self.db_path}': {e}", exc_info=True)
            self._conn = None

    def _get_connection(self) -> sqlite3.Connection | None:
        if self._conn is None:
            try:
                # callers serialize access; worker threads share this connection
                self._conn = sqlite3.connect(self.db_path, timeout=10, check_same_thread=False)
                self._conn.row_factory = sqlite3.Row
                self._conn.execute("PRAGMA journal_mode=WAL;")
                logger.debug("New SQLite connection established.")
            except sqlite3.Error as e:
                logger.error(f"Failed to connect to table index '{self.db_path}': {e}", exc_info=True)
                self._conn = None
        return self._conn

    def _ensure_db_and_table(self):
        conn = self._get_connection()
        if not conn:
            raise sqlite3.OperationalError("Database connection not available for table creation.")
        try:
            conn.execute('''
                CREATE TABLE IF NOT EXISTS lookup_tables (
                    cache_key TEXT PRIMARY KEY,
                    kind INTEGER NOT NULL,
                    fingerprint TEXT NOT NULL,
                    file_name TEXT NOT NULL,
                    last_updated TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            ''')
            conn.commit()
        except sqlite3.Error as e:
            logger.error(f"Error ensuring 'lookup_tables' schema: {e}", exc_info=True)
            conn.rollback()
            raise

    def path_for(self, cache_key: str) -> str:
        return os.path.join(self.base_dir, f"{cache_key}.nflt")

    def lookup(self, cache_key: str) -> str | None:
        """Path of the cached table file, or None when the key is unknown or the file vanished."""
        conn = self._get_connection()
        if not conn:
            return None
        try:
            row = conn.execute("SELECT file_name FROM lookup_tables WHERE cache_key = ?", (cache_key,)).fetchone()
        except sqlite3.Error as e:
            logger.error(f"Error looking up table '{cache_key}': {e}", exc_info=True)
            return None
        if row is None:
            return None
        path = os.path.join(self.base_dir, row["file_name"])
        if not os.path.exists(path):
            logger.warning(f"Indexed table file '{path}' is missing; dropping the index entry.")
            self.forget(cache_key)
            return None
        return path

    def register(self, cache_key: str, kind: int, fingerprint: int) -> tuple[bool, str]:
        conn = self._get_connection()
        if not conn:
            return False, "Table index is not available."
        file_name = os.path.basename(self.path_for(cache_key))
        try:
            conn.execute('''
                INSERT OR REPLACE INTO lookup_tables (cache_key, kind, fingerprint, file_name, last_updated)
                VALUES (?, ?, ?, ?, CURRENT_TIMESTAMP)
            ''', (cache_key, kind, f"{fingerprint:016x}", file_name))
            conn.commit()
        except sqlite3.Error as e:
            logger.error(f"Error registering table '{cache_key}': {e}", exc_info=True)
            conn.rollback()
            return False, f"Could not register table '{cache_key}': {e}"
        logger.info(f"Registered lookup table '{cache_key}'.")
        return True, f"Registered '{cache_key}'."

    def forget(self, cache_key: str) -> None:
        conn = self._get_connection()
        if not conn:
            return
        try:
            conn.execute("DELETE FROM lookup_tables WHERE cache_key = ?", (cache_key,))
            conn.commit()
        except sqlite3.Error as e:
            logger.error(f"Error removing table '{cache_key}' from the index: {e}", exc_info=True)
            conn.rollback()

    def entries(self) -> list[dict]:
        conn = self._get_connection()
        if not conn:
            return []
        try:
            rows = conn.execute(
                "SELECT cache_key, kind, fingerprint, file_name, last_updated FROM lookup_tables ORDER BY cache_key"
            ).fetchall()
        except sqlite3.Error as e:
            logger.error(f"Error listing cached tables: {e}", exc_info=True)
            return []
        return [dict(row) for row in rows]

    def close(self):
        if self._conn:
            try:
                self._conn.close()
                logger.info("Table index connection closed.")
            except sqlite3.Error as e:
                logger.error(f"Error closing table index connection: {e}", exc_info=True)
            finally:
                self._conn = None

import logging
import os
from logging.handlers import RotatingFileHandler
from PyQt6.QtCore import QStandardPaths, QCoreApplication

ORG_NAME = "NFSense"
APP_NAME = "NearFieldSense"
DATA_DIR_ENV = "NFSENSE_DATA_DIR"

LOG_FORMAT = '%(asctime)s - %(name)s - [%(levelname)s] - %(message)s (%(filename)s:%(lineno)d)'


def app_data_dir() -> str:
    """
    Directory for logs and cached lookup tables.

    NFSENSE_DATA_DIR wins when set. Otherwise QStandardPaths' AppLocalDataLocation is used,
    which already ends in <org>/<app> once the QCoreApplication names are set.
    """
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        return override

    if not QCoreApplication.organizationName():
        QCoreApplication.setOrganizationName(ORG_NAME)
    if not QCoreApplication.applicationName():
        QCoreApplication.setApplicationName(APP_NAME)

    base_data_path = QStandardPaths.writableLocation(QStandardPaths.StandardLocation.AppLocalDataLocation)
    if not base_data_path:
        base_data_path = "."
    return base_data_path


def setup_logger(log_to_file: bool = True, console_level: int = logging.INFO) -> logging.Logger:
    log_formatter = logging.Formatter(LOG_FORMAT)

    file_handler = None
    log_file_path = None
    if log_to_file:
        log_dir = os.path.join(app_data_dir(), "logs")
        try:
            os.makedirs(log_dir, exist_ok=True)
        except OSError as e:
            print(f"ERROR: Failed to create log directory '{log_dir}': {e}. Logging to current directory as fallback.")
            log_dir = "."

        log_file_path = os.path.join(log_dir, "nfsense.log")
        try:
            file_handler = RotatingFileHandler(
                log_file_path, maxBytes=5*1024*1024, backupCount=5, encoding='utf-8'
            )
            file_handler.setFormatter(log_formatter)
            file_handler.setLevel(logging.INFO)
        except (OSError, IOError) as e:
            print(f"ERROR: Failed to create log file handler for '{log_file_path}': {e}. File logging will be disabled.")
            file_handler = None

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(log_formatter)
    console_handler.setLevel(console_level)

    app_root_logger = logging.getLogger("nfsense")
    app_root_logger.setLevel(logging.DEBUG)

    if app_root_logger.hasHandlers():
        app_root_logger.handlers.clear()

    if file_handler:
        app_root_logger.addHandler(file_handler)
    app_root_logger.addHandler(console_handler)

    if file_handler:
        app_root_logger.info(f"Logger initialized. Logging to file: {log_file_path}")
    elif log_to_file:
        app_root_logger.warning(f"Logger initialized. Console logging only. File logging FAILED for path: {log_file_path}")
    else:
        app_root_logger.debug("Logger initialized. Console logging only.")

    return app_root_logger

import os
import sys
import logging
from keyforge.constant import get_current_time_stamp


LOG_DIR = os.environ.get("KEYFORGE_LOG_DIR", "logs")
LOG_LEVEL = os.environ.get("KEYFORGE_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = '[%(asctime)s]^;%(levelname)s^;%(lineno)d^;%(filename)s^;%(funcName)s()^;%(message)s'


def get_log_file_name():
    return f"log_{get_current_time_stamp()}.log"


LOG_FILE_NAME = get_log_file_name()

os.makedirs(LOG_DIR, exist_ok=True)
LOG_FILE_PATH = os.path.join(LOG_DIR, LOG_FILE_NAME)


logging.basicConfig(filename=LOG_FILE_PATH,
                    filemode="w",
                    format=LOG_FORMAT,
                    level=getattr(logging, LOG_LEVEL, logging.INFO)
                    )


def set_verbosity(verbosity: int) -> None:
    """Mirror log records to stderr: 1 -> INFO, 2 or more -> DEBUG."""
    if verbosity <= 0:
        return
    level = logging.DEBUG if verbosity > 1 else logging.INFO
    root = logging.getLogger()
    for handler in root.handlers:
        if getattr(handler, "keyforge_console", False):
            handler.setLevel(level)
            break
    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.keyforge_console = True
        handler.setLevel(level)
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        root.addHandler(handler)
    root.setLevel(min(root.level, level))

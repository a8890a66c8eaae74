import logging
from datetime import datetime
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

import pytz

from .config import settings

FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(pathname)s:%(lineno)d - %(message)s"
MAX_LOG_BYTES = 10 * 1024 * 1024
LOG_BACKUPS = 5


def _owned(handler: logging.Handler) -> logging.Handler:
    handler._distcomp = True
    return handler


def _run_log(service_name: str, log_dir: str) -> RotatingFileHandler:
    """Rotating DEBUG log named after the service and the UTC day."""
    directory = Path(log_dir)
    directory.mkdir(parents=True, exist_ok=True)
    day = datetime.now(pytz.UTC).strftime("%Y%m%d")
    handler = RotatingFileHandler(directory / f"{service_name}_{day}.log",
                                  maxBytes=MAX_LOG_BYTES, backupCount=LOG_BACKUPS)
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(FILE_FORMAT))
    return _owned(handler)


def setup_logging(service_name: str, log_dir: Optional[str] = None, level: Optional[str] = None) -> logging.Logger:
    """Configure logging for a distcomp run.

    Args:
        service_name: Prefix of the log file name and of the startup message
        log_dir: Directory for the rotating log file; console only when None
        level: Console level name; defaults to DISTCOMP_LOG

    Returns:
        The configured root logger
    """
    console_level = getattr(logging, (level or settings.LOG).upper(), logging.INFO)
    log_dir = log_dir or settings.LOG_DIR

    root = logging.getLogger()
    root.setLevel(logging.DEBUG if log_dir else console_level)

    # Repeated CLI invocations in one process must not stack handlers
    for handler in [h for h in root.handlers if getattr(h, "_distcomp", False)]:
        root.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler()
    console.setLevel(console_level)
    console.setFormatter(logging.Formatter(settings.LOG_FORMAT))
    root.addHandler(_owned(console))

    if log_dir:
        root.addHandler(_run_log(service_name, log_dir))

    root.info(f"Starting {service_name}")
    return root

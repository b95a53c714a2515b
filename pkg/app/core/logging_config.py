"""
Logging configuration for Quad-Curl FEM Lab
"""

import logging
import logging.config
import sys
from pathlib import Path
from pythonjsonlogger import jsonlogger
from app.core.config import settings


def setup_logging(level: str = None, to_file: bool = None):
    """Setup application logging"""

    level = level or settings.LOG_LEVEL
    to_file = settings.LOG_TO_FILE if to_file is None else to_file

    handlers = {
        "console": {
            "class": "logging.StreamHandler",
            "level": level,
            "formatter": "default",
            "stream": sys.stderr,
        },
    }
    root_handlers = ["console"]
    study_handlers = ["console"]

    if to_file:
        # Create logs directory
        log_dir = Path(settings.LOG_DIR)
        log_dir.mkdir(parents=True, exist_ok=True)

        handlers.update({
            "file": {
                "class": "logging.handlers.RotatingFileHandler",
                "level": "DEBUG",
                "formatter": "detailed",
                "filename": str(log_dir / "quadcurl.log"),
                "maxBytes": 10485760,  # 10MB
                "backupCount": 5,
                "encoding": "utf8",
            },
            "error_file": {
                "class": "logging.handlers.RotatingFileHandler",
                "level": "ERROR",
                "formatter": "json",
                "filename": str(log_dir / "errors.log"),
                "maxBytes": 10485760,  # 10MB
                "backupCount": 5,
                "encoding": "utf8",
            },
            "study_file": {
                "class": "logging.handlers.RotatingFileHandler",
                "level": "INFO",
                "formatter": "json",
                "filename": str(log_dir / "studies.log"),
                "maxBytes": 10485760,  # 10MB
                "backupCount": 10,
                "encoding": "utf8",
            },
        })
        root_handlers += ["file", "error_file"]
        study_handlers += ["study_file"]

    LOGGING_CONFIG = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "default": {
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            },
            "detailed": {
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(module)s - %(funcName)s - %(lineno)d - %(message)s",
            },
            "json": {
                "()": jsonlogger.JsonFormatter,
                "format": "%(asctime)s %(name)s %(levelname)s %(module)s %(funcName)s %(lineno)d %(message)s"
            }
        },
        "handlers": handlers,
        "loggers": {
            "": {  # root logger
                "level": level,
                "handlers": root_handlers,
                "propagate": False,
            },
            "app.study": {
                "level": "INFO",
                "handlers": study_handlers,
                "propagate": False,
            },
            "uvicorn": {
                "level": "INFO",
                "handlers": ["console"],
                "propagate": False,
            },
            "uvicorn.access": {
                "level": "INFO",
                "handlers": ["console"],
                "propagate": False,
            },
        }
    }

    logging.config.dictConfig(LOGGING_CONFIG)

    setup_study_logger()


def setup_study_logger():
    """Setup dedicated convergence-study logger"""
    study_logger = logging.getLogger("app.study")
    study_logger.debug("Study logging initialized", extra={
        "event_type": "system_startup",
        "component": "study_logger"
    })


def get_study_logger():
    """Get the study logger instance"""
    return logging.getLogger("app.study")


class StructuredLogger:
    """Structured logging helper"""

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)

    def log_study_event(self, event_type: str, message: str, **kwargs):
        """Log convergence-study event (level finished, table written, ...)"""
        study_logger = get_study_logger()
        extra = {
            "event_type": event_type,
            "component": "study",
            **kwargs
        }
        study_logger.info(message, extra=extra)

"""
Logging utilities for the conveyor planner.
"""

import logging
import os
import sys
from logging.handlers import TimedRotatingFileHandler
from typing import Optional

import structlog

from config.settings import settings


def setup_logger(
    name: str = "conveyor_planner",
    level: Optional[str] = None,
    log_file: Optional[str] = None,
) -> structlog.BoundLogger:
    """
    Set up structured logging for the application.

    Args:
        name: Logger name
        level: Log level (debug, info, warning, error)
        log_file: Optional file name under settings.log_dir; rotated daily

    Returns:
        Configured structured logger
    """
    log_level = (level or settings.log_level).upper()

    logging.basicConfig(
        format="%(message)s",
        stream=sys.stdout,
        level=getattr(logging, log_level),
    )
    logging.getLogger().setLevel(getattr(logging, log_level))

    if log_file:
        os.makedirs(settings.log_dir, exist_ok=True)
        path = os.path.join(settings.log_dir, log_file)
        root = logging.getLogger()
        known = {getattr(h, "baseFilename", None) for h in root.handlers}
        if os.path.abspath(path) not in known:
            # New file at midnight, keep 7 days
            file_handler = TimedRotatingFileHandler(
                path, when="midnight", interval=1, backupCount=7, encoding="utf-8"
            )
            file_handler.suffix = "%Y-%m-%d"
            file_handler.setFormatter(logging.Formatter("%(message)s"))
            root.addHandler(file_handler)

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer(),
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    return structlog.get_logger(name)


# Global logger instance
logger = setup_logger()


def get_logger(name: str) -> structlog.BoundLogger:
    """
    Get a logger instance for a specific module.

    Args:
        name: Module name

    Returns:
        Logger instance
    """
    return structlog.get_logger(name)

"""
Logging utilities for the wave tail laboratory.
"""
import logging
import time
from contextlib import contextmanager

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def resolve_log_level():
    """Numeric level for AppSettings.log_level (WAVETAIL_LOG_LEVEL or .env); unknown names fall back to INFO."""
    from config import settings

    return getattr(logging, str(settings.log_level).upper(), logging.INFO)


def get_logger(name):
    """
    Get a logger with the specified name.

    The level comes from the application settings the first time logging is configured.

    Args:
        name: The name of the logger

    Returns:
        A configured logger instance
    """
    if not logging.getLogger().handlers:
        logging.basicConfig(level=resolve_log_level(), format=LOG_FORMAT)

    return logging.getLogger(name)


@contextmanager
def log_duration(logger, label):
    """Log '<label> started' and '<label> finished in N s'; nothing is logged on failure."""
    logger.info(f"{label} started")
    start = time.perf_counter()
    yield
    logger.info(f"{label} finished in {time.perf_counter() - start:.2f} s")

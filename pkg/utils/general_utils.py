import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Optional

import config


def setup_logger(logger_name: str = config.LOGGER_NAME, log_file: str = config.LOG_FILE) -> logging.Logger:
    """
    Creates basic backend logger that logs to a local rotating file.

    Calling it again for the same logger does not attach a second handler.

    Args:
        logger_name (str): The name of the logger to be created.
        log_file (str): Path of the log file.

    Returns:
        logging.Logger: The created logger.
    """

    logger = logging.getLogger(logger_name)
    logger.setLevel(logging.DEBUG)

    if any(isinstance(handler, RotatingFileHandler) for handler in logger.handlers):
        return logger

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )

    file_handler = RotatingFileHandler(log_file, maxBytes=1024 * 1024, backupCount=5)
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    return logger


def resolve_thread_count(threads: Optional[int] = None) -> int:
    """
    Worker pool size: the explicit flag, else the XPI_THREADS environment variable, else the CPU count.

    Args:
        threads (Optional[int]): value of --threads, if given

    Returns:
        int: a positive thread count
    """

    if threads is None:
        from_env = os.environ.get(config.THREADS_ENV_VAR)
        if from_env:
            try:
                threads = int(from_env)
            except ValueError:
                raise ValueError(f"{config.THREADS_ENV_VAR} must be an integer, got {from_env!r}")
        else:
            threads = os.cpu_count() or 1

    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads

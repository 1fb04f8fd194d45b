import logging
import sys
from pathlib import Path

import config


def setup_logger(name: str, log_file: str | None = None, level=None):
    """Sets up a logger with a stderr console handler and an optional file handler.

    stdout is left alone so commands like `score` can print machine-readable output.
    """
    log_file = log_file if log_file is not None else config.LOG_FILE
    level = level if level is not None else getattr(logging, config.LOG_LEVEL, logging.INFO)

    logger = logging.getLogger(name)
    logger.setLevel(level)

    format_str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    if not logger.handlers:
        c_handler = logging.StreamHandler(sys.stderr)
        c_handler.setLevel(level)
        c_handler.setFormatter(logging.Formatter(format_str))
        logger.addHandler(c_handler)

        if log_file:
            Path(log_file).parent.mkdir(parents=True, exist_ok=True)
            f_handler = logging.FileHandler(log_file)
            f_handler.setLevel(level)
            f_handler.setFormatter(logging.Formatter(format_str))
            logger.addHandler(f_handler)

    return logger

# extensions.py
import logging

from config import Config

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def init_logging(level: str | int | None = None) -> logging.Logger:
    """Configure the root logger once; later calls only adjust the level."""
    level = level or Config.LOG_LEVEL
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ValueError(f"unknown log level: {level}")

    root = logging.getLogger()
    if not any(getattr(h, "_cattn", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._cattn = True
        root.addHandler(handler)
    root.setLevel(level)
    return root


def progress_enabled(logger: logging.Logger) -> bool:
    # tqdm bars only when INFO output is wanted
    return logger.isEnabledFor(logging.INFO)

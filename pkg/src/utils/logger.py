import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

_stderr_console = Console(stderr=True)
_root_level = logging.INFO


def set_global_level(level: int) -> None:
    """Change the level of every logger created through setup_logger"""
    global _root_level
    _root_level = level
    for name in list(logging.root.manager.loggerDict):
        if name.startswith("src"):
            lg = logging.getLogger(name)
            lg.setLevel(level)
            for handler in lg.handlers:
                handler.setLevel(level)


def setup_logger(name: str, level: Optional[int] = None) -> logging.Logger:
    """
    Set up a logger with the specified name and level

    Records go to stderr through rich so that stdout stays free for
    machine-readable output.

    Args:
        name: Logger name
        level: Logging level (defaults to the process-wide level)

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(name)
    level = _root_level if level is None else level
    logger.setLevel(level)

    # Repeated imports must not stack handlers
    if not logger.handlers:
        handler = RichHandler(console=_stderr_console, show_path=False, rich_tracebacks=False)
        handler.setLevel(level)
        handler.setFormatter(logging.Formatter('%(name)s: %(message)s'))
        logger.addHandler(handler)
        logger.propagate = False

    return logger

"""Console logging for the command-line tool."""

from __future__ import annotations

import logging
import os

from rich.console import Console
from rich.logging import RichHandler

LOG_LEVEL_ENV = "CLUSTERDET_LOG_LEVEL"
DEFAULT_LOG_LEVEL = "WARNING"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def resolve_level(level: str | None = None) -> int:
    """Explicit level, else the environment variable, else WARNING.

    Raises:
        ValueError: if the name is not a known level
    """
    name = (level or os.environ.get(LOG_LEVEL_ENV) or DEFAULT_LOG_LEVEL).upper()
    if name not in LOG_LEVELS:
        raise ValueError(f"Unknown log level {name!r}, expected one of {LOG_LEVELS}")
    return int(getattr(logging, name))


def configure_logging(level: str | None = None) -> None:
    """Route the package's logs through a Rich handler on stderr."""
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        omit_repeated_times=False,
    )
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    package_logger = logging.getLogger("clusterdet")
    package_logger.handlers[:] = [handler]
    package_logger.setLevel(resolve_level(level))
    package_logger.propagate = False

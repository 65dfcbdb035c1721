"""
Configure logging with Rich console output and optional DEBUG file logging.

NumPy and SciPy runtime warnings (overflow, ill-conditioned solves) are routed
through the `py.warnings` logger so they reach the same handlers.
"""

from __future__ import annotations

import logging
import logging.handlers
import sys
from typing import Any

LOG_FILE = "matseg.log"


def _build_console_handler(*, debug_mode: bool, console: Any = None) -> logging.Handler:
    """
    Build a rich-aware console handler and fall back to stdlib logging if Rich is unavailable.
    """
    try:
        from rich.console import Console
        from rich.logging import RichHandler

        rich_console = console or Console(stderr=True)
        handler = RichHandler(
            console=rich_console,
            show_time=True,
            show_level=True,
            show_path=False,
            rich_tracebacks=debug_mode,
            tracebacks_show_locals=debug_mode,
            markup=False,
            log_time_format="[%d-%b-%Y %H:%M:%S]",
        )
        handler.setLevel(logging.INFO)
        return handler
    except Exception:
        handler = logging.StreamHandler(stream=sys.stderr)
        handler.setLevel(logging.INFO)
        handler.setFormatter(
            logging.Formatter(
                fmt="[%(asctime)s] %(levelname)s: %(message)s",
                datefmt="%d-%b-%Y %H:%M:%S",
            )
        )
        return handler


def configure_logging(
    debug_mode: bool, *, console: Any = None, log_file: str = LOG_FILE
) -> None:
    """
    If debug_mode is True:
      - root logger level = DEBUG
      - rotating file handler at DEBUG writing `log_file`
      - numeric library versions recorded once in the file
    Otherwise:
      - root logger level = INFO
      - no file is created
    The console always shows INFO and above.
    """
    logger = logging.getLogger()
    logger.handlers.clear()
    logging.captureWarnings(True)

    if debug_mode:
        logger.setLevel(logging.DEBUG)
        fh = logging.handlers.RotatingFileHandler(
            log_file,
            mode="a",
            maxBytes=10_000_000,
            backupCount=10,
            encoding="utf-8",
        )
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(
            logging.Formatter(
                fmt="[%(asctime)s] %(levelname)s\t[%(name)s.%(funcName)s:%(lineno)d]\t%(message)s",
                datefmt="%d-%b-%Y %H:%M:%S",
            )
        )
        logger.addHandler(fh)
        _log_versions(logger)
    else:
        logger.setLevel(logging.INFO)

    logger.addHandler(_build_console_handler(debug_mode=debug_mode, console=console))


def _log_versions(logger: logging.Logger) -> None:
    from importlib import metadata

    versions = []
    for package in ("matseg", "numpy", "scipy", "pandas"):
        try:
            versions.append(f"{package} {metadata.version(package)}")
        except metadata.PackageNotFoundError:
            versions.append(f"{package} (not installed)")
    logger.debug("Python %s; %s", sys.version.split()[0], ", ".join(versions))

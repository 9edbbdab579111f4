"""Log sinks for command-line runs.

The library stays silent (``logger.disable("splatkit")`` in the package init);
the CLI calls :func:`configure_logging` once per run.
"""
from __future__ import annotations

import sys
from typing import TYPE_CHECKING

from loguru import logger

if TYPE_CHECKING:
    from pathlib import Path

RUN_LOG = "run.log"
FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan> - {message}"


def configure_logging(out_dir: Path | None = None, *, verbose: bool = False) -> list[int]:
    """Enable splatkit logging to stderr and, with ``out_dir``, to ``run.log``.

    Returns the sink ids so callers can remove them again.
    """
    logger.remove()
    logger.enable("splatkit")
    level = "DEBUG" if verbose else "INFO"
    sinks = [logger.add(sys.stderr, level=level, format=FORMAT)]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        sinks.append(logger.add(out_dir / RUN_LOG, level="DEBUG", encoding="utf-8", mode="a"))
    return sinks


__all__ = ["configure_logging"]

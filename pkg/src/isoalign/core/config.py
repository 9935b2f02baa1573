"""Runtime settings read from the environment (optionally seeded from a .env file)."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from .exceptions import ValidationError

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class Settings:
    """Knobs shared by the library and the CLI."""

    num_threads: int = 1
    log_level: str = "WARNING"
    bound_tolerance: float = 1e-9
    rank_rtol: float = 1e-10

    def with_tolerance(self, tolerance: Optional[float]) -> "Settings":
        # CLI --tolerance wins over the environment
        if tolerance is None:
            return self
        if not tolerance >= 0:
            raise ValidationError(f"tolerance must be >= 0, got {tolerance}")
        return replace(self, bound_tolerance=float(tolerance))


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ValidationError(f"{name} must be an integer, got {raw!r}") from e


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError as e:
        raise ValidationError(f"{name} must be a number, got {raw!r}") from e


def load_settings(env_file: Optional[str | Path] = None) -> Settings:
    """
    Build Settings from the process environment.

    If ``env_file`` is given (or a ``.env`` exists in the working directory) it is
    loaded first without overriding variables that are already set:

    - ``ALIGN_NUM_THREADS``: worker cap for instance sweeps (>= 1)
    - ``ALIGN_LOG_LEVEL``: stderr log level
    - ``ALIGN_BOUND_TOL``: absolute slack when judging bound satisfaction
    - ``ALIGN_RANK_RTOL``: relative singular-value threshold for rank decisions
    """
    if env_file is not None:
        load_dotenv(dotenv_path=str(env_file), override=False)
    else:
        load_dotenv(override=False)

    num_threads = _env_int("ALIGN_NUM_THREADS", 1)
    if num_threads < 1:
        raise ValidationError(f"ALIGN_NUM_THREADS must be >= 1, got {num_threads}")

    log_level = (os.getenv("ALIGN_LOG_LEVEL") or "WARNING").upper()
    if log_level not in _LOG_LEVELS:
        raise ValidationError(f"ALIGN_LOG_LEVEL must be one of {_LOG_LEVELS}, got {log_level!r}")

    bound_tolerance = _env_float("ALIGN_BOUND_TOL", 1e-9)
    rank_rtol = _env_float("ALIGN_RANK_RTOL", 1e-10)
    if bound_tolerance < 0 or rank_rtol <= 0:
        raise ValidationError("ALIGN_BOUND_TOL must be >= 0 and ALIGN_RANK_RTOL > 0")

    return Settings(
        num_threads=num_threads,
        log_level=log_level,
        bound_tolerance=bound_tolerance,
        rank_rtol=rank_rtol,
    )

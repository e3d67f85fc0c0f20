"""Process configuration read from the environment and an optional .env file."""
import os
from dataclasses import dataclass
from dotenv import load_dotenv

from darklab.errors import ConfigurationError

# Load environment variables from .env file
load_dotenv()

DEFAULT_TOL = 1e-9
DEFAULT_TOL_GROWTH = 1e3
DEFAULT_WORKERS = 4
DEFAULT_LOG_LEVEL = "INFO"


@dataclass(frozen=True)
class Settings:
    """Tolerances and runtime knobs shared by all commands."""

    tol: float = DEFAULT_TOL
    rank_tol: float | None = None
    tol_growth: float = DEFAULT_TOL_GROWTH
    workers: int = DEFAULT_WORKERS
    log_level: str = DEFAULT_LOG_LEVEL


_settings: Settings | None = None


def _read_float(name: str, default: float | None) -> float | None:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = float(raw)
    except ValueError as e:
        raise ConfigurationError(f"{name}={raw!r} is not a number") from e
    if not value > 0:
        raise ConfigurationError(f"{name} must be positive, got {value}")
    return value


def _read_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigurationError(f"{name}={raw!r} is not an integer") from e
    if value < 1:
        raise ConfigurationError(f"{name} must be at least 1, got {value}")
    return value


def get_settings() -> Settings:
    """Get the process settings (singleton pattern).

    Values come from DARKLAB_TOL, DARKLAB_RANK_TOL, DARKLAB_TOL_GROWTH,
    DARKLAB_WORKERS and DARKLAB_LOG_LEVEL; unset variables keep defaults.
    """
    global _settings

    if _settings is None:
        _settings = Settings(
            tol=_read_float("DARKLAB_TOL", DEFAULT_TOL),
            rank_tol=_read_float("DARKLAB_RANK_TOL", None),
            tol_growth=_read_float("DARKLAB_TOL_GROWTH", DEFAULT_TOL_GROWTH),
            workers=_read_int("DARKLAB_WORKERS", DEFAULT_WORKERS),
            log_level=os.getenv("DARKLAB_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper(),
        )
    return _settings


def reset_settings() -> None:
    """Forget the cached settings so the next access re-reads the environment."""
    global _settings
    _settings = None

"""
Process configuration for selfmetro.

Values come from environment variables; scenario parameters live in
``selfmetro.core.scenario`` instead.
"""

import os
from typing import Any, Dict


def _env_flag(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Config:
    """Configuration class for selfmetro runs."""

    # Parallelism
    THREADS_ENV: str = "SELFMETRO_THREADS"

    # Observability Configuration
    ENABLE_TRACING: bool = _env_flag("SELFMETRO_ENABLE_TRACING")
    TRACE_CONSOLE: bool = _env_flag("SELFMETRO_TRACE_CONSOLE")

    # Logging
    LOG_LEVEL: str = os.getenv("SELFMETRO_LOG_LEVEL", "INFO").upper()

    @classmethod
    def threads(cls) -> int:
        """Maximum worker threads, read from the environment at call time."""
        from .core.errors import ConfigError

        raw = os.getenv(cls.THREADS_ENV)
        if raw is None or raw.strip() == "":
            return max(1, os.cpu_count() or 1)
        try:
            value = int(raw)
        except ValueError as e:
            raise ConfigError(f"{cls.THREADS_ENV} must be an integer, got {raw!r}") from e
        if value < 1:
            raise ConfigError(f"{cls.THREADS_ENV} must be >= 1, got {value}")
        return value

    @classmethod
    def get_observability_config(cls) -> Dict[str, Any]:
        """Get observability configuration."""
        return {
            "enable_otel": _env_flag("SELFMETRO_ENABLE_TRACING"),
            "export_console": _env_flag("SELFMETRO_TRACE_CONSOLE"),
        }

    @classmethod
    def get_logging_config(cls) -> Dict[str, Any]:
        """Get logging configuration."""
        return {"level": os.getenv("SELFMETRO_LOG_LEVEL", cls.LOG_LEVEL).upper()}


# Global configuration instance
config = Config()

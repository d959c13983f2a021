"""
Configuration management for the HQP surgical IK toolkit.

Uses Pydantic Settings for environment variable management. Only process-wide
knobs live here (logging, solver tolerances, concurrency, HTTP port); scenario
numerics such as gains and time step belong to the scenario files.
"""

from enum import Enum
from typing import Any, Optional

from pydantic import ConfigDict, Field, field_validator
from pydantic_settings import BaseSettings


class Environment(str, Enum):
    """Application environment types"""
    DEVELOPMENT = "development"
    STAGING = "staging"
    PRODUCTION = "production"


class LogLevel(str, Enum):
    """Logging level options"""
    DEBUG = "debug"
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


class LogFormat(str, Enum):
    CONSOLE = "console"
    JSON = "json"


class Settings(BaseSettings):
    """
    Application settings loaded from ``HQP_*`` environment variables.

    Every field has a default so the CLI works without any environment setup.
    """

    # === APPLICATION CONFIGURATION ===
    environment: Environment = Field(
        default=Environment.DEVELOPMENT,
        description="Application environment (development/staging/production)"
    )
    port: int = Field(
        default=8000,
        ge=1024,
        le=65535,
        description="Port for the FastAPI application"
    )
    internal_api_key: Optional[str] = Field(
        default=None,
        description="Bearer token required by the HTTP API when set"
    )

    # === LOGGING ===
    log_level: LogLevel = Field(
        default=LogLevel.INFO,
        description="Logging level for the application"
    )
    log_format: LogFormat = Field(
        default=LogFormat.CONSOLE,
        description="Console log format; production always logs JSON"
    )
    log_file: Optional[str] = Field(
        default=None,
        description="Optional path of a rotating JSON log file"
    )

    # === SOLVER CONFIGURATION ===
    qp_tolerance: float = Field(
        default=1e-8,
        gt=0.0,
        le=1e-3,
        description="KKT tolerance of every QP solve"
    )
    qp_max_iterations: int = Field(
        default=4000,
        ge=10,
        le=100000,
        description="Active-set iteration cap per QP solve"
    )
    null_space_tolerance: float = Field(
        default=1e-8,
        gt=0.0,
        lt=1.0,
        description="Relative singular value cutoff of the null-space projector"
    )

    # === SIMULATION ===
    results_dir: str = Field(
        default="results",
        description="Default output directory for scenario runs"
    )
    max_concurrent_scenarios: int = Field(
        default=4,
        ge=1,
        le=16,
        description="Maximum number of scenarios simulated in parallel"
    )

    @field_validator('internal_api_key')
    @classmethod
    def validate_api_key(cls, v: Optional[str]) -> Optional[str]:
        """Reject short or placeholder keys"""
        if v is None:
            return v
        if len(v) < 8 or v.isspace():
            raise ValueError("internal_api_key must be at least 8 characters")
        if v == 'your_secure_internal_api_key_here':
            raise ValueError("internal_api_key cannot be the default placeholder")
        return v

    def is_development(self) -> bool:
        """Check if running in development mode"""
        return self.environment == Environment.DEVELOPMENT

    def is_production(self) -> bool:
        """Check if running in production mode"""
        return self.environment == Environment.PRODUCTION

    def get_log_config(self) -> dict[str, Any]:
        """Get logging configuration based on environment"""
        level_value = self.log_level
        level_str = (
            level_value.value if isinstance(level_value, Enum) else str(level_value)
        ).upper()
        fmt = self.log_format
        fmt_str = fmt.value if isinstance(fmt, Enum) else str(fmt)

        return {
            "level": level_str,
            "format": "json" if self.is_production() else fmt_str,
            "log_file": self.log_file,
        }

    model_config = ConfigDict(
        env_file=".env",
        case_sensitive=False,
        use_enum_values=True,
        validate_assignment=True,
        env_prefix="HQP_",
        extra="ignore",
    )


_settings_instance: Optional[Settings] = None


def get_settings() -> Settings:
    """
    Get application settings instance.

    Settings are validated on first access and cached for subsequent calls.
    """
    global _settings_instance
    if _settings_instance is None:
        _settings_instance = Settings()
    return _settings_instance


def reset_settings() -> None:
    """Drop the cached settings so the next access re-reads the environment"""
    global _settings_instance
    _settings_instance = None


# Lazy-loaded global settings instance
class SettingsProxy:
    """Proxy that loads settings on first attribute access"""
    def __getattr__(self, name: str) -> Any:
        return getattr(get_settings(), name)


settings = SettingsProxy()

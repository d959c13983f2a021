"""
Test suite for environment settings.
"""

import pytest
from pydantic import ValidationError

from app.config import Settings, get_settings, reset_settings


class TestSettings:
    """HQP_* environment variables"""

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("HQP_INTERNAL_API_KEY", raising=False)
        config = Settings()
        assert config.environment == "development"
        assert config.qp_tolerance == 1e-8
        assert config.qp_max_iterations == 4000
        assert config.null_space_tolerance == 1e-8
        assert config.results_dir == "results"
        assert config.internal_api_key is None
        assert config.is_development()

    def test_environment_overrides(self, monkeypatch):
        monkeypatch.setenv("HQP_QP_TOLERANCE", "1e-10")
        monkeypatch.setenv("HQP_MAX_CONCURRENT_SCENARIOS", "8")
        monkeypatch.setenv("HQP_LOG_LEVEL", "debug")
        config = Settings()
        assert config.qp_tolerance == 1e-10
        assert config.max_concurrent_scenarios == 8
        assert config.get_log_config()["level"] == "DEBUG"

    @pytest.mark.parametrize("key", ["short", "your_secure_internal_api_key_here", "        "])
    def test_rejects_weak_api_keys(self, monkeypatch, key):
        monkeypatch.setenv("HQP_INTERNAL_API_KEY", key)
        with pytest.raises(ValidationError):
            Settings()

    def test_tolerance_bounds(self, monkeypatch):
        monkeypatch.setenv("HQP_QP_TOLERANCE", "0")
        with pytest.raises(ValidationError):
            Settings()

    def test_production_logs_json(self, monkeypatch):
        monkeypatch.setenv("HQP_ENVIRONMENT", "production")
        monkeypatch.setenv("HQP_LOG_FORMAT", "console")
        config = Settings()
        assert config.is_production()
        assert config.get_log_config()["format"] == "json"

    def test_cached_until_reset(self, monkeypatch):
        reset_settings()
        first = get_settings()
        assert get_settings() is first
        monkeypatch.setenv("HQP_RESULTS_DIR", "elsewhere")
        reset_settings()
        assert get_settings().results_dir == "elsewhere"
        monkeypatch.undo()
        reset_settings()

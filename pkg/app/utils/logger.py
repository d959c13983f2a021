"""
Structured logging for the HQP surgical IK toolkit.

Console output for development, JSON (python-json-logger) for production and
for the optional rotating log file. Run and scenario identifiers travel in
context variables so every record emitted inside a simulation carries them,
including records from worker threads started through ``run_context``.
"""

import logging
import os
import sys
import time
import uuid
from collections.abc import Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from typing import Any, Optional, Union

from pythonjsonlogger import jsonlogger

SERVICE_NAME = "hqp-surgical-ik"
SERVICE_VERSION = "1.0.0"

# Context variables for run tracking
run_id_var: ContextVar[Optional[str]] = ContextVar('run_id', default=None)
scenario_var: ContextVar[Optional[str]] = ContextVar('scenario', default=None)

# Global logging configuration
_logging_configured = False


def _utc_timestamp() -> str:
    return datetime.now(timezone.utc).strftime('%Y-%m-%dT%H:%M:%S.%fZ')


class ContextFilter(logging.Filter):
    """
    Logging filter that adds run ID, scenario name and service info to records.
    """

    def filter(self, record: logging.LogRecord) -> bool:
        """Add context variables to the log record"""
        record.run_id = run_id_var.get(None)
        record.scenario = scenario_var.get(None)
        record.timestamp = _utc_timestamp()
        record.service = SERVICE_NAME
        record.version = SERVICE_VERSION
        return True


class ConsoleFormatter(logging.Formatter):
    """
    Human-readable console formatter for development.
    """

    def __init__(self) -> None:
        super().__init__()

        # Color codes for different log levels
        self.colors = {
            'DEBUG': '\033[36m',    # Cyan
            'INFO': '\033[32m',     # Green
            'WARNING': '\033[33m',  # Yellow
            'ERROR': '\033[31m',    # Red
            'CRITICAL': '\033[35m', # Magenta
            'RESET': '\033[0m'      # Reset
        }

    def format(self, record: logging.LogRecord) -> str:
        """Format log record for console output"""
        level_color = self.colors.get(record.levelname, '')
        reset_color = self.colors['RESET']
        colored_level = f"{level_color}{record.levelname}{reset_color}"

        timestamp = datetime.fromtimestamp(record.created).strftime('%H:%M:%S.%f')[:-3]
        logger_name = record.name.split('.')[-1]

        message = f"{timestamp} {colored_level:>8} [{logger_name}] {record.getMessage()}"

        scenario = getattr(record, 'scenario', None)
        if scenario:
            message += f" [scenario={scenario}]"
        run_id = getattr(record, 'run_id', None)
        if run_id:
            message += f" [run={run_id[:12]}]"

        if record.exc_info:
            message += f"\n{self.formatException(record.exc_info)}"

        return message


class JSONFormatter(jsonlogger.JsonFormatter):
    """
    Structured JSON formatter for production logging.
    """

    def __init__(self) -> None:
        super().__init__(
            fmt='%(timestamp)s %(levelname)s %(name)s %(funcName)s %(lineno)d %(message)s',
            datefmt='%Y-%m-%dT%H:%M:%S'
        )

    def process_log_record(self, log_record: dict[str, Any]) -> dict[str, Any]:
        """Process and enrich log record"""
        log_record['service'] = SERVICE_NAME
        log_record['version'] = SERVICE_VERSION
        if not log_record.get('timestamp'):
            log_record['timestamp'] = _utc_timestamp()
        # Drop empty context keys so records outside a run stay compact
        for key in ('run_id', 'scenario'):
            if log_record.get(key) is None:
                log_record.pop(key, None)
        return super().process_log_record(log_record)


def configure_logging(
    log_level: str = "INFO",
    log_format: str = "console",
    log_file_path: Optional[str] = None,
    max_file_size: int = 10 * 1024 * 1024,  # 10MB
    backup_count: int = 5,
    force: bool = False,
) -> None:
    """
    Configure global logging settings.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_format: Format type ('console' or 'json')
        log_file_path: Optional rotating JSON log file
        max_file_size: Maximum size of log file before rotation
        backup_count: Number of backup files to keep
        force: Reconfigure even if logging was already set up (CLI verbosity)
    """
    global _logging_configured

    if _logging_configured and not force:
        return

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))
    root_logger.handlers.clear()

    # stderr keeps stdout free for CLI output
    console_handler = logging.StreamHandler(sys.stderr)
    formatter: logging.Formatter = (
        JSONFormatter() if log_format == "json" else ConsoleFormatter()
    )
    console_handler.setFormatter(formatter)
    console_handler.addFilter(ContextFilter())
    root_logger.addHandler(console_handler)

    if log_file_path:
        directory = os.path.dirname(log_file_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        file_handler = RotatingFileHandler(
            log_file_path,
            maxBytes=max_file_size,
            backupCount=backup_count
        )
        # Always use JSON format for file logs
        file_handler.setFormatter(JSONFormatter())
        file_handler.addFilter(ContextFilter())
        root_logger.addHandler(file_handler)

    # Third-party loggers
    logging.getLogger("httpx").setLevel(logging.WARNING)
    logging.getLogger("httpcore").setLevel(logging.WARNING)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)

    _logging_configured = True


def get_logger(name: str) -> logging.Logger:
    """
    Get a configured logger instance.

    Args:
        name: Logger name (typically __name__)

    Returns:
        Configured logger instance with structured logging support
    """
    if not _logging_configured:
        try:
            from app.config import settings

            log_config = settings.get_log_config()
            configure_logging(
                log_level=log_config["level"],
                log_format=log_config["format"],
                log_file_path=log_config["log_file"],
            )
        except Exception:
            # Broken environment settings must not prevent logging
            configure_logging()

    return logging.getLogger(name)


class StructuredLogger:
    """
    Enhanced structured logger with context support and convenience methods.
    """

    def __init__(self, name: str):
        self.logger = get_logger(name)
        self._context: dict[str, Any] = {}

    def _log_with_context(
        self,
        level: int,
        message: str,
        extra: Optional[dict[str, Any]] = None,
        exc_info: bool = False
    ) -> None:
        """Internal method to log with context"""
        merged_extra = {**self._context}
        if extra:
            merged_extra.update(extra)
        self.logger.log(level, message, extra=merged_extra, exc_info=exc_info)

    def is_enabled_for(self, level: int) -> bool:
        return self.logger.isEnabledFor(level)

    def debug(self, message: str, extra: Optional[dict[str, Any]] = None) -> None:
        """Log debug message"""
        if self.logger.isEnabledFor(logging.DEBUG):
            self._log_with_context(logging.DEBUG, message, extra)

    def info(self, message: str, extra: Optional[dict[str, Any]] = None) -> None:
        """Log info message"""
        self._log_with_context(logging.INFO, message, extra)

    def warning(self, message: str, extra: Optional[dict[str, Any]] = None) -> None:
        """Log warning message"""
        self._log_with_context(logging.WARNING, message, extra)

    def error(
        self,
        message: str,
        extra: Optional[dict[str, Any]] = None,
        exc_info: bool = False
    ) -> None:
        """Log error message"""
        self._log_with_context(logging.ERROR, message, extra, exc_info)

    def exception(self, message: str, extra: Optional[dict[str, Any]] = None) -> None:
        """Log exception with traceback"""
        self._log_with_context(logging.ERROR, message, extra, exc_info=True)

    def with_context(self, **context: Any) -> 'StructuredLogger':
        """Return new logger instance with additional context"""
        new_logger = StructuredLogger(self.logger.name)
        new_logger._context = {**self._context, **context}
        return new_logger


def new_run_id() -> str:
    return f"run_{uuid.uuid4().hex[:12]}"


@contextmanager
def run_context(
    scenario: Optional[str] = None,
    run_id: Optional[str] = None,
) -> Iterator[dict[str, Optional[str]]]:
    """
    Context manager binding a run ID and scenario name to every log record.

    Args:
        scenario: Scenario name, if the run belongs to one
        run_id: Optional run ID, generates one if not provided
    """
    if run_id is None:
        run_id = new_run_id()

    tokens = [run_id_var.set(run_id), scenario_var.set(scenario)]
    try:
        yield {'run_id': run_id, 'scenario': scenario}
    finally:
        for token in reversed(tokens):
            token.var.reset(token)


class TimedLogger:
    """
    Context manager logging the duration of an operation.
    """

    def __init__(self, logger: Union[logging.Logger, StructuredLogger], operation: str):
        self.logger = logger
        self.operation = operation
        self.start_time = 0.0
        self.duration_ms = 0.0

    def __enter__(self) -> 'TimedLogger':
        self.start_time = time.perf_counter()
        self.logger.debug(f"Starting {self.operation}")
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        self.duration_ms = (time.perf_counter() - self.start_time) * 1000.0

        extra_context: dict[str, Any] = {
            "operation": self.operation,
            "duration_ms": round(self.duration_ms, 3),
        }

        if exc_type is None:
            self.logger.info(f"Completed {self.operation}", extra=extra_context)
        else:
            extra_context["error"] = str(exc_val)
            self.logger.error(f"Failed {self.operation}", extra=extra_context)


def get_structured_logger(name: str) -> StructuredLogger:
    """Get a structured logger instance"""
    return StructuredLogger(name)

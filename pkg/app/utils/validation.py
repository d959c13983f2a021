"""Helpers for turning pydantic validation errors into one-line messages."""

from pydantic import ValidationError


def format_validation_error(error: ValidationError) -> str:
    """Render every error as ``field.path: message`` joined by semicolons"""
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item.get("loc", ())) or "<root>"
        parts.append(f"{location}: {item.get('msg', 'invalid value')}")
    return "; ".join(parts)

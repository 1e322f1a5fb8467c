"""In-sandbox test executor speaking a JSON-lines protocol over stdio."""

from .runner import (
    entrypoint_name,
    execute_job,
    main,
    normalize_output,
    validate_job,
    values_match,
)

__all__ = [
    "entrypoint_name",
    "execute_job",
    "main",
    "normalize_output",
    "validate_job",
    "values_match",
]

"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration value.

    ``field`` is a dotted path to the offending entry (``schedule.beta_min``,
    ``models.library[1].templates[0].weight``) and ``line`` the source line when
    the error comes from JSON decoding.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        parts = []
        if line is not None:
            parts.append(f"line {line}")
        if field:
            parts.append(field)
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ConditionResolutionError(LookupError):
    """A condition selects no templates from a model library."""

    def __init__(self, model_id: int, condition: object):
        self.model_id = model_id
        self.condition = condition
        super().__init__(f"condition {condition} selects no templates from model {model_id}")


class ExtractionFailed(RuntimeError):
    """Region mask extraction failed (object absent or fully overlapped)."""

    def __init__(self, reason: str, tag: str | None = None):
        self.reason = reason
        self.tag = tag
        super().__init__(f"mask extraction failed: {reason}" + (f" ({tag})" if tag else ""))


class PartitionError(ValueError):
    """Region masks do not tile the grid exactly once."""

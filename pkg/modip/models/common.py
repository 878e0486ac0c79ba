"""Common base models and parsing helpers"""

from typing import Sequence

from pydantic import BaseModel, ConfigDict


class FrozenModel(BaseModel):
    """Immutable, hashable configuration record; unknown keys are errors."""

    model_config = ConfigDict(frozen=True, extra="forbid")


def parse_triple(value: str | Sequence, cast=float) -> tuple:
    """Parse "a,b,c" (or a 3-sequence) into a 3-tuple.
    >>> parse_triple("1,1,2")
    (1.0, 1.0, 2.0)
    >>> parse_triple("64, 64, 64", int)
    (64, 64, 64)
    """
    parts = value.split(",") if isinstance(value, str) else list(value)
    if len(parts) != 3:
        raise ValueError(f"expected 3 comma-separated values, got {value!r}")
    return tuple(cast(p.strip()) if isinstance(p, str) else cast(p) for p in parts)

"""Small formatting helpers shared by the file-backed interfaces."""

from __future__ import annotations


def fmt_float(value: float) -> str:
    """17 significant digits: enough for a bit-faithful double round-trip."""
    return format(float(value), ".17g")

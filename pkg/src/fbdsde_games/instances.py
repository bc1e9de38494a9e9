"""Packaged reference instances."""

from __future__ import annotations

from .config import load_config
from .model import LqGameSpec, ZeroSumSpec


def spec_a() -> LqGameSpec:
    """Nonzero-sum reference game (``specA``)."""
    return load_config("specA")[1]


def spec_z() -> ZeroSumSpec:
    """Zero-sum reference game (``specZ``)."""
    return load_config("specZ")[1]

"""Exact rational helpers and labeled seed derivation."""
from __future__ import annotations

import hashlib
from fractions import Fraction


def as_fraction(value) -> Fraction:
    """Coerce ints, Fractions, "num/den" or decimal strings, and floats (via their repr) to a Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return Fraction(int(value[0]), int(value[1]))
    return Fraction(value)


def as_pair(value) -> list[int]:
    fr = as_fraction(value)
    return [fr.numerator, fr.denominator]


def as_text(value) -> str:
    fr = as_fraction(value)
    return str(fr.numerator) if fr.denominator == 1 else f"{fr.numerator}/{fr.denominator}"


def derive_seed(seed: int, label: str) -> int:
    """Sub-seed for a named component, stable across runs and platforms."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")

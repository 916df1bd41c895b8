"""Exact unit conversions between file units and internal integer units.

All simulation arithmetic runs on integers so that same-timestamp events
compare equal and energy sums carry zero rounding error:

* time: integer microseconds (files use seconds as JSON floats)
* power: integer milliwatts (files use watts as JSON floats)
* energy: integer nanojoules, the exact product of the two above
  (1 mW x 1 us = 1 nJ)

File floats are converted with round-half-even on the exact rational value
of the float, not on a float product, so parsing is deterministic across
platforms.
"""

from __future__ import annotations

from fractions import Fraction

US_PER_S = 10**6
MW_PER_W = 10**3
NJ_PER_J = 10**9


def seconds_to_us(value: float | int) -> int:
    """Convert seconds (file unit) to integer microseconds, round-half-even."""
    return round(Fraction(value) * US_PER_S)


def us_to_seconds(us: int) -> float:
    return us / US_PER_S


def watts_to_mw(value: float | int) -> int:
    """Convert watts (file unit) to integer milliwatts, round-half-even."""
    return round(Fraction(value) * MW_PER_W)


def mw_to_watts(mw: int) -> float:
    return mw / MW_PER_W


def nj_to_joules(nj: int) -> float:
    return nj / NJ_PER_J


def format_seconds(us: int) -> str:
    """Render microseconds as seconds with exactly 6 decimals.

    Microsecond resolution is exactly representable in 6 decimal digits, so
    this is lossless and locale-independent (required for golden-file CSVs).
    """
    sign = "-" if us < 0 else ""
    us = abs(us)
    return f"{sign}{us // US_PER_S}.{us % US_PER_S:06d}"

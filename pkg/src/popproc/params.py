"""Parameter containers for the base processes and series evaluation.

The containers are small frozen dataclasses so that parameter sets can be
passed around, hashed and printed without ceremony.  Validation happens at
construction time: every downstream formula may assume rates are positive
finite floats and initial populations are positive integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def _require_rate(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")


def _require_population(name: str, value: int) -> None:
    if not (isinstance(value, int) and value >= 1):
        raise ValueError(f"{name} must be an integer >= 1, got {value!r}")


@dataclass(frozen=True)
class BirthParams:
    """Linear (Yule) birth process: each individual splits at rate ``alpha``."""

    alpha: float
    n0: int = 1

    def __post_init__(self) -> None:
        _require_rate("alpha", self.alpha)
        _require_population("n0", self.n0)


@dataclass(frozen=True)
class DeathParams:
    """Death process started from ``n0`` individuals with rate parameter ``mu``.

    The same container serves the linear death process (total rate ``mu * k``
    in state ``k``) and the sublinear death process (total rate
    ``mu * (n0 - k + 1)`` in state ``k >= 1``).
    """

    mu: float
    n0: int

    def __post_init__(self) -> None:
        _require_rate("mu", self.mu)
        _require_population("n0", self.n0)


@dataclass(frozen=True)
class PoissonParams:
    """Homogeneous Poisson process with rate ``lam``."""

    lam: float

    def __post_init__(self) -> None:
        _require_rate("lam", self.lam)


@dataclass(frozen=True)
class SeriesControl:
    """Truncation policy for infinite series.

    ``rel_tol`` bounds the relative truncation error of mass enumerations,
    ``abs_tol`` is the term-size floor used by the positive-series stopping
    rule, and ``max_terms`` caps any single summation.
    """

    rel_tol: float = 1e-12
    abs_tol: float = 1e-15
    max_terms: int = 10**6

    def __post_init__(self) -> None:
        if not (0 < self.rel_tol < 1):
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol!r}")
        if not (0 < self.abs_tol < 1):
            raise ValueError(f"abs_tol must lie in (0, 1), got {self.abs_tol!r}")
        if not (isinstance(self.max_terms, int) and self.max_terms >= 10):
            raise ValueError(f"max_terms must be an integer >= 10, got {self.max_terms!r}")


DEFAULT_CONTROL = SeriesControl()


def require_time(t: float) -> None:
    """Reject negative or non-finite time arguments."""
    if not (isinstance(t, (int, float)) and math.isfinite(t) and t >= 0):
        raise ValueError(f"t must be a finite number >= 0, got {t!r}")

"""Composed (time-changed) process models and the tabulated pmf container.

The four models share a common shape: an outer birth or death process whose
internal clock is advanced by an independent inner process (a Yule process or
a Poisson process).  Each model is a small frozen dataclass; ``ComposedModel``
is their union.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple, Union

from .params import _require_population, _require_rate


@dataclass(frozen=True)
class IteratedBirth:
    """Yule process evaluated at an independent Yule time: Z(t) = B_a(B_l(t)).

    Both the outer process (rate ``alpha``) and the inner process (rate
    ``lam``) start from a single progenitor, so the state lives on k >= 1.
    """

    alpha: float
    lam: float

    def __post_init__(self) -> None:
        _require_rate("alpha", self.alpha)
        _require_rate("lam", self.lam)


@dataclass(frozen=True)
class BirthAtPoisson:
    """Yule process evaluated at Poisson event counts: X(t) = B_a(N_l(t))."""

    alpha: float
    lam: float
    n0: int = 1

    def __post_init__(self) -> None:
        _require_rate("alpha", self.alpha)
        _require_rate("lam", self.lam)
        _require_population("n0", self.n0)


@dataclass(frozen=True)
class DeathAtPoisson:
    """Linear death process evaluated at Poisson event counts: Y(t) = D_m(N_l(t))."""

    mu: float
    lam: float
    n0: int

    def __post_init__(self) -> None:
        _require_rate("mu", self.mu)
        _require_rate("lam", self.lam)
        _require_population("n0", self.n0)


@dataclass(frozen=True)
class SublinearDeathAtPoisson:
    """Sublinear death process evaluated at Poisson event counts."""

    mu: float
    lam: float
    n0: int

    def __post_init__(self) -> None:
        _require_rate("mu", self.mu)
        _require_rate("lam", self.lam)
        _require_population("n0", self.n0)


ComposedModel = Union[IteratedBirth, BirthAtPoisson, DeathAtPoisson, SublinearDeathAtPoisson]

#: Mass-accounting tolerance for a tabulated pmf.
_TABLE_TOL = 1e-10


@dataclass(frozen=True)
class PmfTable:
    """A pmf evaluated on a contiguous range of states at a fixed time.

    ``entries`` holds (state, probability) pairs with strictly increasing
    states; ``truncation_mass`` is the analytic remainder beyond the last
    tabulated state, so that tabulated mass plus remainder accounts for 1.
    """

    t: float
    entries: Tuple[Tuple[int, float], ...]
    truncation_mass: float = 0.0

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("PmfTable requires at least one entry")
        states = [k for k, _ in self.entries]
        if any(b != a + 1 for a, b in zip(states, states[1:])):
            raise ValueError("PmfTable states must be contiguous and increasing")
        if any(prob < 0 for _, prob in self.entries):
            raise ValueError("PmfTable probabilities must be nonnegative")
        if self.truncation_mass < 0:
            raise ValueError("truncation_mass must be nonnegative")
        total = math.fsum(prob for _, prob in self.entries) + self.truncation_mass
        if abs(total - 1.0) > _TABLE_TOL:
            raise ValueError(f"PmfTable mass accounts for {total!r}, expected 1 within {_TABLE_TOL}")

    def support(self) -> Tuple[int, int]:
        """Smallest and largest tabulated state."""
        return self.entries[0][0], self.entries[-1][0]

    def prob(self, k: int) -> float:
        """Tabulated probability of state ``k`` (0.0 if outside the table)."""
        lo = self.entries[0][0]
        if lo <= k <= self.entries[-1][0]:
            return self.entries[k - lo][1]
        return 0.0

    def total_mass(self) -> float:
        """Tabulated mass (excludes ``truncation_mass``)."""
        return math.fsum(prob for _, prob in self.entries)

"""Closed-form laws of the base processes.

Covers the linear birth (Yule) process, the homogeneous Poisson process, the
linear death process and the sublinear death process, together with the small
combinatorial helpers (Stirling numbers of the second kind, Bell polynomials)
used by the verification suite.

All pmf kernels are evaluated through logarithms (log-gamma binomials), so
they stay finite for populations and levels up to about 1e4.  ``t == 0`` is
always handled by an exact branch, never as a numerical limit.
"""

from __future__ import annotations

import math
from functools import lru_cache

from .params import (
    DEFAULT_CONTROL,
    BirthParams,
    DeathParams,
    PoissonParams,
    SeriesControl,
    require_time,
)

#: Largest order accepted by :func:`stirling2` / :func:`bell_polynomial`.
#: The recurrence is exact in integer arithmetic; the cap merely keeps the
#: contract explicit (only small orders are ever needed by the checks).
STIRLING_MAX_N = 64


def log_binomial(n: int, k: int) -> float:
    """log C(n, k) via log-gamma; requires 0 <= k <= n."""
    if k < 0 or k > n:
        raise ValueError(f"binomial coefficient needs 0 <= k <= n, got n={n}, k={k}")
    if k == 0 or k == n:
        return 0.0
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def yule_pmf(p: BirthParams, t: float, k: int) -> float:
    """Pr{B(t) = k} for the Yule process started from ``p.n0`` individuals.

    Pr{B(t) = k} = C(k-1, k-n0) exp(-alpha t n0) (1 - exp(-alpha t))^(k-n0),
    supported on k >= n0 (negative binomial with k - n0 failures).
    """
    require_time(t)
    if not isinstance(k, int):
        raise ValueError(f"k must be an integer, got {k!r}")
    if k < p.n0:
        raise ValueError(f"Yule process never drops below n0={p.n0}, got k={k}")
    if t == 0:
        return 1.0 if k == p.n0 else 0.0
    log_p = (
        log_binomial(k - 1, k - p.n0)
        - p.alpha * t * p.n0
        + (k - p.n0) * math.log1p(-math.exp(-p.alpha * t))
    )
    return math.exp(log_p)


def poisson_pmf(p: PoissonParams, t: float, j: int) -> float:
    """Pr{N(t) = j} for a Poisson process with rate ``p.lam``."""
    require_time(t)
    if not isinstance(j, int) or j < 0:
        raise ValueError(f"j must be an integer >= 0, got {j!r}")
    if t == 0:
        return 1.0 if j == 0 else 0.0
    rate = p.lam * t
    return math.exp(j * math.log(rate) - rate - math.lgamma(j + 1))


def poisson_cutoff(p: PoissonParams, t: float, ctl: SeriesControl = DEFAULT_CONTROL) -> int:
    """Smallest index past the mode after which Poisson terms stay below ``abs_tol``.

    Conditioning series over the number of events are truncated at this index;
    the discarded mass is below ``abs_tol`` times the number of extra terms
    that a caller would have summed.
    """
    require_time(t)
    mean = p.lam * t
    j = int(mean) + 1
    while j < ctl.max_terms:
        if poisson_pmf(p, t, j) < ctl.abs_tol:
            return j
        j += 1
    return ctl.max_terms


def linear_death_pmf(p: DeathParams, t: float, k: int) -> float:
    """Pr{D(t) = k} for the linear death process: binomial thinning of ``n0``.

    Pr{D(t) = k} = C(n0, k) exp(-mu t k) (1 - exp(-mu t))^(n0-k), 0 <= k <= n0.
    """
    require_time(t)
    if not isinstance(k, int):
        raise ValueError(f"k must be an integer, got {k!r}")
    if k < 0 or k > p.n0:
        raise ValueError(f"linear death state must lie in [0, n0={p.n0}], got k={k}")
    if t == 0:
        return 1.0 if k == p.n0 else 0.0
    log_p = (
        log_binomial(p.n0, k)
        - p.mu * t * k
        + (p.n0 - k) * math.log1p(-math.exp(-p.mu * t))
    )
    return math.exp(log_p)


def sublinear_death_pmf(p: DeathParams, t: float, k: int) -> float:
    """Pr{D~(t) = k} for the sublinear death process.

    The j-th death (counted from 1) occurs at rate mu*j, independently of the
    population size, until the population is exhausted:

        Pr{D~(t) = k} = exp(-mu t) (1 - exp(-mu t))^(n0-k)   for 1 <= k <= n0,
        Pr{D~(t) = 0} = (1 - exp(-mu t))^n0.
    """
    require_time(t)
    if not isinstance(k, int):
        raise ValueError(f"k must be an integer, got {k!r}")
    if k < 0 or k > p.n0:
        raise ValueError(f"sublinear death state must lie in [0, n0={p.n0}], got k={k}")
    if t == 0:
        return 1.0 if k == p.n0 else 0.0
    log_decay = math.log1p(-math.exp(-p.mu * t))  # log(1 - e^{-mu t})
    if k == 0:
        return math.exp(p.n0 * log_decay)
    return math.exp(-p.mu * t + (p.n0 - k) * log_decay)


def death_pgf(p: DeathParams, t: float, u: float) -> float:
    """Probability generating function of the linear death process.

    E u^{D(t)} = (1 - exp(-mu t) (1 - u))^{n0}.
    """
    require_time(t)
    return (1.0 - math.exp(-p.mu * t) * (1.0 - u)) ** p.n0


def sublinear_death_mean(p: DeathParams, t: float) -> float:
    """E D~(t) = n0 + 1 - e^{mu t} [1 - (1 - e^{-mu t})^{n0+1}].

    Evaluated through the algebraically identical positive sum
    sum_{i=1}^{n0} (1 - (1 - e^{-mu t})^i), which avoids forming e^{mu t}
    and remains stable for arbitrarily large mu*t.
    """
    require_time(t)
    if t == 0:
        return float(p.n0)
    decay = -math.expm1(-p.mu * t)  # 1 - e^{-mu t}, in (0, 1)
    total = 0.0
    power = 1.0
    for _ in range(p.n0):
        power *= decay
        total += 1.0 - power
    return total


@lru_cache(maxsize=None)
def stirling2(n: int, k: int) -> int:
    """Stirling number of the second kind S(n, k), exact integer arithmetic.

    S(n, k) = k S(n-1, k) + S(n-1, k-1), S(0, 0) = 1.
    """
    if not (isinstance(n, int) and isinstance(k, int)):
        raise ValueError("stirling2 requires integer arguments")
    if n < 0 or k < 0:
        raise ValueError(f"stirling2 requires n, k >= 0, got n={n}, k={k}")
    if n > STIRLING_MAX_N:
        raise ValueError(f"stirling2 supports n <= {STIRLING_MAX_N}, got n={n}")
    if n == 0:
        return 1 if k == 0 else 0
    if k == 0 or k > n:
        return 0
    return k * stirling2(n - 1, k) + stirling2(n - 1, k - 1)


def bell_polynomial(n: int, x: float) -> float:
    """Bell polynomial B_n(x) = sum_k S(n, k) x^k (B_n(1) is the Bell number)."""
    if not isinstance(n, int) or n < 0:
        raise ValueError(f"bell_polynomial requires an integer n >= 0, got {n!r}")
    if n == 0:
        return 1.0
    return math.fsum(stirling2(n, k) * float(x) ** k for k in range(1, n + 1))

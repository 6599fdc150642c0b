"""State probabilities and moments of the four time-changed processes.

Each law has two evaluation routes:

* a *finite* alternating sum obtained by expanding the inner binomial and
  summing the randomised time in closed form, and
* a positive-term *conditioning series* over the value of the inner process.

The finite sums are exact but can cancel catastrophically when the binomial
coefficients outgrow the result; every alternating sum is therefore evaluated
with exact compensated summation while tracking the largest term, and the
evaluation switches to the conditioning series (with a warning) whenever
largest-term / result exceeds ``ILL_CONDITION_RATIO``.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Iterable, List, Tuple

import numpy as np
from scipy.special import gammaln

from .errors import CancellationWarning, ExponentOverflowError, SeriesConvergenceError
from .laws import (
    linear_death_pmf,
    log_binomial,
    poisson_cutoff,
    poisson_pmf,
    sublinear_death_mean,
    sublinear_death_pmf,
    yule_pmf,
)
from .models import (
    BirthAtPoisson,
    ComposedModel,
    DeathAtPoisson,
    IteratedBirth,
    PmfTable,
    SublinearDeathAtPoisson,
)
from .params import DEFAULT_CONTROL, BirthParams, DeathParams, PoissonParams, SeriesControl, require_time

#: Largest-term / result ratio beyond which an alternating sum is distrusted.
ILL_CONDITION_RATIO = 1e6

#: Exponent arguments above this raise instead of overflowing to inf.
EXP_ARG_MAX = 700.0

#: Hard cap on the number of states enumerated into a PmfTable.
TABLE_STATE_CAP = 10**5


def checked_exp(x: float) -> float:
    """exp(x), raising :class:`ExponentOverflowError` for x > 700."""
    if x > EXP_ARG_MAX:
        raise ExponentOverflowError(f"exp argument {x!r} exceeds {EXP_ARG_MAX}")
    return math.exp(x)


def _compensated(terms: Iterable[float]) -> Tuple[float, float]:
    """Exact sum of ``terms`` together with the largest absolute term."""
    terms = list(terms)
    largest = max((abs(x) for x in terms), default=0.0)
    return math.fsum(terms), largest


def _ill_conditioned(value: float, largest: float) -> bool:
    if largest == 0.0:
        return False
    if value == 0.0:
        return True
    return largest / abs(value) > ILL_CONDITION_RATIO


def _sum_unimodal(term_at: Callable[[int], float], ctl: SeriesControl, start: int) -> Tuple[float, int]:
    """Sum a nonnegative series whose terms rise to a single peak and decay.

    Stops once two consecutive non-increasing terms fall below
    ``ctl.abs_tol`` times the running sum (leading zero terms before the
    peak do not trigger the stop).
    """
    total = 0.0
    prev = math.inf
    small_run = 0
    used = 0
    for j in range(start, start + ctl.max_terms):
        term = term_at(j)
        total += term
        used += 1
        if total > 0.0 and term <= prev and term <= ctl.abs_tol * total:
            small_run += 1
            if small_run >= 2:
                return total, used
        else:
            small_run = 0
        prev = term
    raise SeriesConvergenceError(f"series did not converge within {ctl.max_terms} terms")


# ---------------------------------------------------------------------------
# Iterated birth process Z(t) = B_alpha(B_lam(t)), one progenitor each.
# ---------------------------------------------------------------------------

def _iterated_birth_pmf_finite(m: IteratedBirth, t: float, k: int) -> Tuple[float, float]:
    """Finite alternating sum over l = 0..k-1.

    q_k(t) = e^{-lam t - alpha} sum_l C(k-1, l) (-e^{-alpha})^l
             / (1 - e^{-alpha (l+1)} (1 - e^{-lam t})).
    """
    ea = math.exp(-m.alpha)
    growth = -math.expm1(-m.lam * t)  # 1 - e^{-lam t}
    front = math.exp(-m.lam * t - m.alpha)
    terms = []
    sign = 1.0
    coeff = 1.0  # C(k-1, l) * e^{-alpha l}, updated multiplicatively
    for l in range(k):
        denom = 1.0 - ea ** (l + 1) * growth
        terms.append(sign * front * coeff / denom)
        sign = -sign
        coeff *= ea * (k - 1 - l) / (l + 1)
    return _compensated(terms)


def _iterated_birth_pmf_series(m: IteratedBirth, t: float, k: int, ctl: SeriesControl) -> Tuple[float, int]:
    """Condition on the inner state j >= 1 (geometric weights)."""
    log_growth = math.log1p(-math.exp(-m.lam * t)) if t > 0 else -math.inf

    def term(j: int) -> float:
        if t == 0:
            weight = 1.0 if j == 1 else 0.0
        else:
            weight = math.exp(-m.lam * t + (j - 1) * log_growth)
        if weight == 0.0:
            return 0.0
        return weight * yule_pmf(BirthParams(m.alpha, 1), float(j), k)

    return _sum_unimodal(term, ctl, start=1)


def iterated_birth_pmf(
    m: IteratedBirth,
    t: float,
    k: int,
    ctl: SeriesControl = DEFAULT_CONTROL,
    form: str = "auto",
) -> float:
    """Pr{Z(t) = k} for the iterated birth process, k >= 1."""
    require_time(t)
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"iterated birth state must be an integer >= 1, got {k!r}")
    if form == "finite":
        return _iterated_birth_pmf_finite(m, t, k)[0]
    if form == "series":
        return _iterated_birth_pmf_series(m, t, k, ctl)[0]
    if form != "auto":
        raise ValueError(f"unknown form {form!r}")
    if k <= 40:
        value, largest = _iterated_birth_pmf_finite(m, t, k)
        if not _ill_conditioned(value, largest):
            return value
        warnings.warn(
            f"iterated birth pmf at k={k} is ill-conditioned; using conditioning series",
            CancellationWarning,
            stacklevel=2,
        )
    return _iterated_birth_pmf_series(m, t, k, ctl)[0]


# ---------------------------------------------------------------------------
# Birth at Poisson times X(t) = B_alpha(N_lam(t)), started from n0.
# ---------------------------------------------------------------------------

def _birth_at_poisson_pmf_finite(m: BirthAtPoisson, t: float, k: int) -> Tuple[float, float]:
    """q_k(t) = C(k-1, k-n0) sum_l C(k-n0, l) (-1)^l e^{-lam t (1 - e^{-alpha (n0+l)})}."""
    front = math.exp(log_binomial(k - 1, k - m.n0))
    rate = m.lam * t
    terms = []
    sign = 1.0
    coeff = 1.0  # C(k-n0, l), updated multiplicatively
    for l in range(k - m.n0 + 1):
        decay = -math.expm1(-m.alpha * (m.n0 + l))  # 1 - e^{-alpha (n0+l)}
        terms.append(sign * front * coeff * math.exp(-rate * decay))
        sign = -sign
        coeff *= (k - m.n0 - l) / (l + 1)
    return _compensated(terms)


def _birth_at_poisson_pmf_series(m: BirthAtPoisson, t: float, k: int, ctl: SeriesControl) -> Tuple[float, int]:
    """Condition on the Poisson count j >= 0."""
    pois = PoissonParams(m.lam)
    birth = BirthParams(m.alpha, m.n0)

    def term(j: int) -> float:
        weight = poisson_pmf(pois, t, j)
        if weight == 0.0:
            return 0.0
        return weight * yule_pmf(birth, float(j), k)

    return _sum_unimodal(term, ctl, start=0)


def birth_at_poisson_pmf(
    m: BirthAtPoisson,
    t: float,
    k: int,
    ctl: SeriesControl = DEFAULT_CONTROL,
    form: str = "auto",
) -> float:
    """Pr{X(t) = k} for the Yule process at Poisson event counts, k >= n0."""
    require_time(t)
    if not isinstance(k, int) or k < m.n0:
        raise ValueError(f"birth-at-Poisson state must be an integer >= n0={m.n0}, got {k!r}")
    if form == "finite":
        return _birth_at_poisson_pmf_finite(m, t, k)[0]
    if form == "series":
        return _birth_at_poisson_pmf_series(m, t, k, ctl)[0]
    if form != "auto":
        raise ValueError(f"unknown form {form!r}")
    if k - m.n0 <= 40:
        value, largest = _birth_at_poisson_pmf_finite(m, t, k)
        if not _ill_conditioned(value, largest):
            return value
        warnings.warn(
            f"birth-at-Poisson pmf at k={k} is ill-conditioned; using conditioning series",
            CancellationWarning,
            stacklevel=2,
        )
    return _birth_at_poisson_pmf_series(m, t, k, ctl)[0]


def birth_at_poisson_mean(m: BirthAtPoisson, t: float) -> float:
    """E X(t) = n0 exp(lam t (e^alpha - 1))."""
    require_time(t)
    if m.alpha > EXP_ARG_MAX:
        raise ExponentOverflowError(f"alpha={m.alpha!r} exceeds {EXP_ARG_MAX}")
    return m.n0 * checked_exp(m.lam * t * math.expm1(m.alpha))


def birth_at_poisson_variance(m: BirthAtPoisson, t: float) -> float:
    """Var X(t) by total variance over the Poisson count.

    = n0 (n0+1) e^{lam t (e^{2 alpha} - 1)} - n0^2 e^{2 lam t (e^alpha - 1)}
      - n0 e^{lam t (e^alpha - 1)}.
    """
    require_time(t)
    if 2.0 * m.alpha > EXP_ARG_MAX:
        raise ExponentOverflowError(f"alpha={m.alpha!r} exceeds {EXP_ARG_MAX / 2}")
    rate = m.lam * t
    a1 = rate * math.expm1(m.alpha)
    a2 = rate * math.expm1(2.0 * m.alpha)
    checked_exp(max(a2, 2.0 * a1))
    e1 = math.exp(a1)
    e2 = math.exp(a2)
    value, _ = _compensated(
        [m.n0 * (m.n0 + 1) * e2, -(m.n0**2) * e1 * e1, -m.n0 * e1]
    )
    return value


def birth_at_poisson_factorial_moment(m: BirthAtPoisson, t: float, r: int) -> float:
    """r-th factorial moment E[X(X-1)...(X-r+1)] for a single progenitor.

    = r! sum_{i=0}^{r-1} C(r-1, i) (-1)^i exp(lam t (e^{alpha (r-i)} - 1)).
    """
    require_time(t)
    if m.n0 != 1:
        raise ValueError("factorial moments are implemented for n0 = 1 only")
    if not isinstance(r, int) or r < 1:
        raise ValueError(f"moment order must be an integer >= 1, got {r!r}")
    rate = m.lam * t
    terms = []
    sign = 1.0
    coeff = 1.0  # C(r-1, i)
    for i in range(r):
        arg = rate * math.expm1(m.alpha * (r - i))
        terms.append(sign * coeff * checked_exp(arg))
        sign = -sign
        coeff *= (r - 1 - i) / (i + 1)
    value, _ = _compensated(terms)
    return math.factorial(r) * value


# ---------------------------------------------------------------------------
# Linear death at Poisson times Y(t) = D_mu(N_lam(t)), started from n0.
# ---------------------------------------------------------------------------

def _death_at_poisson_pmf_finite(m: DeathAtPoisson, t: float, k: int) -> Tuple[float, float]:
    """q_k(t) = C(n0, k) sum_j C(n0-k, j) (-1)^j e^{-lam t (1 - e^{-mu (k+j)})}."""
    front = math.exp(log_binomial(m.n0, k))
    rate = m.lam * t
    terms = []
    sign = 1.0
    coeff = 1.0  # C(n0-k, j)
    for j in range(m.n0 - k + 1):
        decay = -math.expm1(-m.mu * (k + j))
        terms.append(sign * front * coeff * math.exp(-rate * decay))
        sign = -sign
        coeff *= (m.n0 - k - j) / (j + 1)
    return _compensated(terms)


def _death_at_poisson_pmf_series(m: DeathAtPoisson, t: float, k: int, ctl: SeriesControl) -> Tuple[float, int]:
    pois = PoissonParams(m.lam)
    death = DeathParams(m.mu, m.n0)

    def term(j: int) -> float:
        weight = poisson_pmf(pois, t, j)
        if weight == 0.0:
            return 0.0
        return weight * linear_death_pmf(death, float(j), k)

    return _sum_unimodal(term, ctl, start=0)


def death_at_poisson_pmf(
    m: DeathAtPoisson,
    t: float,
    k: int,
    ctl: SeriesControl = DEFAULT_CONTROL,
    form: str = "auto",
) -> float:
    """Pr{Y(t) = k} for the linear death process at Poisson event counts."""
    require_time(t)
    if not isinstance(k, int) or k < 0 or k > m.n0:
        raise ValueError(f"death-at-Poisson state must lie in [0, n0={m.n0}], got {k!r}")
    if form == "finite":
        return _death_at_poisson_pmf_finite(m, t, k)[0]
    if form == "series":
        return _death_at_poisson_pmf_series(m, t, k, ctl)[0]
    if form != "auto":
        raise ValueError(f"unknown form {form!r}")
    if m.n0 - k <= 40:
        value, largest = _death_at_poisson_pmf_finite(m, t, k)
        if not _ill_conditioned(value, largest):
            return value
        warnings.warn(
            f"death-at-Poisson pmf at k={k} is ill-conditioned; using conditioning series",
            CancellationWarning,
            stacklevel=2,
        )
    return _death_at_poisson_pmf_series(m, t, k, ctl)[0]


def death_at_poisson_pgf(
    m: DeathAtPoisson,
    t: float,
    u: float,
    ctl: SeriesControl = DEFAULT_CONTROL,
) -> float:
    """E u^{Y(t)} = sum_m C(n0, m) (-(1-u))^m e^{-lam t (1 - e^{-mu m})}, 0 <= u <= 1."""
    require_time(t)
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"pgf argument must lie in [0, 1], got {u!r}")
    rate = m.lam * t
    terms = []
    coeff = 1.0  # C(n0, m) (u-1)^m, updated multiplicatively
    for i in range(m.n0 + 1):
        decay = -math.expm1(-m.mu * i)
        terms.append(coeff * math.exp(-rate * decay))
        coeff *= (u - 1.0) * (m.n0 - i) / (i + 1)
    value, largest = _compensated(terms)
    if not _ill_conditioned(value, largest):
        return value
    warnings.warn(
        "death-at-Poisson pgf is ill-conditioned; using conditioning series",
        CancellationWarning,
        stacklevel=2,
    )
    pois = PoissonParams(m.lam)
    death = DeathParams(m.mu, m.n0)

    def term(j: int) -> float:
        weight = poisson_pmf(pois, t, j)
        if weight == 0.0:
            return 0.0
        return weight * ((1.0 - math.exp(-m.mu * j) * (1.0 - u)) ** m.n0)

    return _sum_unimodal(term, ctl, start=0)[0]


def death_at_poisson_mean(m: DeathAtPoisson, t: float) -> float:
    """E Y(t) = n0 exp(-lam t (1 - e^{-mu}))."""
    require_time(t)
    return m.n0 * math.exp(m.lam * t * math.expm1(-m.mu))


def death_at_poisson_variance(m: DeathAtPoisson, t: float) -> float:
    """Var Y(t) by total variance over the Poisson count.

    = n0 (n0-1) e^{lam t (e^{-2 mu} - 1)} - n0^2 e^{2 lam t (e^{-mu} - 1)}
      + n0 e^{lam t (e^{-mu} - 1)}.
    """
    require_time(t)
    rate = m.lam * t
    e1 = math.exp(rate * math.expm1(-m.mu))
    e2 = math.exp(rate * math.expm1(-2.0 * m.mu))
    value, _ = _compensated(
        [m.n0 * (m.n0 - 1) * e2, -(m.n0**2) * e1 * e1, m.n0 * e1]
    )
    return value


# ---------------------------------------------------------------------------
# Sublinear death at Poisson times, started from n0.
# ---------------------------------------------------------------------------

def _sublinear_pmf_finite(m: SublinearDeathAtPoisson, t: float, k: int) -> Tuple[float, float]:
    """Finite alternating sums for the sublinear death law at Poisson counts.

    k >= 1:  q_k = sum_j C(n0-k, j) (-1)^j e^{-lam t (1 - e^{-mu (1+j)})}
    k == 0:  q_0 = sum_j C(n0, j)   (-1)^j e^{-lam t (1 - e^{-mu j})}
    """
    rate = m.lam * t
    terms = []
    sign = 1.0
    coeff = 1.0
    if k == 0:
        for j in range(m.n0 + 1):
            decay = -math.expm1(-m.mu * j)
            terms.append(sign * coeff * math.exp(-rate * decay))
            sign = -sign
            coeff *= (m.n0 - j) / (j + 1)
    else:
        for j in range(m.n0 - k + 1):
            decay = -math.expm1(-m.mu * (1 + j))
            terms.append(sign * coeff * math.exp(-rate * decay))
            sign = -sign
            coeff *= (m.n0 - k - j) / (j + 1)
    return _compensated(terms)


def _sublinear_pmf_series(m: SublinearDeathAtPoisson, t: float, k: int, ctl: SeriesControl) -> Tuple[float, int]:
    pois = PoissonParams(m.lam)
    death = DeathParams(m.mu, m.n0)

    def term(j: int) -> float:
        weight = poisson_pmf(pois, t, j)
        if weight == 0.0:
            return 0.0
        return weight * sublinear_death_pmf(death, float(j), k)

    return _sum_unimodal(term, ctl, start=0)


def sublinear_death_at_poisson_pmf(
    m: SublinearDeathAtPoisson,
    t: float,
    k: int,
    ctl: SeriesControl = DEFAULT_CONTROL,
    form: str = "auto",
) -> float:
    """Pr{Y~(t) = k} for the sublinear death process at Poisson event counts."""
    require_time(t)
    if not isinstance(k, int) or k < 0 or k > m.n0:
        raise ValueError(f"sublinear death state must lie in [0, n0={m.n0}], got {k!r}")
    if form == "finite":
        return _sublinear_pmf_finite(m, t, k)[0]
    if form == "series":
        return _sublinear_pmf_series(m, t, k, ctl)[0]
    if form != "auto":
        raise ValueError(f"unknown form {form!r}")
    span = m.n0 if k == 0 else m.n0 - k
    if span <= 40:
        value, largest = _sublinear_pmf_finite(m, t, k)
        if not _ill_conditioned(value, largest):
            return value
        warnings.warn(
            f"sublinear death pmf at k={k} is ill-conditioned; using conditioning series",
            CancellationWarning,
            stacklevel=2,
        )
    return _sublinear_pmf_series(m, t, k, ctl)[0]


def sublinear_death_at_poisson_mean(
    m: SublinearDeathAtPoisson,
    t: float,
    ctl: SeriesControl = DEFAULT_CONTROL,
) -> float:
    """E Y~(t), by conditioning on the Poisson count.

    Each conditional mean lies in [0, n0], so the series is truncated at the
    Poisson tail cutoff with error below n0 times the discarded mass.
    """
    require_time(t)
    pois = PoissonParams(m.lam)
    death = DeathParams(m.mu, m.n0)
    cutoff = poisson_cutoff(pois, t, ctl)
    return math.fsum(
        poisson_pmf(pois, t, j) * sublinear_death_mean(death, float(j))
        for j in range(cutoff + 1)
    )


def sublinear_death_mean_upper_bound(m: SublinearDeathAtPoisson, t: float) -> float:
    """Upper bound n0 - (1 - e^{-lam t (1 - e^{-mu})}) for E Y~(t)."""
    require_time(t)
    return m.n0 + math.exp(m.lam * t * math.expm1(-m.mu)) - 1.0


# ---------------------------------------------------------------------------
# Tabulated pmfs.
# ---------------------------------------------------------------------------

def _table_finite_support(model: ComposedModel, t: float, ctl: SeriesControl) -> PmfTable:
    if isinstance(model, DeathAtPoisson):
        probs = [death_at_poisson_pmf(model, t, k, ctl) for k in range(model.n0 + 1)]
    else:
        probs = [sublinear_death_at_poisson_pmf(model, t, k, ctl) for k in range(model.n0 + 1)]
    entries = tuple((k, p) for k, p in enumerate(probs))
    return PmfTable(t=t, entries=entries, truncation_mass=0.0)


def _table_unbounded(
    t: float,
    ctl: SeriesControl,
    k_start: int,
    block_probs: Callable[[np.ndarray], np.ndarray],
) -> PmfTable:
    """Enumerate states upward until mass 1 - rel_tol is reached (capped)."""
    block = 4096
    entries: List[Tuple[int, float]] = []
    partial: List[float] = []
    k_lo = k_start
    while True:
        k_hi = min(k_lo + block, k_start + TABLE_STATE_CAP)
        kvec = np.arange(k_lo, k_hi, dtype=np.int64)
        probs = block_probs(kvec)
        for k, p in zip(kvec.tolist(), probs.tolist()):
            entries.append((int(k), float(p)))
            partial.append(float(p))
            if 1.0 - math.fsum(partial) <= ctl.rel_tol:
                mass = math.fsum(partial)
                return PmfTable(t=t, entries=tuple(entries), truncation_mass=max(0.0, 1.0 - mass))
        if k_hi >= k_start + TABLE_STATE_CAP:
            mass = math.fsum(partial)
            return PmfTable(t=t, entries=tuple(entries), truncation_mass=max(0.0, 1.0 - mass))
        k_lo = k_hi


def _iterated_birth_block(m: IteratedBirth, t: float, ctl: SeriesControl) -> Callable[[np.ndarray], np.ndarray]:
    log_growth = math.log1p(-math.exp(-m.lam * t)) if t > 0 else -math.inf

    def block_probs(kvec: np.ndarray) -> np.ndarray:
        out = np.zeros(len(kvec))
        k_max = float(kvec[-1])
        peak = math.log(max(k_max, 2.0)) / m.alpha
        quiet = 0
        for j in range(1, ctl.max_terms):
            if t == 0:
                weight = 1.0 if j == 1 else 0.0
            else:
                weight = math.exp(-m.lam * t + (j - 1) * log_growth)
            inner = math.exp(-m.alpha * j)
            contrib = weight * np.exp(-m.alpha * j + (kvec - 1) * math.log1p(-inner))
            out += contrib
            top = float(contrib.max(initial=0.0)) if len(contrib) else 0.0
            if top < 1e-18 and j > peak:
                quiet += 1
                if quiet >= 3:
                    return out
            else:
                quiet = 0
        raise SeriesConvergenceError("iterated birth table did not converge")

    return block_probs


def _birth_at_poisson_block(m: BirthAtPoisson, t: float, ctl: SeriesControl) -> Callable[[np.ndarray], np.ndarray]:
    pois = PoissonParams(m.lam)
    cutoff = poisson_cutoff(pois, t, ctl)

    def block_probs(kvec: np.ndarray) -> np.ndarray:
        out = np.zeros(len(kvec))
        log_choose = gammaln(kvec) - gammaln(kvec - m.n0 + 1) - gammaln(m.n0)
        for j in range(cutoff + 1):
            weight = poisson_pmf(pois, t, j)
            if weight == 0.0:
                continue
            if j == 0:
                out[kvec == m.n0] += weight
                continue
            inner = math.exp(-m.alpha * j)
            out += weight * np.exp(
                log_choose - m.alpha * j * m.n0 + (kvec - m.n0) * math.log1p(-inner)
            )
        return out

    return block_probs


def pmf_table(model: ComposedModel, t: float, ctl: SeriesControl = DEFAULT_CONTROL) -> PmfTable:
    """Tabulate the pmf of a composed model at time ``t``.

    Finite-support models (the two death models) are tabulated on 0..n0.
    Unbounded models are enumerated from the support floor upward until the
    cumulative mass reaches 1 - ``ctl.rel_tol``, capped at 1e5 states; the
    remainder is reported as ``truncation_mass``.
    """
    require_time(t)
    if isinstance(model, (DeathAtPoisson, SublinearDeathAtPoisson)):
        return _table_finite_support(model, t, ctl)
    if isinstance(model, IteratedBirth):
        return _table_unbounded(t, ctl, 1, _iterated_birth_block(model, t, ctl))
    if isinstance(model, BirthAtPoisson):
        return _table_unbounded(t, ctl, model.n0, _birth_at_poisson_block(model, t, ctl))
    raise TypeError(f"unsupported model {model!r}")

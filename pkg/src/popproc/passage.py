"""First-passage densities, hitting probabilities and downcrossing laws.

For the growing models a level is *hit* only when a jump lands exactly on it;
jumps may overshoot, so hitting probabilities are strictly below one.  They do
not depend on the rate of the inner process, which therefore never appears in
the hitting-probability signatures.  For the monotone death models the
first-passage laws are proper (total mass one), and the sublinear model gets a
*downcrossing* law (first time at or below a level) instead of an exact-hit
law.

Every hitting probability is available through two routes: a positive-term
series over the inner time (authoritative) and a finite alternating sum.  The
result records which route produced it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from scipy.integrate import quad

from .composed import (
    _compensated,
    _ill_conditioned,
    _sum_unimodal,
    sublinear_death_at_poisson_pmf,
)
from .errors import CancellationWarning
from .laws import log_binomial
from .models import (
    BirthAtPoisson,
    ComposedModel,
    DeathAtPoisson,
    IteratedBirth,
    SublinearDeathAtPoisson,
)
from .params import DEFAULT_CONTROL, SeriesControl, require_time


@dataclass(frozen=True)
class HitProbResult:
    """A hitting probability together with how it was computed.

    ``method`` is "series" or "finite_sum"; ``terms_used`` counts the terms
    actually summed by that route.
    """

    k: int
    prob: float
    method: str
    terms_used: int


@dataclass(frozen=True)
class FptQuery:
    """A validated (model, level) passage-time query."""

    model: ComposedModel
    level: int

    def __post_init__(self) -> None:
        validate_level(self.model, self.level)


def validate_level(model: ComposedModel, k: int) -> None:
    """Check that level ``k`` is admissible for first-passage questions."""
    if not isinstance(k, int):
        raise ValueError(f"level must be an integer, got {k!r}")
    if isinstance(model, IteratedBirth):
        if k < 2:
            raise ValueError(f"iterated birth levels start at 2, got k={k}")
    elif isinstance(model, BirthAtPoisson):
        if model.n0 != 1:
            raise ValueError("birth-at-Poisson passage laws require n0 = 1")
        if k < 2:
            raise ValueError(f"birth-at-Poisson levels start at 2, got k={k}")
    elif isinstance(model, (DeathAtPoisson, SublinearDeathAtPoisson)):
        if not (0 <= k <= model.n0 - 1):
            raise ValueError(f"death levels lie in [0, n0-1={model.n0 - 1}], got k={k}")
    else:
        raise TypeError(f"unsupported model {model!r}")


# ---------------------------------------------------------------------------
# Iterated birth process.
# ---------------------------------------------------------------------------

def _growth_bracket(alpha: float, k: int, j: int) -> float:
    """e^{-a} (1 - e^{-a (j+1)})^{k-1} - e^{-a k} (1 - e^{-a j})^{k-1} (> 0)."""
    first = math.exp(-alpha + (k - 1) * math.log1p(-math.exp(-alpha * (j + 1))))
    if j == 0:
        return first
    second = math.exp(-alpha * k + (k - 1) * math.log1p(-math.exp(-alpha * j)))
    return first - second


def iterated_birth_fpt_density(
    m: IteratedBirth, k: int, t: float, ctl: SeriesControl = DEFAULT_CONTROL
) -> float:
    """Density of the first passage of the iterated birth process through k >= 2.

    f_k(t) = lam e^{-lam t} sum_{j>=1} j e^{-a j} (1 - e^{-lam t})^{j-1}
             [e^{-a} (1 - e^{-a (j+1)})^{k-1} - e^{-a k} (1 - e^{-a j})^{k-1}]
    """
    validate_level(m, k)
    require_time(t)
    growth = -math.expm1(-m.lam * t)  # 1 - e^{-lam t}

    def term(j: int) -> float:
        return j * math.exp(-m.alpha * j) * growth ** (j - 1) * _growth_bracket(m.alpha, k, j)

    total, _ = _sum_unimodal(term, ctl, start=1)
    return m.lam * math.exp(-m.lam * t) * total


def iterated_birth_hitprob(
    alpha: float,
    k: int,
    ctl: SeriesControl = DEFAULT_CONTROL,
    form: str = "auto",
) -> HitProbResult:
    """Probability that the iterated birth process ever lands on level k >= 2.

    Series route: sum_{j>=1} e^{-a j} [e^{-a} (1 - e^{-a (j+1)})^{k-1}
    - e^{-a k} (1 - e^{-a j})^{k-1}].  Finite route: alternating sum over
    r = 0..k-2 with terms C(k-1, r) (-1)^r e^{-a (r+1)}
    (e^{-a (r+1)} - e^{-a k}) / (1 - e^{-a (r+1)}).
    """
    if not (alpha > 0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive and finite, got {alpha!r}")
    if not isinstance(k, int) or k < 2:
        raise ValueError(f"iterated birth levels start at 2, got k={k!r}")

    def series() -> HitProbResult:
        def term(j: int) -> float:
            return math.exp(-alpha * j) * _growth_bracket(alpha, k, j)

        total, used = _sum_unimodal(term, ctl, start=1)
        return HitProbResult(k=k, prob=total, method="series", terms_used=used)

    def finite() -> tuple:
        ea = math.exp(-alpha)
        eak = math.exp(-alpha * k)
        terms = []
        sign = 1.0
        coeff = 1.0  # C(k-1, r)
        for r in range(k - 1):
            head = ea ** (r + 1)
            terms.append(sign * coeff * head * (head - eak) / (1.0 - head))
            sign = -sign
            coeff *= (k - 1 - r) / (r + 1)
        value, largest = _compensated(terms)
        return value, largest, len(terms)

    if form == "series":
        return series()
    if form == "finite_sum":
        value, _, used = finite()
        return HitProbResult(k=k, prob=value, method="finite_sum", terms_used=used)
    if form != "auto":
        raise ValueError(f"unknown form {form!r}")
    if k <= 40:
        value, largest, used = finite()
        if not _ill_conditioned(value, largest):
            return HitProbResult(k=k, prob=value, method="finite_sum", terms_used=used)
        warnings.warn(
            f"iterated birth hitting probability at k={k} is ill-conditioned; using series",
            CancellationWarning,
            stacklevel=2,
        )
    return series()


def hitprob_partial_sum(
    alpha: float, k_max: int, ctl: SeriesControl = DEFAULT_CONTROL
) -> float:
    """sum_{k=2}^{k_max} of the iterated-birth hitting probabilities.

    Grows without bound in k_max: doubling the range adds about ln(2)/alpha.
    """
    if not isinstance(k_max, int) or k_max < 2:
        raise ValueError(f"k_max must be an integer >= 2, got {k_max!r}")
    return math.fsum(
        iterated_birth_hitprob(alpha, k, ctl, form="series").prob for k in range(2, k_max + 1)
    )


# ---------------------------------------------------------------------------
# Birth at Poisson times (one progenitor).
# ---------------------------------------------------------------------------

def yule_level_occupation(alpha: float, k: int, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Expected number of integer times m >= 1 at which a Yule chain sits at k.

    g_k = sum_{m>=1} e^{-a m} (1 - e^{-a m})^{k-1} for a single progenitor.
    The hitting probability through level k is (1 - e^{-a k}) g_k.
    """
    if not (alpha > 0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive and finite, got {alpha!r}")
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"k must be an integer >= 1, got {k!r}")

    def term(j: int) -> float:
        return math.exp(-alpha * j + (k - 1) * math.log1p(-math.exp(-alpha * j)))

    total, _ = _sum_unimodal(term, ctl, start=1)
    return total


def birth_at_poisson_hitprob(
    alpha: float,
    k: int,
    ctl: SeriesControl = DEFAULT_CONTROL,
    form: str = "auto",
) -> HitProbResult:
    """Probability that the Poisson-sampled Yule process ever lands on k >= 2.

    Series route: (1 - e^{-a k}) sum_{m>=1} e^{-a m} (1 - e^{-a m})^{k-1}.
    Finite route: sum_{l=0}^{k-2} (-1)^l C(k-1, l)
    (e^{-a (l+1)} - e^{-a k}) / (1 - e^{-a (l+1)}).
    """
    if not (alpha > 0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive and finite, got {alpha!r}")
    if not isinstance(k, int) or k < 2:
        raise ValueError(f"birth-at-Poisson levels start at 2, got k={k!r}")

    def series() -> HitProbResult:
        def term(j: int) -> float:
            return math.exp(-alpha * j + (k - 1) * math.log1p(-math.exp(-alpha * j)))

        total, used = _sum_unimodal(term, ctl, start=1)
        return HitProbResult(
            k=k, prob=-math.expm1(-alpha * k) * total, method="series", terms_used=used
        )

    def finite() -> tuple:
        ea = math.exp(-alpha)
        eak = math.exp(-alpha * k)
        terms = []
        sign = 1.0
        coeff = 1.0  # C(k-1, l)
        for l in range(k - 1):
            head = ea ** (l + 1)
            terms.append(sign * coeff * (head - eak) / (1.0 - head))
            sign = -sign
            coeff *= (k - 1 - l) / (l + 1)
        value, largest = _compensated(terms)
        return value, largest, len(terms)

    if form == "series":
        return series()
    if form == "finite_sum":
        value, _, used = finite()
        return HitProbResult(k=k, prob=value, method="finite_sum", terms_used=used)
    if form != "auto":
        raise ValueError(f"unknown form {form!r}")
    if k <= 40:
        value, largest, used = finite()
        if not _ill_conditioned(value, largest):
            return HitProbResult(k=k, prob=value, method="finite_sum", terms_used=used)
        warnings.warn(
            f"birth-at-Poisson hitting probability at k={k} is ill-conditioned; using series",
            CancellationWarning,
            stacklevel=2,
        )
    return series()


def birth_at_poisson_fpt_density(m: BirthAtPoisson, k: int, t: float) -> float:
    """Density of the first landing of the Poisson-sampled Yule process on k >= 2.

    f_k(t) = lam sum_{l=0}^{k-2} (-1)^l C(k-1, l) (e^{-a (l+1)} - e^{-a k})
             e^{-lam t (1 - e^{-a (l+1)})}
    """
    validate_level(m, k)
    require_time(t)
    ea = math.exp(-m.alpha)
    eak = math.exp(-m.alpha * k)
    terms = []
    sign = 1.0
    coeff = 1.0
    for l in range(k - 1):
        head = ea ** (l + 1)
        rate = -math.expm1(-m.alpha * (l + 1))  # 1 - e^{-a (l+1)}
        terms.append(sign * coeff * (head - eak) * math.exp(-m.lam * t * rate))
        sign = -sign
        coeff *= (k - 1 - l) / (l + 1)
    value, _ = _compensated(terms)
    return m.lam * value


def birth_at_poisson_fpt_cdf(m: BirthAtPoisson, k: int, t: float) -> float:
    """Pr{T_k <= t}: exact integral of the finite-mode first-passage density."""
    validate_level(m, k)
    require_time(t)
    ea = math.exp(-m.alpha)
    eak = math.exp(-m.alpha * k)
    terms = []
    sign = 1.0
    coeff = 1.0
    for l in range(k - 1):
        head = ea ** (l + 1)
        rate = -math.expm1(-m.alpha * (l + 1))
        terms.append(sign * coeff * (head - eak) * -math.expm1(-m.lam * t * rate) / rate)
        sign = -sign
        coeff *= (k - 1 - l) / (l + 1)
    value, _ = _compensated(terms)
    return value


# ---------------------------------------------------------------------------
# Plain death processes (no random time change).
# ---------------------------------------------------------------------------

def linear_death_fpt_density(mu: float, n0: int, k: int, t: float) -> float:
    """First-passage density through k (0 <= k <= n0-1) for the linear death process.

    f_k(t) = mu (k+1) C(n0, k+1) e^{-mu t (k+1)} (1 - e^{-mu t})^{n0-k-1};
    the passage is certain, so the density integrates to one.
    """
    require_time(t)
    if not isinstance(k, int) or not (0 <= k <= n0 - 1):
        raise ValueError(f"death levels lie in [0, n0-1={n0 - 1}], got k={k!r}")
    front = mu * (k + 1) * math.exp(log_binomial(n0, k + 1))
    if t == 0:
        return front if k == n0 - 1 else 0.0
    return front * math.exp(-mu * t * (k + 1) + (n0 - k - 1) * math.log1p(-math.exp(-mu * t)))


def sublinear_death_fpt_density(mu: float, n0: int, k: int, t: float) -> float:
    """First-passage density through k for the sublinear death process.

    f_k(t) = mu (n0 - k) e^{-mu t} (1 - e^{-mu t})^{n0-k-1}; total mass one.
    """
    require_time(t)
    if not isinstance(k, int) or not (0 <= k <= n0 - 1):
        raise ValueError(f"death levels lie in [0, n0-1={n0 - 1}], got k={k!r}")
    if t == 0:
        return mu * (n0 - k) if k == n0 - 1 else 0.0
    return mu * (n0 - k) * math.exp(-mu * t + (n0 - k - 1) * math.log1p(-math.exp(-mu * t)))


# ---------------------------------------------------------------------------
# Linear death at Poisson times.
# ---------------------------------------------------------------------------

def _death_brace(mu: float, span: int, j: int) -> float:
    """(1 - e^{-mu (j+1)})^span - (1 - e^{-mu j})^span, evaluated stably.

    For large j both powers approach one; the difference is then taken from
    the dominated alternating representation
    sum_{m=1}^{span} C(span, m) (-1)^{m-1} e^{-mu m j} (1 - e^{-mu m}).
    """
    if j == 0:
        return (-math.expm1(-mu)) ** span
    if span * math.exp(-mu * j) < 0.5:
        total = 0.0
        coeff = 1.0  # C(span, m)
        sign = 1.0
        for m in range(1, span + 1):
            coeff *= (span - m + 1) / m
            term = sign * coeff * math.exp(-mu * m * j) * -math.expm1(-mu * m)
            total += term
            if abs(term) < 1e-20 * abs(total):
                break
            sign = -sign
        return total
    first = math.exp(span * math.log1p(-math.exp(-mu * (j + 1))))
    second = math.exp(span * math.log1p(-math.exp(-mu * j)))
    return first - second


def death_at_poisson_fpt_density(
    m: DeathAtPoisson,
    k: int,
    t: float,
    ctl: SeriesControl = DEFAULT_CONTROL,
    form: str = "series",
) -> float:
    """Density of the first landing of the Poisson-sampled death process on k.

    Series route (authoritative):
    f_k(t) = lam e^{-lam t - mu k} C(n0, k) sum_{j>=0} (lam t)^j e^{-mu j k}/j!
             [(1 - e^{-mu (j+1)})^{n0-k} - (1 - e^{-mu j})^{n0-k}].
    Finite route: lam e^{-mu k} C(n0, k) sum_{m=1}^{n0-k} C(n0-k, m) (-1)^{m-1}
    (1 - e^{-mu m}) e^{-lam t (1 - e^{-mu (k+m)})}.
    """
    validate_level(m, k)
    require_time(t)
    span = m.n0 - k
    front = m.lam * math.exp(-m.mu * k + log_binomial(m.n0, k))
    if form == "finite_sum":
        terms = []
        sign = 1.0
        coeff = 1.0
        for i in range(1, span + 1):
            coeff *= (span - i + 1) / i
            decay = -math.expm1(-m.mu * (k + i))
            terms.append(sign * coeff * -math.expm1(-m.mu * i) * math.exp(-m.lam * t * decay))
            sign = -sign
        value, _ = _compensated(terms)
        return front * value
    if form != "series":
        raise ValueError(f"unknown form {form!r}")
    if t == 0:
        return front * _death_brace(m.mu, span, 0)
    log_rate = math.log(m.lam * t) - m.mu * k

    def term(j: int) -> float:
        return math.exp(j * log_rate - math.lgamma(j + 1)) * _death_brace(m.mu, span, j)

    total, _ = _sum_unimodal(term, ctl, start=0)
    return front * math.exp(-m.lam * t) * total


def death_at_poisson_hitprob(
    mu: float,
    n0: int,
    k: int,
    ctl: SeriesControl = DEFAULT_CONTROL,
    form: str = "auto",
) -> HitProbResult:
    """Probability that the Poisson-sampled death process ever lands on k.

    Extinction (k = 0) is certain; for k >= 1 jumps may overshoot the level.
    Series route: e^{-mu k} C(n0, k) sum_{j>=0} e^{-mu j k}
    [(1 - e^{-mu (j+1)})^{n0-k} - (1 - e^{-mu j})^{n0-k}].
    Finite route: e^{-mu k} C(n0, k) sum_{m=1}^{n0-k} C(n0-k, m) (-1)^{m-1}
    (1 - e^{-mu m}) / (1 - e^{-mu (k+m)}).
    """
    if not (mu > 0 and math.isfinite(mu)):
        raise ValueError(f"mu must be positive and finite, got {mu!r}")
    if not isinstance(k, int) or not (0 <= k <= n0 - 1):
        raise ValueError(f"death levels lie in [0, n0-1={n0 - 1}], got k={k!r}")
    if k == 0:
        # The alternating sum telescopes to exactly one: extinction is certain.
        return HitProbResult(k=0, prob=1.0, method="finite_sum", terms_used=n0)
    span = n0 - k
    front = math.exp(-mu * k + log_binomial(n0, k))

    def series() -> HitProbResult:
        def term(j: int) -> float:
            return math.exp(-mu * j * k) * _death_brace(mu, span, j)

        total, used = _sum_unimodal(term, ctl, start=0)
        return HitProbResult(k=k, prob=front * total, method="series", terms_used=used)

    def finite() -> tuple:
        terms = []
        sign = 1.0
        coeff = 1.0
        for i in range(1, span + 1):
            coeff *= (span - i + 1) / i
            terms.append(sign * coeff * math.expm1(-mu * i) / math.expm1(-mu * (k + i)))
            sign = -sign
        value, largest = _compensated(terms)
        return front * value, largest, len(terms)

    if form == "series":
        return series()
    if form == "finite_sum":
        value, _, used = finite()
        return HitProbResult(k=k, prob=value, method="finite_sum", terms_used=used)
    if form != "auto":
        raise ValueError(f"unknown form {form!r}")
    if span <= 40:
        value, largest, used = finite()
        if not _ill_conditioned(value, largest):
            return HitProbResult(k=k, prob=value, method="finite_sum", terms_used=used)
        warnings.warn(
            f"death-at-Poisson hitting probability at k={k} is ill-conditioned; using series",
            CancellationWarning,
            stacklevel=2,
        )
    return series()


# ---------------------------------------------------------------------------
# Sublinear death at Poisson times: downcrossing rather than exact hit.
# ---------------------------------------------------------------------------

def sublinear_tail_probability(m: SublinearDeathAtPoisson, k: int, t: float) -> float:
    """Pr{state at time t >= k} for the sublinear death process at Poisson counts.

    = sum_{r=1}^{n0-k+1} (-1)^{r-1} C(n0-k+1, r) e^{-lam t (1 - e^{-mu r})}
    for 1 <= k <= n0; equals one for k = 0.
    """
    require_time(t)
    if not isinstance(k, int) or not (0 <= k <= m.n0):
        raise ValueError(f"k must lie in [0, n0={m.n0}], got {k!r}")
    if k == 0:
        return 1.0
    span = m.n0 - k + 1
    terms = []
    sign = 1.0
    coeff = 1.0
    for r in range(1, span + 1):
        coeff *= (span - r + 1) / r
        decay = -math.expm1(-m.mu * r)
        terms.append(sign * coeff * math.exp(-m.lam * t * decay))
        sign = -sign
    value, largest = _compensated(terms)
    if not _ill_conditioned(value, largest):
        return value
    warnings.warn(
        f"sublinear tail probability at k={k} is ill-conditioned; summing the pmf",
        CancellationWarning,
        stacklevel=2,
    )
    return math.fsum(sublinear_death_at_poisson_pmf(m, t, l) for l in range(k, m.n0 + 1))


def sublinear_downcrossing_survival(m: SublinearDeathAtPoisson, k: int, t: float) -> float:
    """Pr{V_k > t}, V_k the first time the process is at or below level k.

    Paths are monotone, so survival of the downcrossing time equals the
    probability that the state at t still exceeds k:
    Pr{V_k > t} = Pr{state at t >= k+1}.  At k = 0 this is one minus the
    extinction probability.
    """
    if not isinstance(k, int) or not (0 <= k <= m.n0 - 1):
        raise ValueError(f"downcrossing levels lie in [0, n0-1={m.n0 - 1}], got {k!r}")
    return sublinear_tail_probability(m, k + 1, t)


# ---------------------------------------------------------------------------
# Quadrature helpers.
# ---------------------------------------------------------------------------

def fpt_density(model: ComposedModel, k: int, t: float, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    """First-passage density of a composed model through level ``k`` at time ``t``."""
    if isinstance(model, IteratedBirth):
        return iterated_birth_fpt_density(model, k, t, ctl)
    if isinstance(model, BirthAtPoisson):
        return birth_at_poisson_fpt_density(model, k, t)
    if isinstance(model, DeathAtPoisson):
        return death_at_poisson_fpt_density(model, k, t, ctl)
    if isinstance(model, SublinearDeathAtPoisson):
        raise ValueError(
            "the sublinear model has no exact-hit passage law; use the downcrossing functions"
        )
    raise TypeError(f"unsupported model {model!r}")


def fpt_cdf(model: ComposedModel, k: int, t_max: float, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Pr{T_k <= t_max} by adaptive quadrature of the first-passage density."""
    require_time(t_max)
    if isinstance(model, BirthAtPoisson):
        return birth_at_poisson_fpt_cdf(model, k, t_max)
    validate_level(model, k)
    if t_max == 0:
        return 0.0
    value, _ = quad(
        lambda s: fpt_density(model, k, s, ctl), 0.0, t_max,
        epsabs=1e-12, epsrel=1e-12, limit=200,
    )
    return value


def slowest_fpt_rate(model: ComposedModel, k: int) -> float:
    """Rate of the slowest exponential mode of the first-passage density."""
    validate_level(model, k)
    if isinstance(model, IteratedBirth):
        return model.lam
    if isinstance(model, BirthAtPoisson):
        return model.lam * -math.expm1(-model.alpha)
    if isinstance(model, DeathAtPoisson):
        return model.lam * -math.expm1(-model.mu * (k + 1))
    raise TypeError(f"unsupported model {model!r}")


def hitprob_via_quadrature(
    model: ComposedModel, k: int, ctl: SeriesControl = DEFAULT_CONTROL
) -> tuple:
    """Pr{T_k < infinity} by integrating the passage density.

    Integrates over [0, T*] with T* = 40 / (slowest mode rate) and returns
    ``(value, tail_bound)`` where ``tail_bound`` dominates the discarded tail.
    """
    rate = slowest_fpt_rate(model, k)
    t_star = 40.0 / rate
    value, _ = quad(
        lambda s: fpt_density(model, k, s, ctl), 0.0, t_star,
        epsabs=1e-13, epsrel=1e-12, limit=400,
    )
    if isinstance(model, IteratedBirth):
        ea = math.exp(-model.alpha)
        tail = math.exp(-model.lam * t_star) * ea * ea / (1.0 - ea) ** 2
    elif isinstance(model, BirthAtPoisson):
        ea = math.exp(-model.alpha)
        r0 = -math.expm1(-model.alpha)
        tail = (1.0 + ea) ** (k - 1) * math.exp(-model.lam * t_star * r0) / r0
    else:
        span = model.n0 - k
        r0 = -math.expm1(-model.mu * (k + 1))
        coeff = (
            math.exp(log_binomial(model.n0, k) - model.mu * k)
            * span
            * -math.expm1(-model.mu)
        )
        tail = coeff * math.exp(-model.lam * t_star * r0) / r0
    return value, tail

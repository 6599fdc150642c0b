"""Consistency checks tying the closed-form laws together.

Three layers of evidence are produced:

* ODE certification: the closed-form marginals are inserted into the
  governing difference-differential systems with analytic time
  derivatives (every closed form here is a finite sum of exponentials),
  and the systems are also integrated numerically from the indicator
  initial condition and compared against the closed forms.
* Jump-kernel check: the one-event landing law of the death-at-Poisson
  chain coincides with a one-unit-time linear death transition.
* Identity checks: series/closed-form identities linking the hitting
  probabilities and level-occupation sums of the two birth models.

Numerical integration uses a fixed-step fourth-order Runge-Kutta scheme
whose step is halved until a further halving moves the solution by less
than 1e-10; the systems are small and stiffness-free, so no adaptive
machinery is warranted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .composed import iterated_birth_pmf
from .errors import CancellationWarning
from .laws import linear_death_pmf, log_binomial, yule_pmf
from .models import DeathAtPoisson, IteratedBirth
from .params import DEFAULT_CONTROL, BirthParams, DeathParams, SeriesControl
from .passage import (
    birth_at_poisson_hitprob,
    iterated_birth_hitprob,
    yule_level_occupation,
)

_RK4_TOL = 1e-10
_RK4_MAX_DOUBLINGS = 16


@dataclass(frozen=True)
class OdeCheckReport:
    """Result of one ODE certification run."""

    model: str
    grid: tuple[float, ...]
    max_residual: float
    max_solution_gap: float

    def __post_init__(self) -> None:
        for name in ("max_residual", "max_solution_gap"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class KernelCheck:
    """Jump-kernel comparison outcome."""

    max_deviation: float
    passed: bool


@dataclass(frozen=True)
class IdentityCheck:
    """Identity comparison outcome."""

    name: str
    max_gap: float
    tolerance: float
    passed: bool


# ---------------------------------------------------------------------------
# generators and integration
# ---------------------------------------------------------------------------


def linear_death_generator(mu: float, n0: int) -> np.ndarray:
    """Forward-equation matrix of the plain linear death process.

    dp_k/dt = -mu*k*p_k + mu*(k+1)*p_{k+1} on states 0..n0.
    """
    a = np.zeros((n0 + 1, n0 + 1))
    for k in range(n0 + 1):
        a[k, k] = -mu * k
        if k + 1 <= n0:
            a[k, k + 1] = mu * (k + 1)
    return a


def death_at_poisson_generator(m: DeathAtPoisson) -> np.ndarray:
    """Forward-equation matrix of the death-at-Poisson chain on 0..n0.

    dq_k/dt = lam * e^{-mu k} * sum_r C(r+k, r) (1-e^{-mu})^r q_{r+k} - lam * q_k,
    i.e. A[k, s] = lam * C(s, k) e^{-mu k} (1-e^{-mu})^{s-k} for s > k and
    A[k, k] = lam * (e^{-mu k} - 1).
    """
    n0 = m.n0
    w = -math.expm1(-m.mu)  # 1 - e^{-mu}
    a = np.zeros((n0 + 1, n0 + 1))
    for k in range(n0 + 1):
        a[k, k] = m.lam * math.expm1(-m.mu * k)
        for s in range(k + 1, n0 + 1):
            a[k, s] = m.lam * math.exp(
                log_binomial(s, k) - m.mu * k + (s - k) * math.log(w)
            )
    return a


def _rk4_integrate(a: np.ndarray, y0: np.ndarray, t: float, steps: int) -> np.ndarray:
    y = y0.astype(np.float64).copy()
    h = t / steps
    for _ in range(steps):
        k1 = a @ y
        k2 = a @ (y + 0.5 * h * k1)
        k3 = a @ (y + 0.5 * h * k2)
        k4 = a @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def integrate_forward_system(a: np.ndarray, y0: np.ndarray, t: float) -> np.ndarray:
    """Fixed-step RK4 solution at time ``t``, step-halved until stable.

    The step is halved until a further halving changes the solution by
    less than 1e-10 in the maximum norm.
    """
    if t == 0.0:
        return y0.astype(np.float64).copy()
    steps = 64
    y = _rk4_integrate(a, y0, t, steps)
    for _ in range(_RK4_MAX_DOUBLINGS):
        steps *= 2
        y_fine = _rk4_integrate(a, y0, t, steps)
        if float(np.max(np.abs(y_fine - y))) < _RK4_TOL:
            return y_fine
        y = y_fine
    return y


# ---------------------------------------------------------------------------
# linear death ODE certification
# ---------------------------------------------------------------------------


def linear_death_pmf_derivative(p: DeathParams, t: float, k: int) -> float:
    """Analytic d/dt of the linear death marginal C(n0,k)e^{-mu k t}(1-e^{-mu t})^{n0-k}."""
    mu, n0 = p.mu, p.n0
    if not 0 <= k <= n0:
        return 0.0
    base = linear_death_pmf(p, t, k)
    if k == n0:
        return -mu * n0 * base
    decay = -mu * k * base
    # d/dt of the (1-e^{-mu t})^{n0-k} factor
    if t == 0.0:
        if n0 - k == 1:
            growth = math.exp(log_binomial(n0, k)) * mu
        else:
            growth = 0.0
    else:
        w = -math.expm1(-mu * t)
        growth = (
            math.exp(log_binomial(n0, k) - mu * k * t + (n0 - k - 1) * math.log(w))
            * (n0 - k)
            * mu
            * math.exp(-mu * t)
        )
    return decay + growth


def check_linear_death_ode(p: DeathParams, grid) -> OdeCheckReport:
    """Insert the closed-form marginal into its forward system.

    max_residual uses the analytic derivative; max_solution_gap compares
    RK4 integration from the indicator initial condition with the closed
    form at every grid point.
    """
    grid = tuple(float(t) for t in grid)
    if any(t <= 0 for t in grid):
        raise ValueError("grid must lie in (0, inf)")
    a = linear_death_generator(p.mu, p.n0)
    y0 = np.zeros(p.n0 + 1)
    y0[p.n0] = 1.0
    max_res = 0.0
    max_gap = 0.0
    for t in grid:
        closed = np.array([linear_death_pmf(p, t, k) for k in range(p.n0 + 1)])
        rhs = a @ closed
        for k in range(p.n0 + 1):
            res = abs(linear_death_pmf_derivative(p, t, k) - rhs[k])
            max_res = max(max_res, res)
        gap = float(np.max(np.abs(integrate_forward_system(a, y0, t) - closed)))
        max_gap = max(max_gap, gap)
    return OdeCheckReport("linear-death", grid, max_res, max_gap)


def finite_difference_residual(p: DeathParams, grid, h: float) -> float:
    """Residual of the forward system with a central-difference derivative.

    Second-order accurate: halving ``h`` should shrink the result by
    about a factor of four.
    """
    grid = tuple(float(t) for t in grid)
    if any(t - h <= 0 for t in grid):
        raise ValueError("need t - h > 0 for every grid point")
    a = linear_death_generator(p.mu, p.n0)
    worst = 0.0
    for t in grid:
        closed = np.array([linear_death_pmf(p, t, k) for k in range(p.n0 + 1)])
        plus = np.array([linear_death_pmf(p, t + h, k) for k in range(p.n0 + 1)])
        minus = np.array([linear_death_pmf(p, t - h, k) for k in range(p.n0 + 1)])
        fd = (plus - minus) / (2.0 * h)
        worst = max(worst, float(np.max(np.abs(fd - a @ closed))))
    return worst


# ---------------------------------------------------------------------------
# death-at-Poisson ODE certification
# ---------------------------------------------------------------------------


def _death_poisson_exponential_terms(m: DeathAtPoisson, k: int):
    """Closed-form marginal q_k(t) = sum_j w_j e^{-r_j t} as (weights, rates)."""
    n0 = m.n0
    weights = []
    rates = []
    for j in range(n0 - k + 1):
        w = (-1.0) ** j * math.exp(log_binomial(n0, k) + log_binomial(n0 - k, j))
        weights.append(w)
        rates.append(m.lam * -math.expm1(-m.mu * (k + j)))
    return weights, rates


def death_at_poisson_closed_form(m: DeathAtPoisson, t: float, k: int) -> float:
    """Marginal law evaluated from its exponential-sum representation."""
    weights, rates = _death_poisson_exponential_terms(m, k)
    return math.fsum(w * math.exp(-r * t) for w, r in zip(weights, rates))


def _death_poisson_closed_derivative(m: DeathAtPoisson, t: float, k: int) -> float:
    weights, rates = _death_poisson_exponential_terms(m, k)
    return math.fsum(-r * w * math.exp(-r * t) for w, r in zip(weights, rates))


def check_death_at_poisson_ode(m: DeathAtPoisson, grid) -> OdeCheckReport:
    """Certify the death-at-Poisson forward system against its closed form."""
    grid = tuple(float(t) for t in grid)
    if any(t <= 0 for t in grid):
        raise ValueError("grid must lie in (0, inf)")
    if m.n0 > 30:
        warnings.warn(
            f"alternating closed form is ill-conditioned for n0={m.n0} > 30; "
            "residuals may be dominated by cancellation",
            CancellationWarning,
            stacklevel=2,
        )
    a = death_at_poisson_generator(m)
    y0 = np.zeros(m.n0 + 1)
    y0[m.n0] = 1.0
    max_res = 0.0
    max_gap = 0.0
    for t in grid:
        closed = np.array(
            [death_at_poisson_closed_form(m, t, k) for k in range(m.n0 + 1)]
        )
        rhs = a @ closed
        for k in range(m.n0 + 1):
            res = abs(_death_poisson_closed_derivative(m, t, k) - rhs[k])
            max_res = max(max_res, res)
        gap = float(np.max(np.abs(integrate_forward_system(a, y0, t) - closed)))
        max_gap = max(max_gap, gap)
    return OdeCheckReport("death-at-poisson", grid, max_res, max_gap)


# ---------------------------------------------------------------------------
# jump kernel
# ---------------------------------------------------------------------------


def jump_landing_probability(mu: float, start: int, k: int) -> float:
    """Landing law of one Poisson-event death jump from ``start`` to ``k``.

    Each of the ``start`` individuals independently survives the jump
    with probability e^{-mu}: C(start, k) e^{-mu k} (1-e^{-mu})^{start-k}.
    """
    if not 0 <= k <= start:
        return 0.0
    if k == start:
        return math.exp(-mu * start)
    w = -math.expm1(-mu)
    return math.exp(log_binomial(start, k) - mu * k + (start - k) * math.log(w))


def check_jump_kernel(m: DeathAtPoisson, tol: float = 1e-13) -> KernelCheck:
    """Landing law == one-unit-time linear death transition, plus normalization."""
    worst = 0.0
    for s in range(1, m.n0 + 1):
        total = 0.0
        for k in range(s + 1):
            coeff = jump_landing_probability(m.mu, s, k)
            ref = linear_death_pmf(DeathParams(mu=m.mu, n0=s), 1.0, k)
            worst = max(worst, abs(coeff - ref))
            total += coeff
        worst = max(worst, abs(total - 1.0))
    return KernelCheck(max_deviation=worst, passed=worst < tol)


# ---------------------------------------------------------------------------
# identities
# ---------------------------------------------------------------------------


def _geometric_tail_sum(term, ctl: SeriesControl) -> float:
    total = 0.0
    for mth in range(1, ctl.max_terms + 1):
        x = term(mth)
        total += x
        if x <= ctl.abs_tol * max(abs(total), 1.0) and mth > 2:
            return total
    return total


def check_q1Z_identity(
    alpha: float,
    lam: float,
    grid,
    tol: float = 1e-10,
    ctl: SeriesControl = DEFAULT_CONTROL,
) -> IdentityCheck:
    """State-1 law of the iterated birth process vs its mixture series.

    The probability of still being at state 1 equals the expectation of
    e^{-alpha * inner}, i.e. sum_j e^{-alpha j} * (inner linear-birth pmf at j).
    """
    m = IteratedBirth(alpha=alpha, lam=lam)
    inner = BirthParams(alpha=lam)
    worst = 0.0
    for t in grid:
        t = float(t)
        closed = iterated_birth_pmf(m, t, 1)
        series = _geometric_tail_sum(
            lambda j: math.exp(-alpha * j) * yule_pmf(inner, t, j), ctl
        )
        worst = max(worst, abs(closed - series))
    return IdentityCheck("state-1 mixture identity", worst, tol, worst <= tol)


def occupation_difference_gap(
    alpha: float, k: int, ctl: SeriesControl = DEFAULT_CONTROL
) -> float:
    """Gap in g_k - g_{k-1} = -sum_m e^{-2 alpha m}(1-e^{-alpha m})^{k-2}, k >= 2."""
    if k < 2:
        raise ValueError(f"identity requires k >= 2, got {k}")
    lhs = yule_level_occupation(alpha, k, ctl) - yule_level_occupation(alpha, k - 1, ctl)
    rhs = -_geometric_tail_sum(
        lambda mth: math.exp(-2.0 * alpha * mth)
        * (-math.expm1(-alpha * mth)) ** (k - 2),
        ctl,
    )
    return abs(lhs - rhs)


def occupation_second_difference_gap(
    alpha: float, k: int, ctl: SeriesControl = DEFAULT_CONTROL
) -> float:
    """Gap in g_k - g_{k-2} = 2(g_{k-1} - g_{k-2}) + sum_m e^{-3 alpha m}(1-e^{-alpha m})^{k-3}."""
    if k < 3:
        raise ValueError(f"identity requires k >= 3, got {k}")
    g = {j: yule_level_occupation(alpha, j, ctl) for j in (k - 2, k - 1, k)}
    lhs = g[k] - g[k - 2]
    rhs = 2.0 * (g[k - 1] - g[k - 2]) + _geometric_tail_sum(
        lambda mth: math.exp(-3.0 * alpha * mth)
        * (-math.expm1(-alpha * mth)) ** (k - 3),
        ctl,
    )
    return abs(lhs - rhs)


def hitprob_difference_gap(alpha: float, k: int) -> float:
    """Gap in Pr{T_k upward at Poisson} - Pr{T_k iterated} = e^{-alpha}(1-e^{-alpha})^{k-1}."""
    x = birth_at_poisson_hitprob(alpha, k).prob
    z = iterated_birth_hitprob(alpha, k).prob
    expected = math.exp(-alpha) * (-math.expm1(-alpha)) ** (k - 1)
    return abs((x - z) - expected)


def check_occupation_identities(
    alphas=(0.25, 0.5, 1.0, 2.0), k_range=range(3, 21), tol: float = 1e-10
) -> IdentityCheck:
    worst = 0.0
    for a in alphas:
        for k in k_range:
            worst = max(worst, occupation_difference_gap(a, k))
            worst = max(worst, occupation_second_difference_gap(a, k))
    return IdentityCheck("level-occupation difference identities", worst, tol, worst <= tol)


def check_hitprob_difference(
    alphas=(0.25, 0.5, 1.0, 2.0), k_range=range(2, 21), tol: float = 1e-10
) -> IdentityCheck:
    worst = 0.0
    for a in alphas:
        for k in k_range:
            worst = max(worst, hitprob_difference_gap(a, k))
    return IdentityCheck("hitting-probability difference identity", worst, tol, worst <= tol)


# ---------------------------------------------------------------------------
# suite runner
# ---------------------------------------------------------------------------


def _report(check: str, model: str, params: dict, grid, residual: float,
            gap: float, passed: bool) -> dict:
    return {
        "check": check,
        "model": model,
        "params": params,
        "grid": [float(g) for g in grid],
        "max_residual": float(residual),
        "max_solution_gap": float(gap),
        "pass": bool(passed),
    }


def run_suite(
    suite: str = "all",
    mu: float = 0.5,
    lam: float = 1.0,
    alpha: float = 0.3,
    n0: int = 6,
) -> list[dict]:
    """Run the named verification suite; returns JSON-ready report dicts."""
    if suite not in {"all", "ode", "identities", "kernels"}:
        raise ValueError(f"unknown suite {suite!r}")
    reports: list[dict] = []
    if suite in ("all", "ode"):
        grid = np.linspace(0.06, 3.0, 50)
        lin = check_linear_death_ode(DeathParams(mu=mu, n0=max(n0 - 1, 1)), grid)
        reports.append(
            _report(
                "linear-death-ode",
                lin.model,
                {"mu": mu, "n0": max(n0 - 1, 1)},
                grid,
                lin.max_residual,
                lin.max_solution_gap,
                lin.max_residual <= 1e-10 and lin.max_solution_gap <= 1e-8,
            )
        )
        dp = check_death_at_poisson_ode(DeathAtPoisson(mu=mu, lam=lam, n0=n0), grid)
        reports.append(
            _report(
                "death-at-poisson-ode",
                dp.model,
                {"mu": mu, "lam": lam, "n0": n0},
                grid,
                dp.max_residual,
                dp.max_solution_gap,
                dp.max_residual <= 1e-8 and dp.max_solution_gap <= 1e-7,
            )
        )
    if suite in ("all", "kernels"):
        for mu_k, n0_k in ((math.log(2.0), 1), (0.5, 3), (0.7, 4), (mu, n0)):
            kc = check_jump_kernel(DeathAtPoisson(mu=mu_k, lam=1.0, n0=n0_k))
            reports.append(
                _report(
                    "death-jump-kernel",
                    "death-at-poisson",
                    {"mu": mu_k, "n0": n0_k},
                    range(n0_k + 1),
                    kc.max_deviation,
                    0.0,
                    kc.passed,
                )
            )
    if suite in ("all", "identities"):
        grid = (0.0, 0.5, 1.0, 1.7, 2.5)
        q1 = check_q1Z_identity(alpha, lam, grid)
        reports.append(
            _report(
                "state-1-mixture",
                "iterated-birth",
                {"alpha": alpha, "lam": lam},
                grid,
                q1.max_gap,
                0.0,
                q1.passed,
            )
        )
        diff = check_hitprob_difference()
        reports.append(
            _report(
                "hitprob-difference",
                "birth-models",
                {"alphas": [0.25, 0.5, 1.0, 2.0], "k": "2..20"},
                range(2, 21),
                diff.max_gap,
                0.0,
                diff.passed,
            )
        )
        occ = check_occupation_identities()
        reports.append(
            _report(
                "occupation-differences",
                "birth-at-poisson",
                {"alphas": [0.25, 0.5, 1.0, 2.0], "k": "3..20"},
                range(3, 21),
                occ.max_gap,
                0.0,
                occ.passed,
            )
        )
    return reports

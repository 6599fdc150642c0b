"""Exact stochastic simulation and Monte Carlo estimators.

Per-path samplers draw exponential holding times state by state (no
time discretization), so every path has exactly the law of its model.
Composed models are sampled by conditioning on the inner path: the
inner jump times are simulated, and the outer chain advances one unit
of operational time per inner jump through an exact one-step kernel

* birth:            s -> s + NegBin(s, e^{-alpha})
* linear death:     s -> Binomial(s, e^{-mu})
* sublinear death:  s -> max(n0 + 1 - W', 0) where W = n0 + 1 - s
                    advances one unit as a rate-mu birth chain

The sublinear step uses the coupling "deaths + 1 is a linear birth
process run at rate mu, frozen once the population is exhausted",
which reproduces the sublinear rate ladder mu*1, mu*2, ... exactly.

Estimators are vectorised in chunks of 2**15 lanes.  Reproducibility
contract: a 64-bit root seed deterministically derives one Philox
stream per path (``path_stream``) for the per-path samplers, and one
Philox stream per chunk for the vectorised estimators; aggregation is
an order-insensitive sum, so results do not depend on scheduling or
the number of worker threads (``POPPROC_THREADS``).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import PathExplosionError
from .models import (
    BirthAtPoisson,
    ComposedModel,
    DeathAtPoisson,
    IteratedBirth,
    SublinearDeathAtPoisson,
)
from .params import BirthParams, DeathParams, require_time

# A path that records more than this many events is aborted.
EXPLOSION_EVENTS = 10**7
# Lanes whose expected state would exceed this are aborted rather than drawn.
STATE_CAP = 10**7
# Lane count per vectorised chunk.
CHUNK_SIZE = 1 << 15
# Sublinear lanes with survival probability below this are set to 0 directly
# (the absorbed outcome has probability > 1 - 1e-12; the alternative draw
# would need negative-binomial means beyond 1e12).
_SUBLINEAR_ABSORB_TOL = 1e-12


# ---------------------------------------------------------------------------
# configuration and result containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Simulation request: seed, path count, horizon, evaluation times."""

    seed: int
    n_paths: int
    t_max: float
    eval_times: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ValueError(f"t_max must be a positive real, got {self.t_max}")
        times = tuple(float(t) for t in self.eval_times)
        object.__setattr__(self, "eval_times", times)
        for a, b in zip(times, times[1:]):
            if b < a:
                raise ValueError("eval_times must be nondecreasing")
        if times and (times[0] < 0 or times[-1] > self.t_max):
            raise ValueError("eval_times must lie inside [0, t_max]")


@dataclass(frozen=True)
class PathRecord:
    """One sampled trajectory: initial value plus (time, new state) jumps."""

    initial_value: int
    jump_times: tuple[float, ...]
    values: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.jump_times) != len(self.values):
            raise ValueError("jump_times and values must have equal length")
        prev_t = 0.0
        prev_v = self.initial_value
        for t, v in zip(self.jump_times, self.values):
            if not t > prev_t:
                raise ValueError("jump times must be strictly increasing")
            if v == prev_v:
                raise ValueError("each recorded jump must change the state")
            prev_t, prev_v = t, v

    def state_at(self, t: float) -> int:
        """Right-continuous state at time ``t``."""
        require_time(t)
        idx = np.searchsorted(self.jump_times, t, side="right")
        return self.values[idx - 1] if idx else self.initial_value

    @property
    def final_value(self) -> int:
        return self.values[-1] if self.values else self.initial_value


@dataclass(frozen=True)
class EmpiricalEstimate:
    """Point estimate with its standard error and sample size."""

    value: float
    stderr: float
    n: int


@dataclass(frozen=True)
class PmfEstimate:
    """Empirical distribution of the state at a fixed time."""

    t: float
    n_paths: int
    n_aborted: int
    counts: dict[int, int] = field(repr=False)

    @property
    def n_effective(self) -> int:
        return self.n_paths - self.n_aborted

    def support(self) -> tuple[int, ...]:
        return tuple(sorted(self.counts))

    def probability(self, k: int) -> EmpiricalEstimate:
        n = self.n_effective
        p = self.counts.get(k, 0) / n
        return EmpiricalEstimate(p, math.sqrt(p * (1.0 - p) / n), n)

    def mean(self) -> EmpiricalEstimate:
        n = self.n_effective
        total = sum(k * c for k, c in self.counts.items())
        m = total / n
        ss = sum(c * (k - m) ** 2 for k, c in self.counts.items())
        sd = math.sqrt(ss / (n - 1)) if n > 1 else 0.0
        return EmpiricalEstimate(m, sd / math.sqrt(n), n)


@dataclass(frozen=True)
class FptEstimate:
    """First-passage estimate at a finite horizon.

    ``cdf_at_horizon`` estimates Pr{T_level <= t_max}; lanes still able to
    hit at the horizon are counted in ``n_censored`` rather than folded
    into the estimate, because the total hitting probability is < 1 and
    uncensored estimation would be ill-posed.
    """

    level: int
    t_max: float
    cdf_at_horizon: EmpiricalEstimate
    hist_counts: tuple[int, ...]
    bin_edges: tuple[float, ...]
    n_hits: int
    n_censored: int
    n_aborted: int
    n_paths: int


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


def path_stream(seed: int, path_index: int) -> np.random.Generator:
    """Independent counter-based stream for one path."""
    seq = np.random.SeedSequence(seed, spawn_key=(path_index,))
    return np.random.Generator(np.random.Philox(seq))


def _chunk_stream(seed: int, chunk_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(seed, spawn_key=(2**32 + chunk_index,))
    return np.random.Generator(np.random.Philox(seq))


def _thread_count() -> int:
    raw = os.environ.get("POPPROC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_chunks(worker, n_paths: int):
    """Run ``worker(chunk_index, chunk_size)`` over all chunks.

    Results are reduced in chunk order, so the outcome is identical for
    any thread count.
    """
    sizes = []
    start = 0
    while start < n_paths:
        sizes.append(min(CHUNK_SIZE, n_paths - start))
        start += CHUNK_SIZE
    threads = _thread_count()
    if threads == 1:
        return [worker(i, s) for i, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(worker, i, s) for i, s in enumerate(sizes)]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# one-step outer kernels (one unit of operational time)
# ---------------------------------------------------------------------------


def birth_step(state: int, alpha: float, rng: np.random.Generator) -> int:
    """Advance a rate-``alpha`` birth chain by one unit of time."""
    if state <= 0:
        return state
    return state + int(rng.negative_binomial(state, math.exp(-alpha)))


def linear_death_step(state: int, mu: float, rng: np.random.Generator) -> int:
    """Advance a rate-``mu`` linear death chain by one unit of time."""
    if state <= 0:
        return 0
    return int(rng.binomial(state, math.exp(-mu)))


def sublinear_death_step(
    state: int, n0: int, mu: float, rng: np.random.Generator
) -> int:
    """Advance the sublinear death chain (started at ``n0``) by one unit."""
    if state <= 0:
        return 0
    w = n0 + 1 - state
    w += int(rng.negative_binomial(w, math.exp(-mu)))
    return max(n0 + 1 - w, 0)


# ---------------------------------------------------------------------------
# per-path samplers
# ---------------------------------------------------------------------------


def sample_yule(p: BirthParams, t_end: float, rng: np.random.Generator) -> PathRecord:
    """Exact linear-birth path on [0, t_end]: rate ``alpha * k`` in state k."""
    require_time(t_end)
    state = p.n0
    t = 0.0
    times: list[float] = []
    values: list[int] = []
    while True:
        t += rng.exponential(1.0 / (p.alpha * state))
        if t > t_end:
            break
        state += 1
        times.append(t)
        values.append(state)
        if len(times) > EXPLOSION_EVENTS:
            raise PathExplosionError(
                f"birth path exceeded {EXPLOSION_EVENTS} events before t={t_end}"
            )
    return PathRecord(p.n0, tuple(times), tuple(values))


def _sample_death(
    n0: int, rate_of: "callable", t_end: float, rng: np.random.Generator
) -> PathRecord:
    state = n0
    t = 0.0
    times: list[float] = []
    values: list[int] = []
    while state > 0:
        t += rng.exponential(1.0 / rate_of(state))
        if t > t_end:
            break
        state -= 1
        times.append(t)
        values.append(state)
    return PathRecord(n0, tuple(times), tuple(values))


def sample_linear_death(
    p: DeathParams, t_end: float, rng: np.random.Generator
) -> PathRecord:
    """Exact linear death path: rate ``mu * k`` in state k, absorbed at 0."""
    require_time(t_end)
    return _sample_death(p.n0, lambda s: p.mu * s, t_end, rng)


def sample_sublinear_death(
    p: DeathParams, t_end: float, rng: np.random.Generator
) -> PathRecord:
    """Exact sublinear death path: rate ``mu * (n0 - k + 1)`` in state k.

    The rate grows with the number of deaths already recorded, so along
    any path the successive death rates are mu*1, mu*2, mu*3, ...
    """
    require_time(t_end)
    return _sample_death(p.n0, lambda s: p.mu * (p.n0 - s + 1), t_end, rng)


def sublinear_rate(n0: int, state: int, mu: float) -> float:
    """Death rate of the sublinear chain in ``state``: mu * (deaths + 1)."""
    if not 0 < state <= n0:
        raise ValueError(f"state must lie in 1..{n0}, got {state}")
    return mu * (n0 - state + 1)


def sample_composed(
    m: ComposedModel, cfg: SimConfig, rng: np.random.Generator
) -> PathRecord:
    """Exact path of a composed model on [0, cfg.t_max].

    The inner clock's jump times are simulated exactly; at each inner
    jump the outer chain advances one unit of operational time through
    its one-step kernel.  Only actual state changes are recorded, so
    recorded jumps have arbitrary size >= 1.
    """
    t_end = cfg.t_max
    if isinstance(m, IteratedBirth):
        # inner linear birth clock starts at 1, so the time-0 value is the
        # outer chain advanced one unit from a single progenitor
        inner = 1
        state = birth_step(1, m.alpha, rng)
        initial = state

        def gap() -> float:
            return rng.exponential(1.0 / (m.lam * inner))

        def step(s: int) -> int:
            return birth_step(s, m.alpha, rng)

        absorbing = False
    else:
        inner = 0
        state = m.n0
        initial = state

        def gap() -> float:
            return rng.exponential(1.0 / m.lam)

        if isinstance(m, BirthAtPoisson):
            def step(s: int) -> int:
                return birth_step(s, m.alpha, rng)

            absorbing = False
        elif isinstance(m, DeathAtPoisson):
            def step(s: int) -> int:
                return linear_death_step(s, m.mu, rng)

            absorbing = True
        elif isinstance(m, SublinearDeathAtPoisson):
            def step(s: int) -> int:
                return sublinear_death_step(s, m.n0, m.mu, rng)

            absorbing = True
        else:
            raise TypeError(f"unsupported model {type(m).__name__}")

    t = 0.0
    events = 0
    times: list[float] = []
    values: list[int] = []
    while True:
        t += gap()
        if t > t_end:
            break
        inner += 1
        events += 1
        if events > EXPLOSION_EVENTS:
            raise PathExplosionError(
                f"composed path exceeded {EXPLOSION_EVENTS} inner events"
            )
        new = step(state)
        if new > STATE_CAP:
            raise PathExplosionError(f"composed path state exceeded {STATE_CAP}")
        if new != state:
            times.append(t)
            values.append(new)
            state = new
        if absorbing and state == 0:
            break
    return PathRecord(initial, tuple(times), tuple(values))


def dump_paths(records, target) -> int:
    """Write paths as tab-separated lines (path_id, jump_time, new_state).

    ``records`` is an iterable of PathRecord; ``target`` is a file-like
    object or a path.  Returns the number of lines written.
    """
    close = False
    if not hasattr(target, "write"):
        target = open(target, "w", encoding="utf-8")
        close = True
    lines = 0
    try:
        for pid, rec in enumerate(records):
            for t, v in zip(rec.jump_times, rec.values):
                target.write(f"{pid}\t{t:.17g}\t{v}\n")
                lines += 1
    finally:
        if close:
            target.close()
    return lines


# ---------------------------------------------------------------------------
# vectorised marginal sampling (exact, used by estimate_pmf)
# ---------------------------------------------------------------------------


def _inner_counts(m: ComposedModel, t: float, rng, size: int) -> np.ndarray:
    """Inner clock value at time t: linear birth from 1, or Poisson count."""
    if isinstance(m, IteratedBirth):
        if t == 0.0:
            return np.ones(size, dtype=np.int64)
        return 1 + rng.negative_binomial(1, math.exp(-m.lam * t), size=size)
    return rng.poisson(m.lam * t, size=size)


def _marginal_states(m: ComposedModel, t: float, rng, size: int):
    """Exact draw of the composed state at time t; returns (states, aborted).

    The outer chain advanced j units collapses to a single draw: j birth
    units from s give s + NegBin(s, e^{-alpha j}); j death units give
    Binomial(s, e^{-mu j}); j sublinear units advance W = deaths + 1 as a
    birth chain.  Lanes whose expected state would exceed STATE_CAP are
    aborted (they correspond to paths the explosion guard would stop).
    """
    j = _inner_counts(m, t, rng, size)
    aborted = np.zeros(size, dtype=bool)
    if isinstance(m, (IteratedBirth, BirthAtPoisson)):
        n_init = 1 if isinstance(m, IteratedBirth) else m.n0
        p = np.exp(-np.asarray(j, dtype=np.float64) * m.alpha)
        aborted = p * STATE_CAP < n_init
        p_safe = np.where(aborted, 0.5, p)
        states = n_init + rng.negative_binomial(n_init, p_safe, size=size)
    elif isinstance(m, DeathAtPoisson):
        p = np.exp(-np.asarray(j, dtype=np.float64) * m.mu)
        states = rng.binomial(m.n0, p, size=size)
    elif isinstance(m, SublinearDeathAtPoisson):
        p = np.exp(-np.asarray(j, dtype=np.float64) * m.mu)
        absorbed = m.n0 * p < _SUBLINEAR_ABSORB_TOL
        p_safe = np.where(absorbed, 0.5, p)
        w = 1 + rng.negative_binomial(1, p_safe, size=size)
        states = np.maximum(m.n0 + 1 - w, 0)
        states[absorbed] = 0
    else:
        raise TypeError(f"unsupported model {type(m).__name__}")
    return np.asarray(states, dtype=np.int64), aborted


def estimate_pmf(m: ComposedModel, t: float, cfg: SimConfig) -> PmfEstimate:
    """Empirical law of the state at time ``t`` from cfg.n_paths draws."""
    require_time(t)

    def worker(chunk_index: int, size: int):
        rng = _chunk_stream(cfg.seed, chunk_index)
        states, aborted = _marginal_states(m, t, rng, size)
        kept = states[~aborted]
        return np.bincount(kept), int(aborted.sum())

    counts: dict[int, int] = {}
    n_aborted = 0
    for bc, aborted in _map_chunks(worker, cfg.n_paths):
        n_aborted += aborted
        for k in np.nonzero(bc)[0]:
            counts[int(k)] = counts.get(int(k), 0) + int(bc[k])
    return PmfEstimate(t=t, n_paths=cfg.n_paths, n_aborted=n_aborted, counts=counts)


# ---------------------------------------------------------------------------
# first-passage and downcrossing estimators (vectorised, per-jump stepping)
# ---------------------------------------------------------------------------


def _outer_advance(m: ComposedModel, state: np.ndarray, rng) -> np.ndarray:
    """Full-lane one-unit advance of the outer chain (mask applied by caller)."""
    safe = np.maximum(state, 1)
    if isinstance(m, (IteratedBirth, BirthAtPoisson)):
        return state + rng.negative_binomial(safe, math.exp(-m.alpha), size=state.size)
    if isinstance(m, DeathAtPoisson):
        return rng.binomial(np.maximum(state, 0), math.exp(-m.mu), size=state.size)
    if isinstance(m, SublinearDeathAtPoisson):
        w = np.maximum(m.n0 + 1 - state, 1)
        w = w + rng.negative_binomial(w, math.exp(-m.mu), size=state.size)
        return np.maximum(m.n0 + 1 - w, 0)
    raise TypeError(f"unsupported model {type(m).__name__}")


def _validate_sim_level(m: ComposedModel, k: int) -> None:
    if isinstance(m, (IteratedBirth, BirthAtPoisson)):
        if k < 2:
            raise ValueError(f"level must be >= 2 for upward passage, got {k}")
        if k > STATE_CAP:
            raise ValueError(f"level {k} exceeds the state cap {STATE_CAP}")
    elif isinstance(m, (DeathAtPoisson, SublinearDeathAtPoisson)):
        if not 0 <= k <= m.n0 - 1:
            raise ValueError(f"level must lie in 0..{m.n0 - 1}, got {k}")
    else:
        raise TypeError(f"unsupported model {type(m).__name__}")


def estimate_fpt(
    m: ComposedModel, level: int, cfg: SimConfig, n_bins: int = 50
) -> FptEstimate:
    """Estimate Pr{T_level <= t_max} and a histogram of hit times.

    A lane scores a hit only when a jump lands exactly on ``level``;
    jumping over it is a miss (the path can never return for birth
    models, nor climb back for death models).  Lanes still in play at
    t_max are censored and counted separately.  The estimate is meant
    to be compared with the integral of the analytic first-passage
    density over [0, t_max], not with Pr{T_level < infinity}.
    """
    _validate_sim_level(m, level)
    iterated = isinstance(m, IteratedBirth)
    upward = isinstance(m, (IteratedBirth, BirthAtPoisson))
    edges = np.linspace(0.0, cfg.t_max, n_bins + 1)

    def worker(chunk_index: int, size: int):
        rng = _chunk_stream(cfg.seed, chunk_index)
        t = np.zeros(size)
        if iterated:
            inner = np.ones(size, dtype=np.int64)
            state = 1 + rng.negative_binomial(1, math.exp(-m.alpha), size=size)
        else:
            inner = np.zeros(size, dtype=np.int64)
            state = np.full(size, m.n0, dtype=np.int64)
        # a time-0 value equal to the level is not a jump landing
        active = (state < level) if upward else (state > level)
        hit_times: list[np.ndarray] = []
        n_hits = 0
        n_censored = 0
        n_aborted = 0
        iterations = 0
        while active.any():
            iterations += 1
            if iterations > EXPLOSION_EVENTS:
                n_aborted += int(active.sum())
                break
            if iterated:
                scale = 1.0 / (m.lam * inner)
            else:
                scale = np.full(size, 1.0 / m.lam)
            t_new = t + rng.exponential(scale)
            censored = active & (t_new > cfg.t_max)
            n_censored += int(censored.sum())
            live = active & ~censored
            proposal = _outer_advance(m, state, rng)
            if upward:
                blown = live & (proposal > STATE_CAP)
                n_aborted += int(blown.sum())
                live &= ~blown
            hits = live & (proposal == level)
            if hits.any():
                n_hits += int(hits.sum())
                hit_times.append(t_new[hits])
            t = np.where(live, t_new, t)
            state = np.where(live, proposal, state)
            inner = inner + live
            if upward:
                active = live & (state < level)
            else:
                active = live & (state > level)
        all_hits = (
            np.concatenate(hit_times) if hit_times else np.empty(0, dtype=np.float64)
        )
        hist, _ = np.histogram(all_hits, bins=edges)
        return n_hits, n_censored, n_aborted, hist

    n_hits = 0
    n_censored = 0
    n_aborted = 0
    hist = np.zeros(n_bins, dtype=np.int64)
    for h, c, a, hh in _map_chunks(worker, cfg.n_paths):
        n_hits += h
        n_censored += c
        n_aborted += a
        hist += hh
    n_eff = cfg.n_paths - n_aborted
    p = n_hits / n_eff
    est = EmpiricalEstimate(p, math.sqrt(p * (1.0 - p) / n_eff), n_eff)
    return FptEstimate(
        level=level,
        t_max=cfg.t_max,
        cdf_at_horizon=est,
        hist_counts=tuple(int(x) for x in hist),
        bin_edges=tuple(float(x) for x in edges),
        n_hits=n_hits,
        n_censored=n_censored,
        n_aborted=n_aborted,
        n_paths=cfg.n_paths,
    )


def estimate_downcrossing(
    m: SublinearDeathAtPoisson, level: int, cfg: SimConfig
) -> list[EmpiricalEstimate]:
    """Empirical Pr{V_level > t} at each cfg.eval_times.

    V_level is the first time the state is at or below ``level``
    (jumping over the level counts as a crossing, unlike first passage).
    """
    if not isinstance(m, SublinearDeathAtPoisson):
        raise TypeError("downcrossing estimation applies to the sublinear model")
    if not 0 <= level <= m.n0 - 1:
        raise ValueError(f"level must lie in 0..{m.n0 - 1}, got {level}")
    if not cfg.eval_times:
        raise ValueError("cfg.eval_times must be nonempty")
    times = np.asarray(cfg.eval_times)

    def worker(chunk_index: int, size: int):
        rng = _chunk_stream(cfg.seed, chunk_index)
        t = np.zeros(size)
        state = np.full(size, m.n0, dtype=np.int64)
        crossing = np.full(size, np.inf)
        active = np.ones(size, dtype=bool)
        horizon = times[-1]
        while active.any():
            t_new = t + rng.exponential(1.0 / m.lam, size=size)
            live = active & (t_new <= horizon)
            proposal = _outer_advance(m, state, rng)
            crossed = live & (proposal <= level)
            crossing[crossed] = t_new[crossed]
            t = np.where(live, t_new, t)
            state = np.where(live, proposal, state)
            active = live & ~crossed
        return (crossing[None, :] > times[:, None]).sum(axis=1)

    surviving = np.zeros(times.size, dtype=np.int64)
    for s in _map_chunks(worker, cfg.n_paths):
        surviving += s
    out = []
    n = cfg.n_paths
    for count in surviving:
        p = count / n
        out.append(EmpiricalEstimate(p, math.sqrt(p * (1.0 - p) / n), n))
    return out

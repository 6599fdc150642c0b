"""Command-line front end.

Subcommands
-----------
pmf       evaluate a model's distribution at a fixed time
hitprob   closed-form hitting probabilities, optionally swept over a parameter
simulate  Monte Carlo estimates (pmf / first passage / downcrossing)
verify    run the ODE, kernel, and identity check suites
figures   emit the standard hitting-probability data tables as CSV

Output is CSV (RFC-4180 body preceded by ``#``-prefixed metadata lines)
or JSON (one object per record).  Numbers are printed with 17
significant digits so doubles round-trip losslessly.  Exit codes:
0 success, 1 a check failed or too many paths aborted, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

from . import __version__
from .composed import pmf_table
from .models import (
    BirthAtPoisson,
    DeathAtPoisson,
    IteratedBirth,
    SublinearDeathAtPoisson,
)
from .params import DEFAULT_CONTROL, SeriesControl
from .passage import (
    birth_at_poisson_hitprob,
    death_at_poisson_hitprob,
    iterated_birth_hitprob,
)
from .simulate import (
    SimConfig,
    dump_paths,
    estimate_downcrossing,
    estimate_fpt,
    estimate_pmf,
    path_stream,
    sample_composed,
)
from .verify import run_suite

_MODELS = (
    "iterated-birth",
    "birth-at-poisson",
    "death-at-poisson",
    "sublinear-death-at-poisson",
)

# fraction of aborted paths above which a simulation exits nonzero
_ABORT_LIMIT = 1e-3


class OutputRecord:
    """One emitted table: command echo, parameters, rows, metadata."""

    def __init__(self, command: str, params: dict, columns: list, rows: list,
                 metadata: dict):
        self.command = command
        self.params = params
        self.columns = columns
        self.rows = rows
        self.metadata = dict(metadata)
        self.metadata.setdefault("tool", f"popproc {__version__}")


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def render_csv(rec: OutputRecord) -> str:
    buf = io.StringIO()
    buf.write(f"# command: {rec.command}\n")
    for key in sorted(rec.params):
        buf.write(f"# param {key} = {_fmt(rec.params[key])}\n")
    for key in sorted(rec.metadata):
        buf.write(f"# {key} = {_fmt(rec.metadata[key])}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(rec.columns)
    for row in rec.rows:
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def render_json(rec: OutputRecord) -> str:
    payload = {
        "command": rec.command,
        "params": rec.params,
        "columns": rec.columns,
        "rows": [list(r) for r in rec.rows],
        "metadata": rec.metadata,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _emit(rec: OutputRecord, args) -> None:
    text = render_json(rec) if args.format == "json" else render_csv(rec)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _control(args) -> SeriesControl:
    if args.tol is None:
        return DEFAULT_CONTROL
    if not 0 < args.tol < 1:
        raise ValueError(f"--tol must lie in (0, 1), got {args.tol}")
    return SeriesControl(rel_tol=args.tol, abs_tol=min(args.tol * 1e-3, 1e-15))


def _need(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_"), None) is None]
    if missing:
        flags = ", ".join("--" + ("lambda" if n == "lam" else n) for n in missing)
        raise ValueError(f"model {args.model!r} requires {flags}")


def _build_model(args):
    if args.model == "iterated-birth":
        _need(args, "alpha", "lam")
        return IteratedBirth(alpha=args.alpha, lam=args.lam)
    if args.model == "birth-at-poisson":
        _need(args, "alpha", "lam")
        return BirthAtPoisson(alpha=args.alpha, lam=args.lam, n0=args.n0 or 1)
    if args.model == "death-at-poisson":
        _need(args, "mu", "lam", "n0")
        return DeathAtPoisson(mu=args.mu, lam=args.lam, n0=args.n0)
    if args.model == "sublinear-death-at-poisson":
        _need(args, "mu", "lam", "n0")
        return SublinearDeathAtPoisson(mu=args.mu, lam=args.lam, n0=args.n0)
    raise ValueError(f"unknown model {args.model!r}")


def _parse_k_spec(spec: str) -> list[int]:
    """Parse a level list like '2,3,4' or '0..19' (both forms may be mixed)."""
    out: list[int] = []
    for token in spec.split(","):
        token = token.strip()
        if ".." in token:
            lo, hi = token.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError(f"empty level range {token!r}")
            out.extend(range(lo, hi + 1))
        elif token:
            out.append(int(token))
    if not out:
        raise ValueError(f"no levels in {spec!r}")
    return out


def _parse_sweep(spec: str):
    name, _, values = spec.partition("=")
    name = name.strip()
    if name not in ("alpha", "n0", "mu"):
        raise ValueError(f"--sweep supports alpha, mu, or n0, got {name!r}")
    cast = int if name == "n0" else float
    vals = [cast(v) for v in values.split(",") if v.strip()]
    if not vals:
        raise ValueError(f"no sweep values in {spec!r}")
    return name, vals


def _echo(args) -> str:
    return " ".join(args._argv)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_pmf(args) -> int:
    model = _build_model(args)
    ctl = _control(args)
    table = pmf_table(model, args.t, ctl)
    entries = table.entries
    if args.kmax is not None:
        entries = tuple(e for e in entries if e[0] <= args.kmax)
    rows = [(k, p) for k, p in entries]
    unbounded = isinstance(model, (IteratedBirth, BirthAtPoisson))
    if unbounded:
        shown = math.fsum(p for _, p in rows)
        rows.append(("truncation_mass", max(0.0, 1.0 - shown)))
    rec = OutputRecord(
        command=_echo(args),
        params={"model": args.model, "t": args.t, **_model_params(model)},
        columns=["k", "prob"],
        rows=rows,
        metadata={"rel_tol": ctl.rel_tol, "abs_tol": ctl.abs_tol},
    )
    _emit(rec, args)
    return 0


def _model_params(model) -> dict:
    out = {}
    for name in ("alpha", "lam", "mu", "n0"):
        if hasattr(model, name):
            out["lambda" if name == "lam" else name] = getattr(model, name)
    return out


def _hitprob_for(args, k, ctl):
    """Hitting probabilities do not involve the inner clock rate."""
    if args.model == "iterated-birth":
        _need(args, "alpha")
        return iterated_birth_hitprob(args.alpha, k, ctl)
    if args.model == "birth-at-poisson":
        _need(args, "alpha")
        if args.n0 not in (None, 1):
            raise ValueError("birth-at-poisson hitting probabilities require n0=1")
        return birth_at_poisson_hitprob(args.alpha, k, ctl)
    if args.model == "death-at-poisson":
        _need(args, "mu", "n0")
        return death_at_poisson_hitprob(args.mu, args.n0, k, ctl)
    raise ValueError(
        "hitting probabilities are not defined for the sublinear model; "
        "its level crossings are downcrossings (see simulate --estimate downcross)"
    )


def cmd_hitprob(args) -> int:
    ctl = _control(args)
    levels = _parse_k_spec(args.k)
    sweep = _parse_sweep(args.sweep) if args.sweep else None
    columns = ["k", "prob", "method", "terms_used"]
    rows = []
    params = {"model": args.model}
    for name in ("alpha", "mu", "n0"):
        if getattr(args, name) is not None:
            params[name] = getattr(args, name)
    if sweep is None:
        for k in levels:
            r = _hitprob_for(args, k, ctl)
            rows.append((k, r.prob, r.method, r.terms_used))
    else:
        name, values = sweep
        columns = [name] + columns
        params["sweep"] = args.sweep
        params.pop(name, None)
        for v in values:
            setattr(args, name, v)
            for k in levels:
                r = _hitprob_for(args, k, ctl)
                rows.append((v, k, r.prob, r.method, r.terms_used))
    rec = OutputRecord(
        command=_echo(args),
        params=params,
        columns=columns,
        rows=rows,
        metadata={"rel_tol": ctl.rel_tol, "abs_tol": ctl.abs_tol},
    )
    _emit(rec, args)
    return 0


def cmd_simulate(args) -> int:
    model = _build_model(args)
    eval_times = ()
    if args.eval_times:
        eval_times = tuple(float(x) for x in args.eval_times.split(",") if x.strip())
    t_max = args.tmax
    if t_max is None:
        candidates = [args.t if args.t is not None else 0.0, *eval_times]
        top = max(candidates)
        t_max = top if top > 0 else 1.0
    cfg = SimConfig(
        seed=args.seed, n_paths=args.paths, t_max=t_max, eval_times=eval_times
    )
    meta = {"seed": args.seed, "n_paths": args.paths, "t_max": t_max}
    aborted = 0
    if args.estimate == "pmf":
        if args.t is None:
            raise ValueError("--estimate pmf requires --t")
        est = estimate_pmf(model, args.t, cfg)
        aborted = est.n_aborted
        rows = []
        for k in est.support():
            e = est.probability(k)
            rows.append((k, e.value, e.stderr))
        mean = est.mean()
        rows.append(("mean", mean.value, mean.stderr))
        columns = ["k", "estimate", "stderr"]
        meta.update(t=args.t, n_aborted=aborted, n_effective=est.n_effective)
    elif args.estimate == "fpt":
        if args.k is None:
            raise ValueError("--estimate fpt requires --k LEVEL")
        level = int(args.k)
        est = estimate_fpt(model, level, cfg, n_bins=args.bins)
        aborted = est.n_aborted
        columns = ["quantity", "value", "stderr"]
        rows = [
            ("cdf_at_horizon", est.cdf_at_horizon.value, est.cdf_at_horizon.stderr),
            ("n_hits", est.n_hits, 0.0),
            ("n_censored", est.n_censored, 0.0),
            ("n_aborted", est.n_aborted, 0.0),
        ]
        for i, c in enumerate(est.hist_counts):
            lo, hi = est.bin_edges[i], est.bin_edges[i + 1]
            rows.append((f"hits_in[{lo:.10g},{hi:.10g})", c, 0.0))
        meta.update(level=level, n_bins=args.bins)
    elif args.estimate == "downcross":
        if args.k is None:
            raise ValueError("--estimate downcross requires --k LEVEL")
        if not isinstance(model, SublinearDeathAtPoisson):
            raise ValueError("--estimate downcross applies to sublinear-death-at-poisson")
        if not eval_times:
            raise ValueError("--estimate downcross requires --eval-times")
        level = int(args.k)
        ests = estimate_downcrossing(model, level, cfg)
        columns = ["t", "survival", "stderr"]
        rows = [(t, e.value, e.stderr) for t, e in zip(cfg.eval_times, ests)]
        meta.update(level=level)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown estimate {args.estimate!r}")
    if args.dump_paths:
        records = (
            sample_composed(model, cfg, path_stream(cfg.seed, i))
            for i in range(cfg.n_paths)
        )
        lines = dump_paths(records, args.dump_paths)
        meta.update(dumped_jump_lines=lines, dump_file=args.dump_paths)
    rec = OutputRecord(
        command=_echo(args),
        params={"model": args.model, **_model_params(model)},
        columns=columns,
        rows=rows,
        metadata=meta,
    )
    _emit(rec, args)
    frac = aborted / args.paths
    if frac > _ABORT_LIMIT:
        print(
            f"error: {aborted} of {args.paths} paths aborted "
            f"({100 * frac:.3f}% > {100 * _ABORT_LIMIT}%)",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_verify(args) -> int:
    kwargs = {}
    for name in ("mu", "lam", "alpha", "n0"):
        v = getattr(args, name)
        if v is not None:
            kwargs[name] = v
    reports = run_suite(args.suite, **kwargs)
    text = json.dumps(reports, indent=2, sort_keys=True) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    failed = [r["check"] for r in reports if not r["pass"]]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_figures(args) -> int:
    import os
    import warnings

    from .errors import CancellationWarning

    os.makedirs(args.out, exist_ok=True)
    ctl = _control(args)
    alphas = (0.25, 0.5, 1.0, 2.0)
    written = []

    def write(name, columns, rows, params):
        rec = OutputRecord(
            command=_echo(args),
            params=params,
            columns=columns,
            rows=rows,
            metadata={"rel_tol": ctl.rel_tol},
        )
        path = os.path.join(args.out, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_csv(rec))
        written.append(path)

    # bulk sweeps hit the ill-conditioned corner of the finite forms at
    # large k by construction; the series fallback is routine here
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CancellationWarning)
        write(
            "fig1.csv",
            ["alpha", "k", "prob"],
            [
                (a, k, iterated_birth_hitprob(a, k, ctl).prob)
                for a in alphas
                for k in range(2, 31)
            ],
            {"model": "iterated-birth", "k": "2..30"},
        )
        write(
            "fig2.csv",
            ["alpha", "k", "prob"],
            [
                (a, k, birth_at_poisson_hitprob(a, k, ctl).prob)
                for a in alphas
                for k in range(2, 31)
            ],
            {"model": "birth-at-poisson", "k": "2..30"},
        )
        write(
            "fig3.csv",
            ["n0", "k", "prob"],
            [
                (n0, k, death_at_poisson_hitprob(0.5, n0, k, ctl).prob)
                for n0 in (5, 10, 20, 50)
                for k in range(n0)
            ],
            {"model": "death-at-poisson", "mu": 0.5, "k": "0..n0-1"},
        )
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--format", choices=("csv", "json"), default="csv", help="output format"
    )
    common.add_argument("--out", default="-", help="output file ('-' for stdout)")
    common.add_argument(
        "--tol",
        type=float,
        default=None,
        help="relative series tolerance (default 1e-12; absolute floor 1e-15)",
    )

    modelargs = argparse.ArgumentParser(add_help=False)
    modelargs.add_argument("--model", choices=_MODELS, required=True)
    modelargs.add_argument("--alpha", type=float, help="birth rate per individual")
    modelargs.add_argument(
        "--lambda", dest="lam", type=float, help="inner clock rate"
    )
    modelargs.add_argument("--mu", type=float, help="death rate parameter")
    modelargs.add_argument("--n0", type=int, help="initial population size")

    parser = argparse.ArgumentParser(
        prog="popproc",
        description="Population processes evaluated at random times: "
        "exact laws, passage times, simulation, verification.",
    )
    parser.add_argument(
        "--version", action="version", version=f"popproc {__version__}"
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser(
        "pmf", parents=[common, modelargs], help="distribution at a fixed time"
    )
    p.add_argument("--t", type=float, required=True, help="evaluation time")
    p.add_argument("--kmax", type=int, default=None, help="largest state to print")
    p.set_defaults(func=cmd_pmf)

    p = sub.add_parser(
        "hitprob", parents=[common, modelargs], help="closed-form hitting probabilities"
    )
    p.add_argument("--k", required=True, help="levels, e.g. '2,3,4' or '0..19'")
    p.add_argument("--sweep", default=None, help="e.g. 'alpha=0.25,0.5,1,2' or 'n0=5,10'")
    p.set_defaults(func=cmd_hitprob)

    p = sub.add_parser(
        "simulate", parents=[common, modelargs], help="Monte Carlo estimation"
    )
    p.add_argument("--seed", type=int, default=12345, help="root RNG seed")
    p.add_argument("--paths", type=int, default=100_000, help="number of paths")
    p.add_argument("--tmax", type=float, default=None, help="simulation horizon")
    p.add_argument("--t", type=float, default=None, help="pmf evaluation time")
    p.add_argument(
        "--eval-times", default=None, help="comma-separated times for downcrossing"
    )
    p.add_argument(
        "--estimate", choices=("pmf", "fpt", "downcross"), default="pmf"
    )
    p.add_argument("--k", type=int, default=None, help="target level for fpt/downcross")
    p.add_argument("--bins", type=int, default=50, help="histogram bins for fpt")
    p.add_argument(
        "--dump-paths", default=None, metavar="FILE",
        help="also write per-jump path lines (path_id, time, state) to FILE",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", parents=[common], help="run verification suites")
    p.add_argument(
        "--suite", choices=("all", "ode", "identities", "kernels"), default="all"
    )
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--n0", type=int, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("figures", help="emit hitting-probability data tables")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--tol",
        type=float,
        default=None,
        help="relative series tolerance (default 1e-12)",
    )
    p.set_defaults(func=cmd_figures)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = list(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line experiments.

Exit codes: 0 success, 2 usage error, 3 domain error, 4 numeric non-convergence.
Every file written with ``--out`` gets a sibling ``<out>.manifest.json`` that
``assassin-sim replay`` re-executes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import analytics, stats
from .ba_engine import Free, DiesAt, parse_root, sample_batch
from .core import (
    CensorPolicy,
    DomainError,
    InfiniteMomentError,
    ModelParams,
    NonConvergenceError,
    parse_killing,
)
from .rumor_engine import (
    CompletePendant,
    InitMode,
    RumorConfig,
    read_edge_list,
    sample_N_n_distribution,
)

SCHEMA_VERSION = 1
EXIT_USAGE, EXIT_DOMAIN, EXIT_NUMERIC = 2, 3, 4
REFERENCE_SEED_OFFSET = 0x9E3779B97F4A7C15


def fmt(x) -> str:
    """Round-trippable number formatting (17 significant digits)."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "INF" if x > 0 else "-INF"
    return format(x, ".17g")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if math.isnan(x) else ("INF" if math.isinf(x) else x)
    return x


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


class Output:
    """Writes the main artifact to ``--out`` (plus manifest) or to stdout."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = argv
        self.started = time.perf_counter()

    def emit(self, text: str) -> None:
        out = getattr(self.args, "out", None)
        if out is None:
            sys.stdout.write(text)
            return
        path = Path(out)
        path.write_text(text)
        params = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "out")}
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "artifact_version": __version__,
            "command": self.args.command,
            "argv": list(self.argv),
            "parameters": params,
            "master_seed": getattr(self.args, "seed", None),
            "replicas": _replica_count(self.args),
            "output": path.name,
            "wall_time_s": round(time.perf_counter() - self.started, 3),
        }
        Path(str(path) + ".manifest.json").write_text(_dump_json(manifest))

    def note(self, text: str) -> None:
        """Human-readable side output; stdout when the artifact goes to a file."""
        stream = sys.stdout if getattr(self.args, "out", None) else sys.stderr
        stream.write(text)


def _replica_count(args):
    for name in ("replicas", "mc_replicas"):
        if getattr(args, name, None) is not None:
            return getattr(args, name)
    return None


def _policy(args) -> CensorPolicy:
    return CensorPolicy(args.max_particles, args.max_time)


def reference_seed(seed: int) -> int:
    """Master seed of the limit-process sample, decorrelated from the finite-n streams."""
    return (seed + REFERENCE_SEED_OFFSET) % 2**64


# Commands -------------------------------------------------------------------

def cmd_ba_sample(args, out: Output) -> int:
    params = ModelParams(args.lam)
    root = parse_root(args.root)
    batch = sample_batch(params, root, _policy(args), args.seed, args.replicas)
    rows = [
        (i, n, e, c)
        for i, (n, e, c) in enumerate(zip(batch.n_born, batch.extinction_time, batch.censored))
    ]
    summary = stats.summarize(batch.n_born.astype(float), int(batch.censored.sum())) \
        if args.replicas >= 2 else None
    ref = None
    if isinstance(root, Free) and args.lam <= 0.25:
        ref = analytics.mean_N(args.lam)
    if args.format == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": "ba-sample",
            "rows": [
                {"replica_index": i, "n_born": n, "extinction_time": e, "censored": c}
                for i, n, e, c in rows
            ],
            "summary": {
                **(summary.as_dict() if summary else {"count": len(rows)}),
                "closed_form_mean": ref,
            },
        }
        out.emit(_dump_json(doc))
    else:
        out.emit(_csv_text(["replica_index", "n_born", "extinction_time", "censored"], rows))
        if summary is not None:
            out.note(
                f"mean_n_born={fmt(summary.mean)} stderr={fmt(summary.stderr)} "
                f"censored={summary.censored_count} closed_form_mean={fmt(ref)}\n")
    return 0


def cmd_moments(args, out: Output) -> int:
    rows = []
    if args.mode == "mc":
        batch = sample_batch(ModelParams(args.lam), Free(), _policy(args), args.seed, args.replicas)
        n = batch.n_born.astype(float)
        for k in range(1, args.p + 1):
            s = stats.summarize(n ** k, int(batch.censored.sum()))
            finite = args.lam < analytics.moment_threshold(k) or (k == 1 and args.lam <= 0.25)
            rows.append((k, s.mean, s.stderr, finite))
        out.emit(_csv_text(["k", "mc_estimate", "mc_stderr", "analytic_finite"], rows))
        return 0
    for k in range(1, args.p + 1):
        try:
            if args.mode == "recursion":
                value = analytics.moment_N(args.lam, k)
            else:
                closed = {1: analytics.mean_N, 2: analytics.second_moment_N,
                          3: analytics.third_moment_N}.get(k)
                value = closed(args.lam) if closed else None
        except InfiniteMomentError:
            value = math.inf
        rows.append((k, value))
    out.emit(_csv_text(["k", args.mode.replace("-", "_")], rows))
    return 0


def _parse_k_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"k-range must be LO:HI, got {text!r}") from None
    if not 1 <= lo <= hi:
        raise argparse.ArgumentTypeError("k-range needs 1 <= LO <= HI")
    return lo, hi


def cmd_tail(args, out: Output) -> int:
    gamma = analytics.gamma_exponent(args.lam)
    lo, hi = args.k_range
    if hi >= args.replicas:
        raise DomainError("k-range upper end must be below the replica count")
    batch = sample_batch(ModelParams(args.lam), Free(), _policy(args), args.seed, args.replicas)
    rng = np.random.default_rng([args.seed, 2**32])
    x = stats.jitter(batch.n_born, rng)
    curve = stats.hill_curve(x, hi)
    ks = np.arange(1, hi + 1)
    rows = [(k, g, gamma) for k, g in zip(ks[lo - 1:], curve[lo - 1:])]
    out.emit(_csv_text(["k", "gamma_hat", "gamma_analytic"], rows))
    window = float(np.mean(curve[lo - 1:]))
    out.note(f"hill_window_mean={fmt(window)} gamma_analytic={fmt(gamma)} "
             f"relative_error={fmt(abs(window - gamma) / gamma)} censored={int(batch.censored.sum())}\n")
    if gamma > 20:
        warnings.warn(f"tail exponent {gamma:.4g} is large; Hill estimates need very large samples")
    return 0


def cmd_stability(args, out: Output) -> int:
    killing = parse_killing(args.killing)
    v = analytics.classify_stability(args.lam, killing)
    extra = " boundary=true" if v.boundary else ""
    out.emit(f"verdict={v.verdict.value} criterion={fmt(v.criterion_value)} "
             f"argmin={fmt(v.argmin)}{extra}\n")
    return 0


def cmd_extinction(args, out: Output) -> int:
    prof = analytics.extinction_profile(args.lam, args.horizon, args.step)
    text = _csv_text(["t", "pi"], zip(prof.grid, prof.values))
    pi0 = float(prof.values[0])
    summary = {"pi0": pi0, "solver_survival": 1.0 - pi0, "iterations": prof.iterations}
    if args.mc_replicas > 0:
        policy = _policy(args)
        batch = sample_batch(ModelParams(args.lam), Free(), policy, args.seed, args.mc_replicas)
        est = stats.extinction_frequency(batch, policy)
        summary.update(mc_survived_fraction=est.survived_fraction, mc_stderr=est.stderr,
                       abs_diff=abs(est.survived_fraction - (1.0 - pi0)))
    out.emit(text)
    out.note(" ".join(f"{k}={fmt(v)}" for k, v in summary.items()) + "\n")
    return 0


def cmd_laplace(args, out: Output) -> int:
    prof = analytics.laplace_profile(args.lam, args.theta, args.horizon, args.step)
    value = float(prof(args.t))
    rows = [("solver", value, "")]
    if args.mc_replicas > 0:
        batch = sample_batch(ModelParams(args.lam), DiesAt(args.t), _policy(args), args.seed,
                             args.mc_replicas)
        s = stats.summarize(np.exp(-args.theta * batch.n_born.astype(float)))
        rows.append(("mc", s.mean, s.stderr))
    out.emit(_csv_text(["source", "laplace", "stderr"], rows))
    return 0


def _rumor_config(args, n: int) -> RumorConfig:
    topo = CompletePendant()
    if args.topology != "complete":
        if not args.topology.startswith("file="):
            raise DomainError(f"topology must be 'complete' or 'file=PATH', got {args.topology!r}")
        topo = read_edge_list(args.topology[len("file="):])
        n = topo.n_vertices - 1
    return RumorConfig(n, args.lam, topo, args.infection_scale, InitMode(args.init))


def cmd_rumor_sample(args, out: Output) -> int:
    config = _rumor_config(args, args.n)
    batch = sample_N_n_distribution(config, args.replicas, _policy(args), args.seed,
                                    args.force_root_recovery)
    rows = [
        (i, n, t, c)
        for i, (n, t, c) in enumerate(zip(batch.n_recovered, batch.absorption_time, batch.censored))
    ]
    header = ["replica_index", "n_recovered", "absorption_time", "censored"]
    if args.format == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": "rumor-sample",
            "rows": [dict(zip(header, r)) for r in rows],
        }
        out.emit(_dump_json(doc))
    else:
        out.emit(_csv_text(header, rows))
    return 0


def _parse_n_list(text: str) -> list[int]:
    try:
        ns = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"n-list must be comma-separated integers: {text!r}") from None
    if not ns:
        raise argparse.ArgumentTypeError("n-list is empty")
    if any(n < 1 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
        raise argparse.ArgumentTypeError("n-list must be positive and strictly increasing")
    return ns


def cmd_converge(args, out: Output) -> int:
    policy = _policy(args)
    if args.lam <= 0.25:
        root = Free() if args.t is None else DiesAt(args.t)
        ref = sample_batch(ModelParams(args.lam), root, policy, reference_seed(args.seed),
                           args.replicas)
        rows = []
        for n in args.n_list:
            # common replica streams across n
            b = sample_N_n_distribution(RumorConfig(n, args.lam), args.replicas, policy,
                                        args.seed, args.t)
            s = stats.summarize(b.n_recovered.astype(float))
            ks = stats.ks_two_sample(b.n_recovered, ref.n_born)
            rows.append((n, s.mean, s.stderr, ks.distance, ks.critical_1pct))
        out.emit(_csv_text(["n", "mean_n_recovered", "stderr", "ks_distance", "ks_critical_1pct"],
                           rows))
        return 0
    rows = []
    for n in args.n_list:
        b = sample_N_n_distribution(RumorConfig(n, args.lam), args.replicas, policy,
                                    args.seed, args.t)
        hit = b.n_recovered >= args.delta * n
        p = float(hit.mean())
        rows.append((n, args.delta, p, math.sqrt(p * (1 - p) / len(hit))))
    out.emit(_csv_text(["n", "delta", "p_large_outbreak", "stderr"], rows))
    return 0


def cmd_replay(args, out: Output) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        argv = list(manifest["argv"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DomainError(f"unreadable manifest {args.manifest}: {exc}") from None
    if argv and argv[0] == "replay":
        raise DomainError("a manifest cannot replay another replay")
    if args.out is not None:
        # redirect the artifact so it can be diffed against the original
        argv = [a for a in _drop_out(argv)] + ["--out", args.out]
    return main(argv)


def _drop_out(argv):
    skip = False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        yield a


# Parser ---------------------------------------------------------------------

def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text):
    v = int(text) if text.lstrip("-").isdigit() else None
    if v is None or v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _seed(text):
    v = _nonneg_int(text)
    if v >= 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="assassin-sim",
        description="Birth-and-assassination and rumor scotching experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, replicas=True, seed=True, caps=True):
        p.add_argument("--lambda", dest="lam", type=float, required=True)
        if replicas:
            p.add_argument("--replicas", type=_positive_int, default=10000)
        if seed:
            p.add_argument("--seed", type=_seed, default=0)
        if caps:
            p.add_argument("--max-particles", type=_positive_int, default=10**6)
            p.add_argument("--max-time", type=_positive_float, default=1e4)
        p.add_argument("--out")

    p = sub.add_parser("ba-sample", help="sample total progeny of the birth-and-assassination process")
    common(p)
    p.add_argument("--root", default="free", help="free | at-risk-at=T | dies-at=T")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_ba_sample)

    p = sub.add_parser("moments", help="moments E N^k for k <= p")
    common(p)
    p.add_argument("--p", type=_positive_int, required=True)
    p.add_argument("--mode", choices=("closed-form", "recursion", "mc"), default="recursion")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("tail", help="Hill plot of the progeny tail against the analytic exponent")
    common(p, replicas=False)
    p.add_argument("--replicas", type=_positive_int, default=10**5)
    p.add_argument("--k-range", type=_parse_k_range, default=(100, 1000))
    p.set_defaults(func=cmd_tail)

    p = sub.add_parser("stability", help="stability verdict from min over u of lambda*mgf(u)/u")
    common(p, replicas=False, seed=False, caps=False)
    p.add_argument("--killing", default="exp:1", help="exp:MU | det:K | gamma:S,R")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("extinction", help="extinction profile fixed point, optional MC comparison")
    common(p, replicas=False)
    p.add_argument("--horizon", type=_positive_float, default=40.0)
    p.add_argument("--step", type=_positive_float, default=0.01)
    p.add_argument("--mc-replicas", type=_nonneg_int, default=0)
    p.set_defaults(func=cmd_extinction)

    p = sub.add_parser("laplace", help="Laplace transform of Y(t), optional MC comparison")
    common(p, replicas=False)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--horizon", type=_positive_float, default=40.0)
    p.add_argument("--step", type=_positive_float, default=0.01)
    p.add_argument("--mc-replicas", type=_nonneg_int, default=0)
    p.set_defaults(func=cmd_laplace)

    p = sub.add_parser("rumor-sample", help="sample N_n of the rumor scotching process")
    common(p)
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--topology", default="complete", help="complete | file=PATH")
    p.add_argument("--init", choices=[m.value for m in InitMode], default="paper")
    p.add_argument("--force-root-recovery", type=float, default=None, metavar="T")
    p.add_argument("--infection-scale", type=_positive_float, default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_rumor_sample)

    p = sub.add_parser("converge", help="finite-n rumor process versus the limit process")
    common(p)
    p.add_argument("--n-list", type=_parse_n_list, required=True)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--delta", type=_positive_float, default=0.05)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write the replayed artifact here instead of the recorded path")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, Output(args, argv))
    except DomainError as exc:
        print(f"assassin-sim: domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except InfiniteMomentError as exc:
        print(f"assassin-sim: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except NonConvergenceError as exc:
        print(f"assassin-sim: {exc} (residual {exc.residual:.3g})", file=sys.stderr)
        return EXIT_NUMERIC


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()

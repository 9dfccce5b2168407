"""Batch experiment runner.

Every subcommand writes a table with columns ``n,N,kind,restriction,stat,value,se``
(CSV, or JSON with the same rows) and, when ``--out`` is given, a
``<out>.manifest.json`` holding the resolved configuration, the package
version, the wall-clock duration and SHA-256 checksums of every output file.
``gfftight replay <manifest>`` reruns a manifest and checks the checksums.

Exit codes: 0 success, 1 internal failure (or replay mismatch), 2 invalid
configuration, 3 resource cap exceeded.  Errors print one line on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .covariance import (
    ComparisonReport,
    empirical_vs_exact,
    gff_mbrw_comparison,
    lemma22_check,
)
from .extremes import (
    BridgeBarrier,
    bridge_decay,
    count_barrier_events,
    fit_expected_max,
    lefttail_decay,
    max_stats,
    tightness_report,
)
from .fields import FieldKind, FieldSample, ScaleWindow, make_sampler
from .green import dirichlet_green, torus_green, write_kernel_csv
from .lattice import GridSpec
from .replicates import MAX_SIDE_ENV, ResourceCapError, check_side, replicate_rng

COLUMNS = ("n", "N", "kind", "restriction", "stat", "value", "se")
EXIT_INTERNAL, EXIT_CONFIG, EXIT_CAP = 1, 2, 3


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


@dataclass
class Row:
    n: int | None
    N: int | None
    kind: str
    restriction: str
    stat: str
    value: float
    se: float = float("nan")


def _scale_of(N: int | None) -> int | None:
    if N is None or N < 1 or N & (N - 1):
        return None
    return N.bit_length() - 1


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def render_rows(rows: list[Row], fmt: str, extra: dict | None = None) -> str:
    if fmt == "json":
        payload = {"rows": [{c: getattr(r, c) for c in COLUMNS} for r in rows]}
        if extra:
            payload.update(extra)
        return json.dumps(payload, indent=1, sort_keys=True, default=_json_default, allow_nan=True) + "\n"
    buf = io.StringIO()
    buf.write(",".join(COLUMNS) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(getattr(r, c)) for c in COLUMNS) + "\n")
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, ComparisonReport):
        return o.to_dict()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------- arguments


def _int_list(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def _float_list(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")


def _common(p: argparse.ArgumentParser, stochastic: bool = True, seed_required: bool = True) -> None:
    if stochastic:
        p.add_argument("--seed", type=int, required=seed_required, default=None)
        p.add_argument("--reps", type=int, default=1000)
        p.add_argument("--workers", type=int, default=1, help="process count (does not change results)")
    p.add_argument("--out", help="output path (stdout when omitted; no manifest then)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--max-side", type=int, default=None,
                   help=f"grid side cap (default 512, or ${MAX_SIDE_ENV})")


def _field_args(p, choices=("gff", "tgff", "brw", "mbrw"), default="gff") -> None:
    p.add_argument("--field", choices=choices, default=default)
    p.add_argument("--k-lo", type=int, default=None, help="lowest MBRW scale kept")
    p.add_argument("--k-hi", type=int, default=None, help="highest MBRW scale kept")
    p.add_argument("--killing-q", type=float, default=None, help="TGFF per-step survival probability")
    p.add_argument("--method", choices=("factor", "spectral"), default="factor", help="GFF sampler")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gfftight", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("green", help="export an exact Green kernel")
    p.add_argument("--field", choices=("gff", "tgff"), default="gff")
    p.add_argument("--n", type=int, required=True, help="grid side N")
    p.add_argument("--killing-q", type=float, default=None)
    _common(p, stochastic=False)

    p = sub.add_parser("sample", help="dump one field realization")
    _field_args(p)
    p.add_argument("--n", type=int, required=True, help="grid side N")
    _common(p)

    p = sub.add_parser("cov-verify", help="covariance checks")
    p.add_argument("--check", choices=("profile", "empirical", "sf"), default="profile")
    _field_args(p)
    p.add_argument("--n", type=int, default=16, help="grid side N (empirical, sf)")
    p.add_argument("--N-list", type=_int_list, default=[8, 16, 32], help="grid sides (profile)")
    _common(p, seed_required=False)

    p = sub.add_parser("max-stats", help="Monte Carlo statistics of the maximum")
    _field_args(p)
    p.add_argument("--n", type=int, default=None, help="grid side N")
    p.add_argument("--N-list", type=_int_list, default=None, help="several grid sides")
    p.add_argument("--restrict", choices=("full", "inner"), default="full")
    _common(p)

    p = sub.add_parser("fit", help="fit E max = c1 n - c2 log n + c over N = 2^n")
    _field_args(p)
    p.add_argument("--n-min", type=int, default=4, help="smallest scale count n (grid side 2^n)")
    p.add_argument("--n-max", type=int, default=9, help="largest scale count n")
    _common(p)

    p = sub.add_parser("tightness", help="quantile widths of the recentered maximum")
    _field_args(p)
    p.add_argument("--N-list", type=_int_list, default=[32, 64, 128, 256])
    _common(p)

    p = sub.add_parser("barrier", help="barrier-event counts and the second-moment chain")
    p.add_argument("--n", type=int, required=True, help="number of scales")
    p.add_argument("--c5", type=float, default=10.0)
    _common(p)

    p = sub.add_parser("bridge", help="Gaussian bridge below a barrier")
    p.add_argument("--n", type=int, default=None, help="bridge length")
    p.add_argument("--n-min", type=int, default=8, help="smallest length of a doubling sequence")
    p.add_argument("--n-max", type=int, default=128, help="largest length of a doubling sequence")
    p.add_argument("--barrier", choices=("tent", "constant"), default="tent")
    p.add_argument("--level", type=float, default=2.0, help="constant barrier level")
    p.add_argument("--c5", type=float, default=10.0)
    p.add_argument("--substeps", type=int, default=1, help="walk steps per unit time")
    _common(p)

    p = sub.add_parser("left-tail", help="left tail of the maximum over V_N' below A_n")
    p.add_argument("--n", type=int, required=True, help="number of scales")
    p.add_argument("--c5", type=float, default=10.0)
    p.add_argument("--alphas", type=_float_list, default=[0.0, 2.0, 4.0, 6.0, 8.0])
    _common(p)

    p = sub.add_parser("replay", help="rerun a manifest and compare output checksums")
    p.add_argument("manifest")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="write the rerun here instead of the recorded path")
    return ap


# ------------------------------------------------------------------ commands


def _window(args, n: int | None) -> ScaleWindow | None:
    if args.k_lo is None and args.k_hi is None:
        return None
    if n is None:
        raise ConfigError("--k-lo/--k-hi need a dyadic grid side")
    return ScaleWindow(0 if args.k_lo is None else args.k_lo, n if args.k_hi is None else args.k_hi).validate(n)


def _validate_common(args) -> None:
    if getattr(args, "reps", 1) is not None and getattr(args, "reps", 1) < 1:
        raise ConfigError("--reps must be positive")
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        raise ConfigError("--workers must be positive")


def _dyadic(N: int) -> int:
    try:
        return GridSpec.from_side(N).n
    except ValueError as e:
        raise ConfigError(str(e))


def cmd_green(args) -> tuple[str, list]:
    N = args.n
    if N < 2:
        raise ConfigError("--n must be at least 2")
    check_side(N)
    if args.field == "gff":
        g = dirichlet_green(N)
    else:
        _dyadic(N)
        g = torus_green(N, args.killing_q)
    if args.format == "json":
        vals = g.values if args.field == "gff" else g.kernel
        return json.dumps({"field": args.field, "N": N, "values": vals.tolist()}) + "\n", []
    buf = io.StringIO()
    write_kernel_csv(buf, g)
    return buf.getvalue(), []


def cmd_sample(args) -> tuple[str, list]:
    N = args.n
    kind = FieldKind(args.field)
    n = None if kind is FieldKind.GFF else _dyadic(N)
    window = _window(args, n) if kind is FieldKind.MBRW else None
    sampler = make_sampler(kind, N, window=window, q=args.killing_q, method=args.method)
    values = sampler.draw([replicate_rng(args.seed, 0)])[0]
    fs = FieldSample(kind, N, values, args.seed,
                     window=getattr(sampler, "effective_window", None),
                     killing=getattr(sampler, "survival", None))
    if args.format == "json":
        return json.dumps({**fs.sidecar(), "values": values.tolist()}) + "\n", [("sidecar", fs.sidecar())]
    buf = io.StringIO()
    buf.write("x1,x2,value\n")
    for (i, j), v in np.ndenumerate(values):
        buf.write(f"{i},{j},{v:.17g}\n")
    return buf.getvalue(), [("sidecar", fs.sidecar())]


def cmd_cov_verify(args) -> tuple[str, list]:
    rows, reports = [], []
    if args.check == "profile":
        for N in args.N_list:
            n = _dyadic(N)
            check_side(4 * N, what="4N-box GFF")
            for rep in lemma22_check(N):
                reports.append(rep)
                rows.append(Row(n, N, rep.estimate_name.split("_")[0], "full", "sup_deviation", rep.sup_deviation))
                for k, v in sorted(rep.extras.items()):
                    if isinstance(v, (int, float)) and not isinstance(v, bool):
                        rows.append(Row(n, N, rep.estimate_name.split("_")[0], "full", k, float(v)))
    else:
        if args.seed is None:
            raise ConfigError("--seed is required for stochastic checks")
        N = args.n
        n = _dyadic(N)
        if args.check == "empirical":
            kind = FieldKind(args.field)
            window = _window(args, n) if kind is FieldKind.MBRW else None
            res = empirical_vs_exact(kind, N, args.reps, args.seed, args.workers, q=args.killing_q, window=window)
            for k in ("fraction_within_3se", "max_abs_diff", "max_z"):
                rows.append(Row(n, N, kind.value, "full", k, float(res[k])))
        else:
            c1, rep = gff_mbrw_comparison(N, args.reps, args.seed, args.workers)
            reports.append(rep)
            x = rep.extras
            rows += [
                Row(n, N, "mbrw+noise", "full", "C1", float(c1)),
                Row(n, N, "mbrw+noise", "full", "violations", float(x["violation_count"])),
                Row(n, N, "mbrw+noise", "full", "max_increment_deficit", rep.sup_deviation),
                Row(n, N, "mbrw+noise", "full", "mean_max", x["emax_a"], x["se_a"]),
                Row(n, N, "gff4n", "shifted", "mean_max", x["emax_b"], x["se_b"]),
                Row(n, N, "mbrw+noise", "full", "ordering_consistent", float(x["ordering_consistent"])),
            ]
    return render_rows(rows, args.format, {"reports": reports}), []


def _max_rows(s, n_override=None) -> list[Row]:
    n = _scale_of(s.N) if n_override is None else n_override
    return [Row(n, s.N, s.kind, s.restriction, stat, v, se) for stat, v, se in s.rows()]


def cmd_max_stats(args) -> tuple[str, list]:
    sides = args.N_list or ([args.n] if args.n is not None else None)
    if not sides:
        raise ConfigError("give --n or --N-list")
    rows = []
    for N in sides:
        kind = FieldKind(args.field)
        n = None if kind is FieldKind.GFF else _dyadic(N)
        window = _window(args, n) if kind is FieldKind.MBRW else None
        s = max_stats(kind, N, args.reps, args.seed, args.restrict, args.workers,
                      window=window, q=args.killing_q, method=args.method)
        rows += _max_rows(s)
    return render_rows(rows, args.format), []


def cmd_fit(args) -> tuple[str, list]:
    ns = list(range(args.n_min, args.n_max + 1))
    fit = fit_expected_max(args.field, ns, args.reps, args.seed, args.workers, args.method)
    rows = []
    for s, r in zip(fit.stats, fit.residuals):
        rows.append(Row(_scale_of(s.N), s.N, s.kind, "full", "mean_max", s.mean, s.mean_se))
        rows.append(Row(_scale_of(s.N), s.N, s.kind, "full", "residual", float(r)))
    rows += [
        Row(None, None, args.field, "full", "c1", fit.c1, fit.c1_halfwidth / 1.96),
        Row(None, None, args.field, "full", "c2", fit.c2, fit.c2_halfwidth / 1.96),
        Row(None, None, args.field, "full", "intercept", fit.intercept),
    ]
    return render_rows(rows, args.format), []


def cmd_tightness(args) -> tuple[str, list]:
    kind = FieldKind(args.field)
    window = None
    if kind is FieldKind.MBRW and (args.k_lo is not None or args.k_hi is not None):
        lo = 0 if args.k_lo is None else args.k_lo
        hi = min(_dyadic(N) for N in args.N_list) if args.k_hi is None else args.k_hi
        window = ScaleWindow(lo, hi)
        for N in args.N_list:
            window.validate(_dyadic(N))
    rep = tightness_report(kind, args.N_list, args.reps, args.seed, args.workers, window, args.method)
    rows = []
    for r in rep.rows:
        n = _scale_of(r.N)
        rows += [Row(n, r.N, rep.kind, "full", "iqr", r.iqr, r.iqr_se),
                 Row(n, r.N, rep.kind, "full", "width_5_95", r.width90, r.width90_se),
                 Row(n, r.N, rep.kind, "full", "se_unreliable", float(r.unreliable))]
    rows += [Row(None, None, rep.kind, "full", "width_ratio", rep.width_ratio),
             Row(None, None, rep.kind, "full", "iqr_ratio", rep.iqr_ratio)]
    return render_rows(rows, args.format), []


def _check_scales(n: int) -> int:
    if n < 2:
        raise ConfigError("--n must be at least 2")
    check_side(1 << n)
    return 1 << n


def cmd_barrier(args) -> tuple[str, list]:
    N = _check_scales(args.n)
    ev = count_barrier_events(args.n, args.c5, args.reps, args.seed, args.workers)
    rows = [Row(args.n, N, "mbrw", "inner", s, v, se) for s, v, se in ev.rows()]
    rows.append(Row(args.n, N, "mbrw", "inner", "chain_ok", float(ev.chain_ok())))
    return render_rows(rows, args.format), []


def cmd_bridge(args) -> tuple[str, list]:
    if args.n is not None:
        ns = [args.n]
    else:
        if args.n_min < 2 or args.n_max < args.n_min:
            raise ConfigError("need 2 <= --n-min <= --n-max")
        ns, m = [], args.n_min
        while m <= args.n_max:
            ns.append(m)
            m *= 2
    if min(ns) < 2:
        raise ConfigError("bridge length must be at least 2")
    if args.substeps < 1:
        raise ConfigError("--substeps must be positive")
    barrier = BridgeBarrier(args.barrier, args.level, args.c5)
    dec = bridge_decay(ns, barrier, args.reps, args.seed, args.substeps, args.workers)
    kind = f"bridge:{barrier.describe()}"
    rows = [Row(e.n, None, kind, "full", "prob_below", e.prob, e.se) for e in dec.estimates]
    if barrier.kind == "constant":
        rows += [Row(e.n, None, kind, "full", "continuum_reference", 1.0 - math.exp(-2.0 * args.level ** 2 / e.n)
                     if args.level > 0 else 0.0) for e in dec.estimates]
    if len(ns) > 1:
        rows.append(Row(None, None, kind, "full", "decay_slope", dec.slope, dec.slope_se))
    return render_rows(rows, args.format), []


def cmd_left_tail(args) -> tuple[str, list]:
    N = _check_scales(args.n)
    try:
        lt = lefttail_decay(args.n, args.c5, args.reps, args.alphas, args.seed, args.workers)
    except ValueError as e:
        raise ConfigError(str(e))
    rows = [Row(args.n, N, "mbrw", "inner", f"P_le_A_minus_{a:g}", float(p), float(s))
            for a, p, s in zip(lt.alphas, lt.probs, lt.ses)]
    rows.append(Row(args.n, N, "mbrw", "inner", "delta0", lt.delta0, lt.delta0_se))
    return render_rows(rows, args.format), []


COMMANDS = {
    "green": cmd_green,
    "sample": cmd_sample,
    "cov-verify": cmd_cov_verify,
    "max-stats": cmd_max_stats,
    "fit": cmd_fit,
    "tightness": cmd_tightness,
    "barrier": cmd_barrier,
    "bridge": cmd_bridge,
    "left-tail": cmd_left_tail,
}


# ------------------------------------------------------------------ running


def _sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _config_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())}


def execute(config: dict) -> list[dict]:
    """Run one resolved configuration; returns the output file records."""
    args = argparse.Namespace(**config)
    if args.max_side is None:
        return _execute(args, config)
    if args.max_side < 1:
        raise ConfigError("--max-side must be positive")
    # the cap travels through the environment so worker processes see it too
    saved = os.environ.get(MAX_SIDE_ENV)
    os.environ[MAX_SIDE_ENV] = str(args.max_side)
    try:
        return _execute(args, config)
    finally:
        if saved is None:
            del os.environ[MAX_SIDE_ENV]
        else:
            os.environ[MAX_SIDE_ENV] = saved


def _execute(args, config: dict) -> list[dict]:
    _validate_common(args)
    t0 = time.perf_counter()
    text, side = COMMANDS[args.command](args)
    elapsed = time.perf_counter() - t0
    if args.out is None:
        sys.stdout.write(text)
        return []
    outputs = []
    with open(args.out, "w", newline="") as fh:
        fh.write(text)
    outputs.append({"path": args.out, "sha256": _sha256(args.out)})
    for _, payload in side:
        p = args.out + ".json"
        with open(p, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        outputs.append({"path": p, "sha256": _sha256(p)})
    manifest = {
        "command": args.command,
        "config": config,
        "version": __version__,
        "duration_seconds": round(elapsed, 3),
        "outputs": outputs,
    }
    with open(args.out + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return outputs


def replay(path: str, workers: int | None, out: str | None) -> int:
    with open(path) as fh:
        manifest = json.load(fh)
    config = dict(manifest["config"])
    if workers is not None and "workers" in config:
        config["workers"] = workers
    if out is not None:
        config["out"] = out
    outputs = execute(config)
    recorded = [o["sha256"] for o in manifest["outputs"]]
    fresh = [o["sha256"] for o in outputs]
    if recorded != fresh:
        print(f"gfftight: replay-mismatch: {path}: outputs differ from the manifest", file=sys.stderr)
        return EXIT_INTERNAL
    print(f"replay ok: {len(fresh)} output(s) identical")
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "replay":
            return replay(args.manifest, args.workers, args.out)
        execute(_config_of(args))
        return 0
    except ResourceCapError as e:
        _diag("resource-cap", e)
        return EXIT_CAP
    except (ConfigError, ValueError, argparse.ArgumentTypeError, FileNotFoundError, KeyError) as e:
        _diag("config-error", e)
        return EXIT_CONFIG
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001
        _diag("internal-error", f"{type(e).__name__}: {e}")
        return EXIT_INTERNAL


def _diag(kind: str, msg) -> None:
    print(f"gfftight: {kind}: " + " ".join(str(msg).split()), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())

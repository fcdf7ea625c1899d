"""Command-line front end: ``holocrit {mp,wishart,estimate,direct,verify}``.

Every CSV starts with a ``# {...}`` comment line carrying the version and the
run configuration; JSON output carries them as ``version``/``config`` keys.
Thread counts and wall times live under ``runtime`` so that two runs with the
same configuration are byte-identical outside that key.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import _accel
from ._version import version_string
from .mc import DomainError, RngStream, default_workers

DEFAULT_SEED = 20240611


def _clean(obj):
    # JSON has no inf/nan; emit null and keep log-domain fields alongside
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


class Output:
    """Writes to a file path or stdout; remembers the config header."""

    def __init__(self, command, config):
        self.command = command
        self.config = config
        self.version = version_string()

    def header(self):
        return json.dumps({"command": self.command, "version": self.version, "config": _clean(self.config)}, sort_keys=True)

    def csv_text(self, columns, rows):
        buf = io.StringIO()
        buf.write(f"# {self.header()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def json_text(self, result, runtime=None):
        doc = {"command": self.command, "version": self.version, "config": self.config, "result": result}
        if runtime is not None:
            doc["runtime"] = runtime
        return json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @staticmethod
    def emit(text, path=None):
        if path in (None, "-"):
            sys.stdout.write(text)
        else:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)


def parse_grid(text):
    """``a:b:step`` -> inclusive grid."""
    try:
        a, b, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be a:b:step, got {text!r}")
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return a + step * np.arange(n)


def parse_window(text):
    from .critstats import Window

    try:
        lo, hi = text.split(":")
        return Window(float(lo), float(hi))
    except (ValueError, DomainError) as exc:
        raise argparse.ArgumentTypeError(f"window must be lower:upper with 0 <= lower < upper, got {text!r} ({exc})")


def parse_int_list(text):
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def parse_float_list(text):
    try:
        return [float(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _seed(args, parser):
    if args.seed is None:
        if os.environ.get("CI"):
            parser.error("--seed is mandatory when CI is set")
        return DEFAULT_SEED
    return args.seed


def _threads(args):
    return args.threads if args.threads is not None else default_workers()


# ---------------------------------------------------------------------------
# mp


def cmd_mp(args, parser):
    from . import mp_core as mp
    from .plotting import line_plot

    config = {k: v for k, v in vars(args).items() if k not in ("func", "out", "svg", "backend", "command")}
    out = Output("mp", config)
    if args.s_gamma is not None:
        try:
            s = mp.mp_quantile_s_gamma(args.s_gamma)
        except DomainError as exc:
            parser.error(str(exc))
        res = abs(mp.mp_tail_mass(s) - args.s_gamma)
        out.emit(out.json_text({"gamma": args.s_gamma, "s_gamma": s, "residual": res}), args.out)
        return 0
    if args.rate is not None:
        table, grid = "rate", args.rate
    elif args.table is not None:
        table, grid = args.table, args.grid or "0:4:0.01"
    else:
        parser.error("one of --table, --rate or --s-gamma is required")
    funcs = {
        "density": ("f_mp", mp.mp_density),
        "cdf": ("cdf_mp", mp.mp_cdf),
        "tail": ("tail_mass", mp.mp_tail_mass),
        "rate": ("rate_I_MP", mp.rate_I_MP),
        "phi": ("phi_mp", lambda x: np.array([mp.phi_mp(v) if v >= mp.EDGE else math.nan for v in np.atleast_1d(x)])),
    }
    col, fn = funcs[table]
    try:
        grid = parse_grid(grid)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    y = np.asarray(fn(grid), dtype=float)
    out.emit(out.csv_text(["x", col], zip(grid, y)), args.out)
    if args.svg:
        line_plot(args.svg, grid, {col: y}, "x", col, title=col, config={"version": out.version, **config})
    return 0


# ---------------------------------------------------------------------------
# wishart


def cmd_wishart(args, parser):
    from . import wishart as wi

    seed = _seed(args, parser)
    config = {"m": args.m, "n": args.n, "seed": seed, "method": args.method}
    stream = RngStream(seed)
    t0 = time.perf_counter()
    if args.smallest is not None:
        config["smallest"] = args.smallest
        out = Output("wishart", config)
        rows = wi.smallest_eig_frequencies(args.m, args.smallest, args.n, stream, method=args.method)
        out.emit(out.csv_text(["x", "empirical", "exact", "stderr"], [[r["x"], r["empirical"], r["exact"], r["stderr"]] for r in rows]), args.out)
        return 0
    if args.kth_tail is not None:
        k, x = args.kth_tail
        config["kth_tail"] = [int(k), x]
        out = Output("wishart", config)
        try:
            est = wi.estimate_kth_tail(args.m, int(k), x, args.n, stream, method=args.method, workers=_threads(args))
        except DomainError as exc:
            parser.error(str(exc))
        out.emit(out.json_text(est.to_dict(), {"threads": _threads(args), "seconds": time.perf_counter() - t0}), args.out)
        return 0
    out = Output("wishart", config)
    spectra = wi.sample_spectra(args.m, args.n, stream, method=args.method, workers=_threads(args))
    if args.spectra:
        cols = [f"lambda_{i + 1}" for i in range(args.m)]
        out.emit(out.csv_text(cols, spectra.tolist()), args.out)
        return 0
    result = {"ks_distance_to_mp": wi.ks_distance_to_mp(spectra), "mean_trace": float(spectra.sum(1).mean())}
    if args.concentration is not None:
        g, eps = args.concentration
        result["concentration"] = {"gamma": g, "eps": eps, "failure_frequency": wi.concentration_check(args.m, g, eps, args.n, stream.child(1), method=args.method)}
    out.emit(out.json_text(result, {"threads": _threads(args), "seconds": time.perf_counter() - t0}), args.out)
    return 0


# ---------------------------------------------------------------------------
# estimate


def _oracle(m, N, k, window):
    from . import critstats as cs

    if k != m:
        return None
    hi = cs.expected_index_m_tail(m, N, window.upper) if math.isfinite(window.upper) else 0.0
    return cs.expected_index_m_tail(m, N, window.lower) - hi


def cmd_estimate(args, parser):
    from . import critstats as cs
    from .plotting import line_plot

    seed = _seed(args, parser)
    threads = _threads(args)
    t0 = time.perf_counter()
    if args.rate_curve is not None:
        which = args.rate_curve
        if which not in ("total", "saddle"):
            try:
                which = int(which)
            except ValueError:
                parser.error("--rate-curve takes total, saddle or an integer k")
        if args.x is None:
            parser.error("--rate-curve needs --x")
        m_list = args.m if isinstance(args.m, list) else [args.m]
        config = {"rate_curve": args.rate_curve, "N": args.N, "x": args.x, "m": m_list, "n": args.n, "seed": seed, "side": args.side, "method": args.method}
        out = Output("estimate", config)
        method = "conditional" if args.method == "auto" else args.method
        try:
            pts = cs.empirical_rate_curve(args.N, which, args.x, m_list, args.n, RngStream(seed), side=args.side, method=method, workers=threads)
        except DomainError as exc:
            parser.error(str(exc))
        rows = [[p.m, p.empirical_rate, p.analytic_rate] for p in pts]
        out.emit(out.csv_text(["m", "empirical_rate", "analytic_rate"], rows), args.out)
        if args.svg:
            line_plot(
                args.svg,
                [p.m for p in pts],
                {"empirical": [p.empirical_rate for p in pts], "analytic": [p.analytic_rate for p in pts]},
                "m",
                "(1/m) log E N",
                title=f"rate curve {args.rate_curve}, N={args.N}, x={args.x}",
                config={"version": out.version, **config},
                markers=True,
            )
        return 0

    if isinstance(args.m, list):
        if len(args.m) != 1:
            parser.error("a list of m values is only accepted with --rate-curve")
        args.m = args.m[0]
    m, N = args.m, args.N
    window = args.window
    config = {"m": m, "N": N, "k": args.k, "window": [window.lower, window.upper], "n": args.n, "seed": seed, "method": args.method, "exact": args.exact}
    out = Output("estimate", config)
    try:
        if args.exact:
            if args.k == "total" or int(args.k) != m:
                parser.error("--exact is available only for k = m")
            value = _oracle(m, N, m, window)
            result = {"exact": value, "log_total": cs.log_expected_index_m_total(m, N)}
            out.emit(out.json_text(result), args.out)
            return 0
        if args.k == "total":
            est = cs.mc_expected_count_total(m, N, window, args.n, RngStream(seed), method="plain" if args.method == "auto" else args.method, workers=threads)
            oracle = None
        else:
            k = int(args.k)
            est = cs.mc_expected_count_index(m, k, N, window, args.n, RngStream(seed), method=args.method, workers=threads)
            oracle = _oracle(m, N, k, window)
    except DomainError as exc:
        parser.error(str(exc))
    result = est.to_dict()
    result["oracle"] = oracle
    result["z"] = est.zscore(oracle) if oracle is not None and est.mean is not None else None
    out.emit(out.json_text(result, {"threads": threads, "seconds": time.perf_counter() - t0, "backend": _accel.backend_name()}), args.out)
    return 0


# ---------------------------------------------------------------------------
# direct


def cmd_direct(args, parser):
    from . import critstats as cs
    from . import fieldsim as fs
    from .mc import combined_z

    if args.m > fs.MAX_DIRECT_M:
        parser.error(f"direct counting is limited to m <= {fs.MAX_DIRECT_M} (m={args.m} requested): the number of critical points and the Newton budget grow too fast")
    seed = _seed(args, parser)
    threads = _threads(args)
    t0 = time.perf_counter()
    m, N = args.m, args.N
    if args.verify_covariances:
        config = {"m": m, "N": N, "n": args.n, "seed": seed, "verify_covariances": True}
        out = Output("direct", config)
        rep = fs.covariance_selftest(m, N, args.n, RngStream(seed))
        result = {
            "cells": [c.to_dict() for c in rep.cells],
            "max_z": rep.max_z,
            "grad_density_empirical": rep.grad_density_empirical,
            "grad_density_exact": rep.grad_density_exact,
            "grad_density_rel_error": rep.density_rel_error,
            "passed": rep.passed(),
        }
        out.emit(out.json_text(result, {"seconds": time.perf_counter() - t0}), args.json)
        return 0

    config = {"m": m, "N": N, "sections": args.sections, "seed": seed, "starts": args.starts, "window": [args.window.lower, args.window.upper]}
    out = Output("direct", config)
    table = fs.direct_count_table(m, N, args.sections, RngStream(seed), starts=args.starts, workers=threads)
    if args.csv:
        fs.write_critical_points_csv(args.csv, table, header_comment=out.header())
    by_index = []
    for k in range(m + 1):
        d = table.estimate(k, args.window)
        row = {"index": 2 * m - k, "k": k, "mean": d.mean, "stderr": d.stderr}
        if args.compare_wishart:
            w = cs.mc_expected_count_index(m, k, N, args.window, args.draws, RngStream(seed, 1), workers=threads)
            row.update({"wishart_mean": w.mean, "wishart_stderr": w.stderr, "z": combined_z(d, w)})
        by_index.append(row)
    total = table.total(args.window)
    result = {
        "by_index": by_index,
        "total": {"mean": total.mean, "stderr": total.stderr},
        "sections_used": table.n_sections - len(table.flagged),
        "instability_rate": table.instability_rate(),
        "flagged_sections": table.flagged,
        "degenerate_points": table.n_degenerate,
    }
    if args.compare_wishart:
        w = cs.mc_expected_count_total(m, N, args.window, args.draws, RngStream(seed, 2), workers=threads)
        result["total"].update({"wishart_mean": w.mean, "wishart_stderr": w.stderr, "z": combined_z(total, w)})
    out.emit(out.json_text(result, {"threads": threads, "seconds": time.perf_counter() - t0, "backend": _accel.backend_name()}), args.json)
    return 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args, parser):
    from . import acceptance as acc

    names = None
    if args.only:
        names = [n for chunk in args.only for n in chunk.split(",") if n]
        unknown = [n for n in names if n not in acc.CHECKS]
        if unknown:
            parser.error(f"unknown check(s) {', '.join(unknown)}; choose from {', '.join(acc.CHECKS)}")
    seed = _seed(args, parser)
    results = acc.run_checks(names, seed=seed, scale=args.scale, workers=_threads(args), echo=print)
    failed = [r.name for r in results if not r.passed]
    if args.json:
        doc = {
            "version": version_string(),
            "config": {"seed": seed, "scale": args.scale, "only": names},
            "checks": [r.to_dict() for r in results],
            "passed": not failed,
        }
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(_clean(doc), fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="holocrit", description="Critical points of random holomorphic sections via Wishart statistics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {version_string()}")
    p.add_argument("--backend", choices=("numba", "numpy"), help="kernel backend (default from HOLOCRIT_NUMBA)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("mp", help="Marchenko-Pastur tables, quantiles and rate function")
    sp.add_argument("--table", choices=("density", "cdf", "tail", "rate", "phi"))
    sp.add_argument("--grid", help="a:b:step (default 0:4:0.01)")
    sp.add_argument("--rate", metavar="A:B:STEP", help="tabulate I_MP on a grid")
    sp.add_argument("--s-gamma", type=float, help="tail quantile s_gamma as JSON")
    sp.add_argument("--out", help="output path (default stdout)")
    sp.add_argument("--svg", help="also write an SVG plot")
    sp.set_defaults(func=cmd_mp)

    sp = sub.add_parser("wishart", help="sample Wishart spectra and check exact laws")
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--method", choices=("auto", "dense", "tridiagonal"), default="auto")
    sp.add_argument("--smallest", type=parse_float_list, help="x values for P((m/2) lambda_m >= x)")
    sp.add_argument("--kth-tail", nargs=2, type=float, metavar=("K", "X"), help="plain MC of P(lambda_k >= x)")
    sp.add_argument("--concentration", nargs=2, type=float, metavar=("GAMMA", "EPS"))
    sp.add_argument("--spectra", action="store_true", help="dump the sampled spectra as CSV")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_wishart)

    sp = sub.add_parser("estimate", help="expected critical point counts (Monte Carlo and exact)")
    sp.add_argument("--m", type=parse_int_list, required=True, help="m, or a comma list with --rate-curve")
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--k", default="total", help="k (index 2m-k) or 'total'")
    sp.add_argument("--window", type=parse_window, default=parse_window("0:inf"))
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--method", choices=("auto", "plain", "conditional", "dense", "tridiagonal"), default="auto")
    sp.add_argument("--exact", action="store_true", help="closed form only (k = m)")
    sp.add_argument("--rate-curve", help="total, saddle or an integer k")
    sp.add_argument("--x", type=float)
    sp.add_argument("--side", choices=("above", "below"), default="above")
    sp.add_argument("--out")
    sp.add_argument("--svg")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("direct", help="count critical points of simulated sections")
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--sections", type=int, default=2000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--starts", type=int, help="first Newton batch size (default 50 x expected count)")
    sp.add_argument("--window", type=parse_window, default=parse_window("0:inf"))
    sp.add_argument("--csv", help="per-critical-point CSV")
    sp.add_argument("--json", help="summary JSON path (default stdout)")
    sp.add_argument("--verify-covariances", action="store_true")
    sp.add_argument("--n", type=int, default=10_000, help="draws for --verify-covariances")
    sp.add_argument("--compare-wishart", action="store_true")
    sp.add_argument("--draws", type=int, default=100_000, help="Wishart draws for --compare-wishart")
    sp.set_defaults(func=cmd_direct)

    sp = sub.add_parser("verify", help="run the acceptance suite")
    sp.add_argument("--only", action="append", help="check name(s), comma separated or repeated")
    sp.add_argument("--json", help="write a machine-readable report")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--scale", type=float, default=1.0, help="sample-size multiplier; below 1 is a smoke run only")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.backend:
        _accel.set_backend(args.backend)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    if args.command in ("estimate", "direct") and getattr(args, "N", 2) < 2:
        sub.error("N must be >= 2")
    if getattr(args, "m", None) is not None and args.command != "estimate" and args.m < 1:
        sub.error("m must be >= 1")
    return args.func(args, sub)


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance checks, each runnable on its own and at its stated tolerance.

``run_checks`` drives ``holocrit verify`` and ``tests/test_acceptance.py``.
``scale < 1`` shrinks sample sizes for smoke runs; only ``scale = 1`` is an
acceptance run.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import integrate

from . import critstats as cs
from . import fieldsim as fs
from . import mp_core as mp
from . import wishart as wi
from .mc import RngStream, binomial_stderr, combined_z

DEFAULT_SEED = 20240611


@dataclass
class CheckResult:
    name: str
    passed: bool
    tolerance: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<18} {self.tolerance}"

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "tolerance": self.tolerance, "details": self.details, "seconds": self.seconds}


def _n(base, scale, floor=10):
    return max(floor, int(round(base * scale)))


def check_smallest_eig(seed, scale=1.0):
    n = _n(10_000, scale)
    rows = []
    ok = True
    for i, m in enumerate((1, 5, 20)):
        for r in wi.smallest_eig_frequencies(m, (0.01, 0.05, 0.1), n, RngStream(seed, 100 + i)):
            z = (r["empirical"] - r["exact"]) / r["stderr"]
            rows.append({"m": m, **r, "z": z})
            ok &= abs(z) <= 3.0
    return ok, "|empirical - exp(-m x)| <= 3 binomial stderr", {"n": n, "rows": rows}


def check_saddle_density(seed, scale=1.0):
    rows = []
    ok = True
    for m, N in ((1, 2), (3, 3), (10, 4)):
        log_total = cs.log_expected_index_m_total(m, N)
        c = cs.saddle_exponent(m, N)

        def dens(x):
            return math.exp(cs.log_density_index_m(m, N, x) - log_total)

        val, _ = integrate.quad(dens, 0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
        rel = abs(val - 1.0)
        rows.append({"m": m, "N": N, "quadrature_over_closed_form": val, "rel_error": rel, "decay": c})
        ok &= rel <= 1e-8
    gen = np.random.default_rng(seed)
    pipe = []
    for _ in range(20):
        m = int(gen.integers(1, 200))
        N = int(gen.integers(2, 12))
        x = float(gen.uniform(0.0, 3.0))
        a = cs.log_density_index_m_via_smallest_eig(m, N, x)
        b = cs.log_density_index_m(m, N, x)
        rel = abs(math.expm1(a - b))
        pipe.append({"m": m, "N": N, "x": x, "rel_error": rel})
        ok &= rel <= 1e-10
    return ok, "quadrature rel err <= 1e-8; pipeline rel err <= 1e-10", {"quadrature": rows, "pipeline": pipe}


def check_end_to_end(seed, scale=1.0, workers=None):
    sections = _n(2000, scale)
    draws = _n(100_000, scale, 1000)
    rows = []
    ok = True
    for i, (m, N) in enumerate(((1, 2), (1, 3), (2, 3))):
        table = fs.direct_count_table(m, N, sections, RngStream(seed, 300 + i), workers=workers)
        wstream = RngStream(seed, 310 + i)
        for k in range(m + 1):
            d = table.estimate(k)
            w = cs.mc_expected_count_index(m, k, N, cs.Window(), draws, wstream, workers=workers)
            z = combined_z(d, w)
            rows.append({"m": m, "N": N, "k": k, "index": 2 * m - k, "direct": d.mean, "direct_se": d.stderr, "wishart": w.mean, "wishart_se": w.stderr, "z": z})
            ok &= abs(z) <= 3.0
        rows.append({"m": m, "N": N, "flagged_sections": len(table.flagged), "degenerate_points": table.n_degenerate})
    return ok, "|direct - wishart| <= 3 combined stderr for every index", {"sections": sections, "draws": draws, "rows": rows}


def check_covariance(seed, scale=1.0):
    n = _n(10_000, scale)
    rows = []
    ok = True
    for i, (m, N) in enumerate(((1, 2), (2, 3), (3, 4))):
        rep = fs.covariance_selftest(m, N, n, RngStream(seed, 400 + i))
        rows.append({"m": m, "N": N, "cells": len(rep.cells), "max_z": rep.max_z, "grad_density_rel_error": rep.density_rel_error})
        ok &= rep.passed()
    return ok, "every cell within 3 stderr; grad density within 5%", {"n": n, "rows": rows}


def check_hessian_spectrum(seed, scale=1.0):
    n = _n(500, scale)
    rep = fs.hessian_spectrum_selftest(10, 3, n, RngStream(seed, 500))
    ok = rep.ks_distance < 0.05
    return ok, "two-sample KS < 0.05 at (m,N)=(10,3)", {"n": n, "ks": rep.ks_distance, "ks_pvalue": rep.ks_pvalue, "moment_z": list(rep.moment_z)}


def check_mp_identity(seed, scale=1.0):
    rows = []
    ok = True
    for x in (4.0, 4.5, 5.0, 6.0, 8.0):
        err = abs(mp.phi_mp(x) + mp.rate_I_MP(x) + 1.0)
        rows.append({"x": x, "abs_error": err})
        ok &= err <= 1e-6
    gammas = np.random.default_rng(seed).uniform(0.0, 1.0, 100)
    gammas = np.clip(gammas, 1e-6, 1 - 1e-6)
    res = [abs(mp.mp_tail_mass(mp.mp_quantile_s_gamma(g)) - g) for g in gammas]
    ok &= max(res) <= 1e-10
    return ok, "identity err <= 1e-6; quantile residual <= 1e-10", {"identity": rows, "max_quantile_residual": max(res)}


def check_rate_convergence(seed, scale=1.0):
    rows = []
    ok = True
    for N in (2, 3, 5):
        for m in (50, 100, 200, 500):
            gap = abs(cs.log_expected_index_m_total(m, N) / m - math.log(N - 1))
            bound = 2.0 * math.log(m + 1) / m
            rows.append({"N": N, "m": m, "gap": gap, "bound": bound})
            ok &= gap <= bound
    return ok, "|(1/m) log E - log(N-1)| <= 2 log(m+1)/m", {"rows": rows}


def check_ldp_slope(seed, scale=1.0, workers=None):
    N = 3
    x = 3.0  # x_N = 4.5
    n = _n(100_000, scale, 200)
    xn = cs.x_scaled(N, x)
    psi = cs.psi(N, xn)
    I = mp.rate_I_MP(xn)
    candidates = {"psi-I": psi - I, "psi+I": psi + I, "psi-2I": psi - 2 * I}
    pts = cs.empirical_rate_curve(N, "total", x, (50, 100, 200, 400), n, RngStream(seed, 800), workers=workers)
    rows = [{"m": p.m, "empirical_rate": p.empirical_rate, "rel_stderr": p.estimate.rel_stderr if p.estimate else None} for p in pts]
    last = pts[-1].empirical_rate
    dists = {k: abs(last - v) for k, v in candidates.items()}
    ok = dists["psi-I"] <= 0.05 and dists["psi-I"] < dists["psi+I"] and dists["psi-I"] < dists["psi-2I"]
    return ok, "m=400 gap to psi-I <= 0.05 and psi-I is the closest candidate", {"n": n, "candidates": candidates, "rows": rows, "distances_at_400": dists}


def check_mp_convergence(seed, scale=1.0):
    n_ks = _n(20, scale, 2)
    n_conc = _n(200, scale)
    spectra = wi.sample_spectra(200, n_ks, RngStream(seed, 900))
    ks = wi.ks_distance_to_mp(spectra)
    freq = wi.concentration_check(200, 0.5, 0.1, n_conc, RngStream(seed, 901))
    ok = ks < 0.05 and freq <= 0.01
    return ok, "pooled KS < 0.05; concentration failure <= 1%", {"ks": ks, "concentration_failure": freq, "draws_ks": n_ks, "draws_conc": n_conc}


CHECKS: Dict[str, Callable] = {
    "smallest-eig": check_smallest_eig,
    "saddle-density": check_saddle_density,
    "end-to-end": check_end_to_end,
    "covariance": check_covariance,
    "hessian-spectrum": check_hessian_spectrum,
    "mp-identity": check_mp_identity,
    "rate-convergence": check_rate_convergence,
    "ldp-slope": check_ldp_slope,
    "mp-convergence": check_mp_convergence,
}

_TAKES_WORKERS = {"end-to-end", "ldp-slope"}


def run_check(name: str, seed: int = DEFAULT_SEED, scale: float = 1.0, workers=None) -> CheckResult:
    if name not in CHECKS:
        raise KeyError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")
    kw = {"workers": workers} if name in _TAKES_WORKERS else {}
    t0 = time.perf_counter()
    ok, tol, details = CHECKS[name](seed, scale, **kw)
    return CheckResult(name, bool(ok), tol, details, time.perf_counter() - t0)


def run_checks(names: Optional[List[str]] = None, seed: int = DEFAULT_SEED, scale: float = 1.0, workers=None, echo=None) -> List[CheckResult]:
    out = []
    for name in names or list(CHECKS):
        res = run_check(name, seed, scale, workers)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out

"""Hot loops, each with a numba kernel and a vectorised numpy twin.

Field kernels
    A section is a homogeneous polynomial ``p(Z) = sum_t c_t Z^{E_t}`` in
    ``M = m + 1`` variables. In chart ``i`` (``Z_i = 1``) the function
    ``g = log|p|^2 - N log(1 + |z|^2)`` is ``log ||s||_h^2``; its complex
    gradient ``G``, the blocks ``A = d^2 g / dz dz`` and ``B = d^2 g/dz dzbar``
    and the real ``2m x 2m`` Hessian are assembled from the derivatives of ``p``.

Conditional top-eigenvalue kernels
    Given the tridiagonal model ``(d, e)`` of one Wishart draw of dimension
    ``M``, integrate the top eigenvalue out against its conditional density
    ``prod_{j>=2} (t - lambda_j) exp(-M t / 2)`` on ``t > lambda_2``. The numba
    path never diagonalises: it uses Sturm counts for ``lambda_1, lambda_2`` and
    the LDL pivots of ``tI - T`` for the deflated log-determinant.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from . import _accel
from ._accel import njit

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
PANELS = 4
DROP = 45.0  # nats below the maximum at which the integrand is truncated


# ---------------------------------------------------------------------------
# homogeneous polynomial evaluation


def derivative_tables(E):
    """Exponent/factor tables for first and second ``Z``-derivatives of monomials."""
    E = np.asarray(E, dtype=np.int64)
    T, M = E.shape
    E1 = np.zeros((M, T, M), np.int64)
    F1 = np.zeros((M, T))
    E2 = np.zeros((M, M, T, M), np.int64)
    F2 = np.zeros((M, M, T))
    for a in range(M):
        ea = E.copy()
        ea[:, a] -= 1
        F1[a] = E[:, a]
        E1[a] = np.maximum(ea, 0)
        for b in range(M):
            eab = ea.copy()
            eab[:, b] -= 1
            F2[a, b] = E[:, a] * (E[:, b] - (1 if a == b else 0))
            E2[a, b] = np.maximum(eab, 0)
    return E1, F1, E2, F2


def _powers_np(Z, N):
    S, M = Z.shape
    pw = np.empty((S, M, N + 1), dtype=complex)
    pw[..., 0] = 1.0
    for k in range(1, N + 1):
        pw[..., k] = pw[..., k - 1] * Z
    return pw


def eval_homog_np(c, E, tabs, Z, N):
    """``p``, ``dp/dZ`` and ``d^2 p/dZ dZ`` at each row of ``Z`` (shape ``(S, M)``)."""
    E1, F1, E2, F2 = tabs
    M = Z.shape[1]
    pw = _powers_np(Z, N)
    cols = np.arange(M)
    p = pw[:, cols, E].prod(-1) @ c
    g = (pw[:, cols, E1].prod(-1) * F1) @ c
    h = (pw[:, cols, E2].prod(-1) * F2) @ c
    return p, g, h


_OTHERS = {}


def others_table(M):
    if M not in _OTHERS:
        _OTHERS[M] = np.array([[j for j in range(M) if j != i] for i in range(M)], dtype=np.int64)
    return _OTHERS[M]


def chart_terms_np(p, g, h, Z, chart, N):
    """Complex gradient ``G``, blocks ``A`` and ``Theta``, real Hessian and real gradient."""
    S, M = Z.shape
    m = M - 1
    oth = others_table(M)[chart]
    rows = np.arange(S)[:, None]
    z = Z[rows, oth]
    df = g[rows, oth]
    d2f = h[rows[:, :, None], oth[:, :, None], oth[:, None, :]]
    r = 1.0 + (np.abs(z) ** 2).sum(1)
    zc = z.conj()
    u = df / p[:, None]
    G = u - N * zc / r[:, None]
    A = d2f / p[:, None, None] - u[:, :, None] * u[:, None, :] + N * zc[:, :, None] * zc[:, None, :] / (r**2)[:, None, None]
    Theta = N * (r[:, None, None] * np.eye(m) - zc[:, :, None] * z[:, None, :]) / (r**2)[:, None, None]
    H = np.empty((S, 2 * m, 2 * m))
    H[:, :m, :m] = 2.0 * (A.real - Theta.real)
    H[:, m:, m:] = -2.0 * (A.real + Theta.real)
    hxy = -2.0 * (A.imag + Theta.imag)
    H[:, :m, m:] = hxy
    H[:, m:, :m] = hxy.transpose(0, 2, 1)
    grad = np.concatenate([2.0 * G.real, -2.0 * G.imag], axis=1)
    return G, A, Theta, H, grad


def _normalise_chart(Z, chart):
    piv = Z[np.arange(Z.shape[0]), chart]
    return Z / piv[:, None]


def initial_charts(Z, start_chart):
    if start_chart is None or start_chart < 0:
        return np.argmax(np.abs(Z), axis=1)
    chart = np.full(Z.shape[0], int(start_chart), dtype=np.int64)
    # a start sitting on the chart's hyperplane cannot be expressed there
    weak = np.abs(Z[np.arange(Z.shape[0]), chart]) < 1e-8 * np.abs(Z).max(axis=1)
    chart[weak] = np.argmax(np.abs(Z[weak]), axis=1)
    return chart


def _batched_solve(H, rhs):
    try:
        return np.linalg.solve(H, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(rhs)
        for i in range(H.shape[0]):
            out[i] = np.linalg.lstsq(H[i], rhs[i], rcond=None)[0]
        return out


def newton_np(c, E, tabs, N, Z0, tol, max_iter, max_step, switch_radius, start_chart):
    Z = np.array(Z0, dtype=complex)
    S, M = Z.shape
    m = M - 1
    chart = initial_charts(Z, start_chart)
    Z = _normalise_chart(Z, chart)
    oth_tab = others_table(M)
    conv = np.zeros(S, bool)
    dead = np.zeros(S, bool)
    resid = np.full(S, np.inf)
    iters = np.zeros(S, np.int64)
    for it in range(max_iter + 1):
        idx = np.nonzero(~(conv | dead))[0]
        if idx.size == 0:
            break
        Za = Z[idx]
        ca = chart[idx]
        with np.errstate(all="ignore"):
            p, g, h = eval_homog_np(c, E, tabs, Za, N)
            G, _, _, H, grad = chart_terms_np(p, g, h, Za, ca, N)
            res = np.sqrt((np.abs(G) ** 2).sum(1))
        bad = ~np.isfinite(res) | (p == 0)
        done = ~bad & (res <= tol)
        resid[idx] = res
        conv[idx[done]] = True
        dead[idx[bad]] = True
        iters[idx] = it
        go = ~(bad | done)
        if it == max_iter or not go.any():
            break
        gi = idx[go]
        step = -_batched_solve(H[go], grad[go])
        norms = np.sqrt((step**2).sum(1))
        scale = np.where(norms > max_step, max_step / np.maximum(norms, 1e-300), 1.0)
        step *= scale[:, None]
        dz = step[:, :m] + 1j * step[:, m:]
        rows = np.arange(gi.size)[:, None]
        Zg = Z[gi]
        oth = oth_tab[chart[gi]]
        Zg[rows, oth] += dz
        mags = np.abs(Zg)
        new = np.argmax(mags, axis=1)
        switch = mags[np.arange(gi.size), new] > switch_radius
        if switch.any():
            chart[gi[switch]] = new[switch]
            Zg[switch] = _normalise_chart(Zg[switch], new[switch])
        Z[gi] = Zg
        dead[gi[~np.all(np.isfinite(Zg), axis=1)]] = True
    return Z, chart, resid, conv, iters


@njit
def _eval_point_nb(c, E, E1, F1, E2, F2, Zp, N, pw, grad, hess):
    M = Zp.shape[0]
    T = c.shape[0]
    for l in range(M):
        pw[l, 0] = 1.0
        for k in range(1, N + 1):
            pw[l, k] = pw[l, k - 1] * Zp[l]
    p = 0j
    for t in range(T):
        mono = 1.0 + 0j
        for l in range(M):
            mono *= pw[l, E[t, l]]
        p += c[t] * mono
    for a in range(M):
        s = 0j
        for t in range(T):
            if F1[a, t] != 0.0:
                mono = 1.0 + 0j
                for l in range(M):
                    mono *= pw[l, E1[a, t, l]]
                s += c[t] * F1[a, t] * mono
        grad[a] = s
        for b in range(a, M):
            s = 0j
            for t in range(T):
                if F2[a, b, t] != 0.0:
                    mono = 1.0 + 0j
                    for l in range(M):
                        mono *= pw[l, E2[a, b, t, l]]
                    s += c[t] * F2[a, b, t] * mono
            hess[a, b] = s
            hess[b, a] = s
    return p


@njit
def _chart_terms_nb(p, grad, hess, Zp, chart, N, G, H, rg):
    M = Zp.shape[0]
    m = M - 1
    oth = np.empty(m, np.int64)
    j = 0
    for l in range(M):
        if l != chart:
            oth[j] = l
            j += 1
    r = 1.0
    for a in range(m):
        za = Zp[oth[a]]
        r += za.real * za.real + za.imag * za.imag
    res2 = 0.0
    for a in range(m):
        za = Zp[oth[a]]
        G[a] = grad[oth[a]] / p - N * za.conjugate() / r
        res2 += G[a].real * G[a].real + G[a].imag * G[a].imag
        rg[a] = 2.0 * G[a].real
        rg[m + a] = -2.0 * G[a].imag
    r2 = r * r
    for a in range(m):
        ua = grad[oth[a]] / p
        za = Zp[oth[a]]
        for b in range(m):
            ub = grad[oth[b]] / p
            zb = Zp[oth[b]]
            A = hess[oth[a], oth[b]] / p - ua * ub + N * za.conjugate() * zb.conjugate() / r2
            th = -N * za.conjugate() * zb / r2
            if a == b:
                th += N * r / r2
            H[a, b] = 2.0 * (A.real - th.real)
            H[m + a, m + b] = -2.0 * (A.real + th.real)
            H[a, m + b] = -2.0 * (A.imag + th.imag)
            H[m + b, a] = H[a, m + b]
    return math.sqrt(res2)


@njit
def _solve_small(A, b, x):
    # Gaussian elimination with partial pivoting on copies; returns False if singular
    n = b.shape[0]
    M = A.copy()
    v = b.copy()
    for k in range(n):
        piv = k
        best = abs(M[k, k])
        for i in range(k + 1, n):
            if abs(M[i, k]) > best:
                best = abs(M[i, k])
                piv = i
        if best < 1e-300:
            return False
        if piv != k:
            for j in range(n):
                tmp = M[k, j]
                M[k, j] = M[piv, j]
                M[piv, j] = tmp
            tmp = v[k]
            v[k] = v[piv]
            v[piv] = tmp
        for i in range(k + 1, n):
            f = M[i, k] / M[k, k]
            for j in range(k, n):
                M[i, j] -= f * M[k, j]
            v[i] -= f * v[k]
    for i in range(n - 1, -1, -1):
        s = v[i]
        for j in range(i + 1, n):
            s -= M[i, j] * x[j]
        x[i] = s / M[i, i]
    return True


@njit
def _newton_nb(c, E, E1, F1, E2, F2, N, Z0, charts0, tol, max_iter, max_step, switch_radius):
    S, M = Z0.shape
    m = M - 1
    Z = Z0.copy()
    chart = charts0.copy()
    resid = np.full(S, np.inf)
    conv = np.zeros(S, np.bool_)
    iters = np.zeros(S, np.int64)
    pw = np.empty((M, N + 1), np.complex128)
    grad = np.empty(M, np.complex128)
    hess = np.empty((M, M), np.complex128)
    G = np.empty(m, np.complex128)
    H = np.empty((2 * m, 2 * m))
    rg = np.empty(2 * m)
    step = np.empty(2 * m)
    for s in range(S):
        ch = chart[s]
        piv = Z[s, ch]
        for l in range(M):
            Z[s, l] = Z[s, l] / piv
        for it in range(max_iter + 1):
            iters[s] = it
            p = _eval_point_nb(c, E, E1, F1, E2, F2, Z[s], N, pw, grad, hess)
            if p == 0:
                break
            res = _chart_terms_nb(p, grad, hess, Z[s], ch, N, G, H, rg)
            resid[s] = res
            if not np.isfinite(res):
                break
            if res <= tol:
                conv[s] = True
                break
            if it == max_iter:
                break
            for a in range(2 * m):
                rg[a] = -rg[a]
            if not _solve_small(H, rg, step):
                break
            nrm = 0.0
            for a in range(2 * m):
                nrm += step[a] * step[a]
            nrm = math.sqrt(nrm)
            if nrm > max_step:
                for a in range(2 * m):
                    step[a] *= max_step / nrm
            j = 0
            for l in range(M):
                if l != ch:
                    Z[s, l] += step[j] + 1j * step[m + j]
                    j += 1
            best = 0
            bmag = 0.0
            for l in range(M):
                if abs(Z[s, l]) > bmag:
                    bmag = abs(Z[s, l])
                    best = l
            if not np.isfinite(bmag):
                break
            if bmag > switch_radius:
                ch = best
                piv = Z[s, ch]
                for l in range(M):
                    Z[s, l] = Z[s, l] / piv
        chart[s] = ch
    return Z, chart, resid, conv, iters


def newton_solve(c, E, tabs, N, Z0, tol=1e-10, max_iter=100, max_step=0.5, switch_radius=1.0, start_chart=None):
    """Damped Newton on ``grad log ||s||_h^2 = 0`` from each homogeneous start row.

    Returns ``(Z, chart, resid, converged, iters)``; ``Z`` rows are scaled so
    that ``Z[chart] == 1``.
    """
    c = np.ascontiguousarray(c, dtype=complex)
    E = np.ascontiguousarray(E, dtype=np.int64)
    Z0 = np.ascontiguousarray(Z0, dtype=complex)
    if _accel.use_numba():
        E1, F1, E2, F2 = tabs
        charts = np.ascontiguousarray(initial_charts(Z0, start_chart), dtype=np.int64)
        return _newton_nb(c, E, E1, F1, E2, F2, int(N), Z0, charts, float(tol), int(max_iter), float(max_step), float(switch_radius))
    return newton_np(c, E, tabs, int(N), Z0, tol, max_iter, max_step, switch_radius, start_chart)


# ---------------------------------------------------------------------------
# conditional top-eigenvalue quadrature (numba, Sturm based)


@njit
def _sturm_below(d, e, t):
    """Number of eigenvalues of the symmetric tridiagonal ``(d, e)`` below ``t``."""
    n = d.shape[0]
    cnt = 0
    q = d[0] - t
    if q < 0.0:
        cnt += 1
    for k in range(1, n):
        if q == 0.0:
            q = 1e-300
        q = d[k] - t - e[k - 1] * e[k - 1] / q
        if q < 0.0:
            cnt += 1
    return cnt


@njit
def _top_two_nb(d, e):
    n = d.shape[0]
    lo = 0.0
    hi = 0.0
    for k in range(n):
        r = 0.0
        if k > 0:
            r += abs(e[k - 1])
        if k < n - 1:
            r += abs(e[k])
        if d[k] + r > hi:
            hi = d[k] + r
        if d[k] - r < lo:
            lo = d[k] - r
    lo -= 1e-12
    hi += 1e-12
    out = np.empty(2)
    for j in range(2):
        target = n - j
        if target < 1:
            out[j] = 0.0
            continue
        a = lo
        b = hi
        for _ in range(200):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            if _sturm_below(d, e, mid) >= target:
                b = mid
            else:
                a = mid
        out[j] = 0.5 * (a + b)
    return out[0], out[1]


@njit
def _h_nb(d, e, lam1, c, t):
    """``sum_{j>=2} log(t - lambda_j) - c t`` for ``t > lambda_2``."""
    n = d.shape[0]
    acc = 0.0
    prod = 1.0
    q = t - d[0]
    prod *= abs(q)
    for k in range(1, n):
        if q == 0.0:
            q = 1e-300
        q = t - d[k] - e[k - 1] * e[k - 1] / q
        prod *= abs(q)
        if (k & 31) == 0:
            if prod == 0.0:
                return -np.inf
            acc += math.log(prod)
            prod = 1.0
    if prod == 0.0:
        return -np.inf
    acc += math.log(prod)
    gap = abs(t - lam1)
    if gap == 0.0:
        gap = 1e-300
    return acc - math.log(gap) - c * t


@njit
def _dh_nb(d, e, lam1, c, t):
    n = d.shape[0]
    q = t - d[0]
    dq = 1.0
    s = dq / q
    for k in range(1, n):
        if q == 0.0:
            q = 1e-300
        ek2 = e[k - 1] * e[k - 1]
        dq = 1.0 + ek2 * dq / (q * q)
        q = t - d[k] - ek2 / q
        s += dq / q
    return s - 1.0 / (t - lam1) - c


@njit
def _log_integral_nb(d, e, lam1, lam2, c, L, U, xg, wg):
    """``log int_L^U exp(h(t)) dt`` with ``L >= lambda_2``; ``-inf`` if empty."""
    n = d.shape[0]
    if L < lam2:
        L = lam2
    if not U > L:
        return -np.inf
    # mode of the concave h on (lambda_2, inf)
    if L > lam2 and _dh_nb(d, e, lam1, c, L) <= 0.0:
        tm = L
    else:
        a = L
        b = lam2 + (n - 1) / c + 1e-9
        if b <= a:
            b = a + 1e-9
        while _dh_nb(d, e, lam1, c, b) > 0.0:
            b = a + 2.0 * (b - a)
        for _ in range(100):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            if _dh_nb(d, e, lam1, c, mid) > 0.0:
                a = mid
            else:
                b = mid
        tm = 0.5 * (a + b)
    if tm > U:
        tm = U
    hmax = _h_nb(d, e, lam1, c, tm)
    target = hmax - 45.0
    # left end
    ta = L
    if tm > L:
        hl = -np.inf if L <= lam2 else _h_nb(d, e, lam1, c, L)
        if hl < target:
            a = L
            b = tm
            for _ in range(100):
                mid = 0.5 * (a + b)
                if mid <= a or mid >= b:
                    break
                if _h_nb(d, e, lam1, c, mid) < target:
                    a = mid
                else:
                    b = mid
            ta = a
    # right end
    if np.isfinite(U) and _h_nb(d, e, lam1, c, U) >= target:
        tb = U
    else:
        stepw = max(tm - lam2, 1.0 / c)
        hi = tm + stepw
        while hi < U and _h_nb(d, e, lam1, c, hi) >= target:
            stepw *= 2.0
            hi = tm + stepw
        if hi > U:
            hi = U
        a = tm
        b = hi
        for _ in range(100):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            if _h_nb(d, e, lam1, c, mid) >= target:
                a = mid
            else:
                b = mid
        tb = b
    total = 0.0
    npan = 4
    for side in range(2):
        lo = ta if side == 0 else tm
        hi = tm if side == 0 else tb
        if hi <= lo:
            continue
        w = (hi - lo) / npan
        for pnl in range(npan):
            p0 = lo + pnl * w
            for q in range(xg.shape[0]):
                t = p0 + 0.5 * w * (xg[q] + 1.0)
                if t <= lam2:
                    continue
                total += 0.5 * w * wg[q] * math.exp(_h_nb(d, e, lam1, c, t) - hmax)
    if total <= 0.0:
        return -np.inf
    return hmax + math.log(total)


@njit
def _conditional_top_nb(D, Eo, lower, upper, a):
    n_draws, M = D.shape
    logc = np.empty(n_draws)
    lam1s = np.empty(n_draws)
    lam2s = np.empty(n_draws)
    half = 0.5 * M
    for i in range(n_draws):
        d = D[i]
        e = Eo[i]
        lam1, lam2 = _top_two_nb(d, e)
        if M == 1:
            lam2 = 0.0
        lam1s[i] = lam1
        lam2s[i] = lam2
        lnum = _log_integral_nb(d, e, lam1, lam2, half + a, lower, upper, GL_NODES, GL_WEIGHTS)
        if lnum == -np.inf:
            logc[i] = -np.inf
            continue
        lden = _log_integral_nb(d, e, lam1, lam2, half, lam2, np.inf, GL_NODES, GL_WEIGHTS)
        logc[i] = lnum - lden
    return logc, lam1s, lam2s


# ---------------------------------------------------------------------------
# conditional top-eigenvalue quadrature (numpy, from explicit eigenvalues)


def _log_integral_np(rest, c, L, U):
    lam2 = rest[0] if rest.size else 0.0
    n_rest = rest.size

    def h(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(t[:, None] - rest[None, :], 0.0)).sum(1) - c * t

    def dh(t):
        return float((1.0 / (t - rest)).sum() - c)

    L = max(L, lam2)
    if not U > L:
        return -math.inf
    if L > lam2 and dh(L) <= 0.0:
        tm = L
    else:
        a, b = L, max(lam2 + n_rest / c + 1e-9, L + 1e-9)
        while dh(b) > 0.0:
            b = a + 2.0 * (b - a)
        for _ in range(100):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            if dh(mid) > 0.0:
                a = mid
            else:
                b = mid
        tm = 0.5 * (a + b)
    tm = min(tm, U)
    hmax = float(h(tm)[0])
    target = hmax - DROP
    ta = L
    if tm > L:
        hl = -math.inf if L <= lam2 else float(h(L)[0])
        if hl < target:
            a, b = L, tm
            for _ in range(100):
                mid = 0.5 * (a + b)
                if mid <= a or mid >= b:
                    break
                if h(mid)[0] < target:
                    a = mid
                else:
                    b = mid
            ta = a
    if math.isfinite(U) and h(U)[0] >= target:
        tb = U
    else:
        stepw = max(tm - lam2, 1.0 / c)
        hi = tm + stepw
        while hi < U and h(hi)[0] >= target:
            stepw *= 2.0
            hi = tm + stepw
        hi = min(hi, U)
        a, b = tm, hi
        for _ in range(100):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            if h(mid)[0] >= target:
                a = mid
            else:
                b = mid
        tb = b
    ts, ws = [], []
    for lo, hi in ((ta, tm), (tm, tb)):
        if hi <= lo:
            continue
        edges = np.linspace(lo, hi, PANELS + 1)
        for p0, p1 in zip(edges[:-1], edges[1:]):
            ts.append(p0 + 0.5 * (p1 - p0) * (GL_NODES + 1.0))
            ws.append(0.5 * (p1 - p0) * GL_WEIGHTS)
    if not ts:
        return -math.inf
    ts = np.concatenate(ts)
    ws = np.concatenate(ws)
    keep = ts > lam2
    vals = np.exp(h(ts[keep]) - hmax) * ws[keep]
    total = float(vals.sum())
    return hmax + math.log(total) if total > 0 else -math.inf


def _conditional_top_np(D, Eo, lower, upper, a):
    n_draws, M = D.shape
    logc = np.empty(n_draws)
    lam1s = np.empty(n_draws)
    lam2s = np.empty(n_draws)
    half = 0.5 * M
    for i in range(n_draws):
        if M == 1:
            ev = D[i].copy()
        else:
            ev = eigvalsh_tridiagonal(D[i], Eo[i], lapack_driver="sterf")[::-1]
        rest = ev[1:]
        lam1s[i] = ev[0]
        lam2s[i] = rest[0] if rest.size else 0.0
        lnum = _log_integral_np(rest, half + a, lower, upper)
        if lnum == -math.inf:
            logc[i] = -math.inf
            continue
        logc[i] = lnum - _log_integral_np(rest, half, lam2s[i], math.inf)
    return logc, lam1s, lam2s


def conditional_top(D, Eo, lower, upper, a):
    """Per draw: ``log E[exp(-a lambda_1); lambda_1 in [lower, upper) | lambda_2..lambda_M]``.

    Also returns ``lambda_1`` and ``lambda_2`` of each draw.
    """
    D = np.ascontiguousarray(D, dtype=float)
    Eo = np.ascontiguousarray(Eo, dtype=float)
    if _accel.use_numba():
        return _conditional_top_nb(D, Eo, float(lower), float(upper), float(a))
    return _conditional_top_np(D, Eo, float(lower), float(upper), float(a))

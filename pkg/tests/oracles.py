"""Independent reference computations used by the tests.

None of these reuse the code paths they check: cell counts come from sign
vector enumeration, chord extrema from dense endpoint grids, preimage
measures from Riemann sums, gradients from exact difference quotients.
"""
import itertools
from fractions import Fraction

import numpy as np


def cell_count_by_sign_vectors(lines, window, n=400):
    """Distinct sign vectors seen on a dense grid of the window (float lines)."""
    x0, x1, y0, y1 = (float(v) for v in window)
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    X, Y = np.meshgrid(xs, ys)
    S = []
    for ln in lines:
        S.append(np.sign(float(ln.a) * X + float(ln.b) * Y - float(ln.c)).astype(int))
    S = np.stack(S, axis=-1).reshape(-1, len(lines))
    S = S[np.all(S != 0, axis=1)]
    return len({tuple(r) for r in S})


def chord_extrema_bruteforce(f, z, e, eps, n=2000):
    """Max and min chord slopes over an endpoint grid of ``[-eps, eps]`` (float)."""
    ts = np.linspace(-float(eps), float(eps), n + 1)
    z = np.array([float(z[0]), float(z[1])])
    e = np.array([float(e[0]), float(e[1])])
    vals = np.array([float(f(tuple(z + t * e))) for t in ts])
    lo, hi = np.nonzero(ts <= 0)[0], np.nonzero(ts >= 0)[0]
    best_max, best_min = -np.inf, np.inf
    for i in lo:
        for j in hi:
            if j == i or ts[j] - ts[i] > float(eps) + 1e-15:
                continue
            s = (vals[j] - vals[i]) / (ts[j] - ts[i])
            best_max, best_min = max(best_max, s), min(best_min, s)
    return best_min, best_max


def riemann_measure(curve, region, n=10 ** 6):
    """Midpoint-rule measure of ``{t : gamma(t) in region}``."""
    t = (np.arange(n) + 0.5) * (curve.length / n)
    inside = region.margin(curve.position(t)) > 0
    return float(inside.sum()) * curve.length / n


def exact_gradient(fun, z, tau):
    """Difference quotients of a piecewise-affine ``fun`` at step ``tau`` (exact rationals)."""
    f0 = fun(z)
    gx = (fun((z[0] + tau, z[1])) - f0) / tau
    gy = (fun((z[0], z[1] + tau)) - f0) / tau
    return gx, gy


def zeta_bruteforce_exact(fun, z, e, eps, breaks):
    """Exact chord extrema over all breakpoint-candidate endpoint pairs."""
    cand = sorted({Fraction(0), Fraction(eps), -Fraction(eps)} | {b for b in breaks if abs(b) <= eps}
                  | {b - eps for b in breaks if 0 <= b <= eps} | {b + eps for b in breaks if -eps <= b <= 0})
    pts = {t: fun((z[0] + t * e[0], z[1] + t * e[1])) for t in cand}
    best = None
    lo = [t for t in cand if t <= 0]
    hi = [t for t in cand if t >= 0]
    sl = []
    for a, b in itertools.product(lo, hi):
        if b > a and b - a <= eps:
            sl.append((pts[b] - pts[a]) / (b - a))
    return min(sl), max(sl)


def ray_hits(lines, z, e, eps):
    """Parameters in ``(-eps, eps)`` where ``z + s e`` crosses a line ``a x + b y = c``."""
    out = set()
    for ln in lines:
        den = ln.a * e[0] + ln.b * e[1]
        if den != 0:
            s = (ln.c - ln.a * z[0] - ln.b * z[1]) / den
            if -eps < s < eps:
                out.add(s)
    return out


def zeta_dense_oracle(fun, z, e, eps, lines, n=32):
    """Chord-slope spread over a dense endpoint grid augmented with all candidate vertices.

    Endpoints are ``n`` uniform steps on each side of ``z`` together with
    breakpoints, ``0``, ``+-eps`` and breakpoints shifted by ``eps``; every
    admissible pair is tried.  Returns a float.
    """
    eps = Fraction(eps)
    br = ray_hits(lines, z, e, eps)
    grid = {eps * Fraction(i, n) for i in range(-n, n + 1)}
    cand = grid | br | {b - eps for b in br} | {b + eps for b in br}
    lo = sorted(t for t in cand if -eps <= t <= 0)
    hi = sorted(t for t in cand if 0 <= t <= eps)
    val = {t: fun((z[0] + t * e[0], z[1] + t * e[1])) for t in set(lo) | set(hi)}
    best_max, best_min = -np.inf, np.inf
    for a in lo:
        for b in hi:
            if b > a and b - a <= eps:
                s = float((val[b] - val[a]) / (b - a))
                best_max, best_min = max(best_max, s), min(best_min, s)
    return best_max - best_min

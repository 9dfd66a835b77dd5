"""Unit-speed C^1 curves against the strip system.

Curves are chains of straight segments, circular arcs and cubic Hermite
pieces, reparametrized by arc length.  Preimages of regions are found by
bracketing sign changes of a signed "inside margin" on a parameter grid,
refining each root with Brent's method, and probing grid intervals where the
margin comes close to zero without changing sign (grazing passes).

Integrals of the tangent over preimage intervals are evaluated from curve
endpoints (``int_a^b gamma' = gamma(b) - gamma(a)``), so the only numerical
error is the root location error, which is reported as the error bar.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq, minimize_scalar

logger = logging.getLogger(__name__)

ROOT_XTOL = 1e-13
GRID = 4096
CROSSING_CAP = 10000
TANGENCY_TOL = 1e-6
_GL_X, _GL_W = leggauss(10)


class CurveError(ValueError):
    pass


class ConePreconditionError(CurveError):
    def __init__(self, t, msg):
        super().__init__(f"{msg} at t = {t:.6g}")
        self.t = t


class TangencyError(CurveError):
    pass


# ---------------------------------------------------------------------------
# Curve pieces
# ---------------------------------------------------------------------------

class _Piece:
    def pos(self, s):
        raise NotImplementedError

    def der(self, s):
        raise NotImplementedError


class _Segment(_Piece):
    def __init__(self, p0, p1):
        self.p0, self.d = np.asarray(p0, float), np.asarray(p1, float) - np.asarray(p0, float)

    def pos(self, s):
        return self.p0[None, :] + s[:, None] * self.d[None, :]

    def der(self, s):
        return np.broadcast_to(self.d, (len(s), 2)).copy()


class _Arc(_Piece):
    def __init__(self, center, radius, theta0, theta1):
        self.c, self.r = np.asarray(center, float), float(radius)
        self.t0, self.dt = float(theta0), float(theta1) - float(theta0)

    def pos(self, s):
        a = self.t0 + s * self.dt
        return self.c[None, :] + self.r * np.stack([np.cos(a), np.sin(a)], axis=1)

    def der(self, s):
        a = self.t0 + s * self.dt
        return self.r * self.dt * np.stack([-np.sin(a), np.cos(a)], axis=1)


class _Hermite(_Piece):
    def __init__(self, p0, m0, p1, m1):
        self.P = [np.asarray(v, float) for v in (p0, m0, p1, m1)]

    def pos(self, s):
        s = s[:, None]
        p0, m0, p1, m1 = self.P
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1

    def der(self, s):
        s = s[:, None]
        p0, m0, p1, m1 = self.P
        return ((6 * s ** 2 - 6 * s) * p0 + (3 * s ** 2 - 4 * s + 1) * m0
                + (-6 * s ** 2 + 6 * s) * p1 + (3 * s ** 2 - 2 * s) * m1)


def _make_piece(d: dict) -> _Piece:
    t = d.get("type")
    if t == "line":
        return _Segment(d["p0"], d["p1"])
    if t == "arc":
        return _Arc(d["center"], d["radius"], d["theta0"], d["theta1"])
    if t == "hermite":
        return _Hermite(d["p0"], d["m0"], d["p1"], d["m1"])
    raise CurveError(f"unknown segment type {t!r}")


class C1Curve:
    """A unit-speed C^1 curve on ``I = [0, length]``.

    Parameters
    ----------
    segments : list of dict
        Segment records (``line``, ``arc`` or ``hermite``).  Consecutive
        pieces must join with matching position and tangent direction;
        polylines with corners are rejected.
    table : int
        Number of sub-intervals per piece of the arc-length table.
    """

    def __init__(self, segments: Sequence[dict], table: int = 256, name: str = ""):
        if not segments:
            raise CurveError("empty curve")
        self.segments = [dict(s) for s in segments]
        self.pieces = [_make_piece(s) for s in self.segments]
        self.name = name
        n = len(self.pieces)
        for i in range(n - 1):
            a, b = self.pieces[i], self.pieces[i + 1]
            one, zero = np.array([1.0]), np.array([0.0])
            if np.linalg.norm(a.pos(one)[0] - b.pos(zero)[0]) > 1e-9:
                raise CurveError(f"pieces {i} and {i + 1} do not meet")
            ta, tb = a.der(one)[0], b.der(zero)[0]
            ta, tb = ta / np.linalg.norm(ta), tb / np.linalg.norm(tb)
            if np.linalg.norm(ta - tb) > 1e-9:
                raise CurveError(f"corner between pieces {i} and {i + 1}")
        # arc-length table on the raw parameter u in [0, n]
        m = table
        self._u = np.linspace(0.0, n, n * m + 1)
        lo, hi = self._u[:-1], self._u[1:]
        self._S = np.concatenate([[0.0], np.cumsum(self._arc(lo, hi))])
        self.length = float(self._S[-1])
        self.max_speed = float(self._speed(np.linspace(0.0, n, 64 * n + 1)).max()) * 1.25
        if self.length <= 0:
            raise CurveError("degenerate curve")

    # raw parametrization --------------------------------------------------
    def _split(self, u):
        u = np.asarray(u, float)
        i = np.clip(np.floor(u).astype(int), 0, len(self.pieces) - 1)
        return i, u - i

    def _raw(self, u, which):
        i, s = self._split(u)
        out = np.empty((len(u), 2))
        for j, p in enumerate(self.pieces):
            msk = i == j
            if msk.any():
                out[msk] = getattr(p, which)(s[msk])
        return out

    def _speed(self, u):
        return np.linalg.norm(self._raw(u, "der"), axis=1)

    def _arc(self, lo, hi):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        tot = np.zeros_like(lo)
        for x, w in zip(_GL_X, _GL_W):
            tot += w * self._speed(mid + half * x)
        return tot * half

    def _u_of(self, t):
        t = np.clip(np.atleast_1d(np.asarray(t, float)), 0.0, self.length)
        k = np.clip(np.searchsorted(self._S, t, side="right") - 1, 0, len(self._u) - 2)
        u0, S0 = self._u[k], self._S[k]
        u1, S1 = self._u[k + 1], self._S[k + 1]
        u = u0 + (t - S0) / np.maximum(S1 - S0, 1e-300) * (u1 - u0)
        u = np.clip(u, u0, u1)
        for _ in range(4):
            err = S0 + self._arc(u0, u) - t
            u = np.clip(u - err / self._speed(u), u0, self._u[k + 1])
        return u

    def raw_position(self, u):
        return self._raw(np.atleast_1d(np.asarray(u, float)), "pos")

    def raw_tangent(self, u):
        d = self._raw(np.atleast_1d(np.asarray(u, float)), "der")
        return d / np.linalg.norm(d, axis=1)[:, None]

    def increment(self, lo, hi):
        """``gamma(hi) - gamma(lo)`` on raw parameters inside one piece, by quadrature of
        the derivative (relative accuracy is kept on very short intervals)."""
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        tot = np.zeros((len(lo), 2))
        for x, w in zip(_GL_X, _GL_W):
            tot += w * self._raw(mid + half * x, "der")
        return tot * half[:, None]

    def t_of_u(self, u):
        """Arc length from the start to raw parameter ``u``."""
        u = np.clip(np.atleast_1d(np.asarray(u, float)), 0.0, self._u[-1])
        k = np.clip(np.searchsorted(self._u, u, side="right") - 1, 0, len(self._u) - 2)
        return self._S[k] + self._arc(self._u[k], u)

    # unit-speed parametrization ---------------------------------------------
    def position(self, t):
        return self._raw(self._u_of(t), "pos")

    def tangent(self, t):
        d = self._raw(self._u_of(t), "der")
        return d / np.linalg.norm(d, axis=1)[:, None]

    def grid(self, n: int = GRID):
        return np.linspace(0.0, self.length, n + 1)

    def speed_defect(self, n: int = 2000) -> float:
        """Max of ``| |gamma(t+h) - gamma(t-h)| / 2h - 1 |`` on a grid (unit-speed check)."""
        t = np.linspace(0.0, self.length, n + 1)[1:-1]
        h = 1e-5
        d = (self.position(t + h) - self.position(t - h)) / (2 * h)
        return float(np.max(np.abs(np.linalg.norm(d, axis=1) - 1.0)))

    @classmethod
    def from_json(cls, text: str) -> "C1Curve":
        d = json.loads(text)
        if isinstance(d, dict):
            return cls(d["segments"], name=d.get("name", ""))
        return cls(d)

    def to_dict(self) -> dict:
        return {"name": self.name, "segments": self.segments}


def load_curves(text: str) -> List[C1Curve]:
    """Parse a curve file: a JSON list of ``{"name", "segments"}`` records."""
    d = json.loads(text)
    if isinstance(d, dict):
        d = d.get("curves", [d])
    return [C1Curve(c["segments"], name=c.get("name", f"curve{i}")) for i, c in enumerate(d)]


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------

class Region:
    """A region with a continuous margin: positive inside, zero on the boundary."""

    def margin(self, P):
        raise NotImplementedError

    def normal(self, p):
        raise NotImplementedError


@dataclass
class StripRegion(Region):
    base: Tuple[float, float]
    direction: Tuple[float, float]
    half_width: float

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        self.dir = d / np.linalg.norm(d)
        self.n = np.array([-self.dir[1], self.dir[0]])
        self.b = np.asarray(self.base, float)

    @classmethod
    def of(cls, strip) -> "StripRegion":
        ln = strip.line
        return cls((float(ln.base[0]), float(ln.base[1])), ln.dir.as_float(), float(strip.half_width))

    def offset(self, P):
        return (np.asarray(P) - self.b) @ self.n

    def margin(self, P):
        return self.half_width - np.abs(self.offset(P))

    def normal(self, p):
        return self.n


@dataclass
class DiskRegion(Region):
    center: Tuple[float, float]
    radius: float

    def margin(self, P):
        return self.radius - np.linalg.norm(np.asarray(P) - np.asarray(self.center), axis=1)

    def normal(self, p):
        d = np.asarray(p) - np.asarray(self.center)
        return d / max(np.linalg.norm(d), 1e-300)

    def diam_v(self, v) -> float:
        return 2.0 * self.radius


@dataclass
class PolygonRegion(Region):
    """Open convex polygon with counter-clockwise vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, float)
        area2 = np.sum(V[:, 0] * np.roll(V[:, 1], -1) - np.roll(V[:, 0], -1) * V[:, 1])
        if area2 < 0:
            V = V[::-1]
        self.vertices = V
        E = np.roll(V, -1, axis=0) - V
        N = np.stack([-E[:, 1], E[:, 0]], axis=1)
        N /= np.linalg.norm(N, axis=1)[:, None]
        self._N, self._c = N, np.sum(N * V, axis=1)

    def margin(self, P):
        P = np.atleast_2d(P)
        return np.min(P @ self._N.T - self._c[None, :], axis=1)

    def normal(self, p):
        i = int(np.argmin(np.atleast_2d(p) @ self._N.T - self._c))
        return self._N[i]

    def diam_v(self, v) -> float:
        x = self.vertices @ np.asarray(v, float)
        return float(x.max() - x.min())

    def translated(self, d) -> "PolygonRegion":
        return PolygonRegion(self.vertices + np.asarray(d, float)[None, :])


# ---------------------------------------------------------------------------
# Preimages
# ---------------------------------------------------------------------------

@dataclass
class Preimage:
    intervals: List[Tuple[float, float]]
    error_bar: float
    flagged: int = 0

    @property
    def measure(self) -> float:
        return float(sum(b - a for a, b in self.intervals))


def _roots(fun, u, g, slope_bound, flag_grazing=True):
    """Roots of a scalar function of the raw parameter, sampled as ``g`` on ``u``.

    ``slope_bound`` bounds ``|dg/du|``; a grid interval can hide a pair of
    roots only if the samples come within ``slope_bound * h`` of zero there,
    and such intervals are probed for an interior extremum.
    """
    roots, flagged = [], 0
    h = u[1] - u[0]
    sg = np.sign(g)
    for i in np.nonzero(sg[:-1] * sg[1:] < 0)[0]:
        roots.append(brentq(fun, u[i], u[i + 1], xtol=ROOT_XTOL, rtol=1e-15))
    for i in np.nonzero(sg == 0)[0]:
        roots.append(float(u[i]))
    if flag_grazing:
        # an interior extremum of a smooth g in [u_i, u_i+1] shows up as a sign
        # change between the neighbouring sample differences
        d = np.diff(g)
        dl = np.concatenate([[d[0]], d[:-1]])
        dr = np.concatenate([d[1:], [d[-1]]])
        turn = np.sign(dl) != np.sign(dr)
        near = np.nonzero((sg[:-1] * sg[1:] > 0) & turn
                          & (np.minimum(np.abs(g[:-1]), np.abs(g[1:])) < slope_bound * h))[0]
        for i in near:
            sgn = sg[i]
            r = minimize_scalar(lambda x: sgn * fun(x), bounds=(u[i], u[i + 1]), method="bounded",
                                options={"xatol": 1e-14})
            if sgn * fun(r.x) < 0:
                flagged += 1
                roots.append(brentq(fun, u[i], r.x, xtol=ROOT_XTOL, rtol=1e-15))
                roots.append(brentq(fun, r.x, u[i + 1], xtol=ROOT_XTOL, rtol=1e-15))
    return sorted(roots), flagged


def _raw_grid(curve: C1Curve, n: int):
    return np.linspace(0.0, float(len(curve.pieces)), n + 1)


def preimage(curve: C1Curve, region: Region, n: int = GRID) -> Preimage:
    """Parameter set ``{t : gamma(t) in region}`` as a list of intervals."""
    u = _raw_grid(curve, n)
    g = region.margin(curve.raw_position(u))
    fun = lambda x: float(region.margin(curve.raw_position([x]))[0])
    roots, flagged = _roots(fun, u, g, 2 * curve.max_speed)
    if len(roots) > CROSSING_CAP:
        raise TangencyError(f"{len(roots)} crossings exceed the cap")
    if roots:
        R = np.array(roots)
        P = curve.raw_position(R)
        D = curve.raw_tangent(R)
        for r, q, tau in zip(R, P, D):
            if abs(np.dot(tau, region.normal(q))) < TANGENCY_TOL:
                raise TangencyError(f"tangential crossing at t = {float(curve.t_of_u([r])[0]):.6g}")
    cuts = np.concatenate([[0.0], roots, [float(len(curve.pieces))]])
    inside = region.margin(curve.raw_position(0.5 * (cuts[:-1] + cuts[1:]))) > 0
    T = curve.t_of_u(cuts)
    T[0], T[-1] = 0.0, curve.length
    iv = []
    for i in np.nonzero(inside)[0]:
        a, b = float(T[i]), float(T[i + 1])
        if b <= a:
            continue
        if iv and iv[-1][1] == a:
            iv[-1] = (iv[-1][0], b)
        else:
            iv.append((a, b))
    return Preimage(iv, error_bar=2 * ROOT_XTOL * curve.max_speed * max(len(roots), 1),
                    flagged=flagged)


def preimage_measure(curve: C1Curve, region: Region) -> Tuple[float, float]:
    """``(L(gamma^-1(region)), error bar)``."""
    pre = preimage(curve, region)
    return pre.measure, pre.error_bar


def tangent_integral(curve: C1Curve, intervals, v) -> float:
    """``sum over intervals of int <gamma', v> = <gamma(b) - gamma(a), v>``."""
    if not intervals:
        return 0.0
    a = np.array([i[0] for i in intervals])
    b = np.array([i[1] for i in intervals])
    d = curve.position(b) - curve.position(a)
    return float(np.sum(d @ np.asarray(v, float)))


# ---------------------------------------------------------------------------
# Lemma checks
# ---------------------------------------------------------------------------

@dataclass
class CheckRow:
    check: str
    lhs: float
    rhs: float
    passed: bool
    error_bar: float
    note: str = ""

    def as_list(self):
        return [self.check, repr(float(self.lhs)), repr(float(self.rhs)),
                "PASS" if self.passed else "FAIL", repr(float(self.error_bar)), self.note]


def tangent_samples(curve: C1Curve, n: int = GRID):
    """Unit tangents on a raw-parameter grid, with the arc-length parameter of each sample."""
    u = _raw_grid(curve, n)
    return curve.raw_tangent(u), u


def cone_margin(curve: C1Curve, v, delta, double: bool, n: int = GRID):
    """Smallest value of ``<gamma', v> - (1 - delta)`` (absolute value for double cones)."""
    tan, u = tangent_samples(curve, n)
    d = tan @ np.asarray(v, float)
    if double:
        d = np.abs(d)
    m = d - (1 - float(delta))
    i = int(np.argmin(m))
    return float(m[i]), float(curve.t_of_u([u[i]])[0])


def crossing_bound_check(curve: C1Curve, W: Region, v, delta, tol=1e-6) -> CheckRow:
    """``L(gamma^-1(W)) <= diam_v(W) / (1 - delta)`` for ``gamma'`` in the double cone."""
    m, tm = cone_margin(curve, v, delta, double=True)
    if m < 0:
        raise ConePreconditionError(tm, "tangent leaves the double cone")
    meas, err = preimage_measure(curve, W)
    rhs = W.diam_v(v) / (1 - float(delta))
    return CheckRow("crossing", meas, rhs, meas <= rhs + tol + err, err)


def convex_slope_integral_check(curve: C1Curve, P: PolygonRegion, e, tol=1e-9) -> CheckRow:
    """``|int_{gamma^-1(P)} <gamma', e^perp>| <= 6 diam_{e^perp}(P)`` when ``<gamma', e> >= 0``."""
    e = np.asarray(e, float)
    tan, u = tangent_samples(curve)
    dm = tan @ e
    if dm.min() < 0:
        raise ConePreconditionError(float(curve.t_of_u([u[int(np.argmin(dm))]])[0]),
                                    "tangent moves against e")
    ep = np.array([-e[1], e[0]])
    pre = preimage(curve, P)
    lhs = abs(tangent_integral(curve, pre.intervals, ep))
    rhs = 6 * P.diam_v(ep)
    return CheckRow("convex", lhs, rhs, lhs <= rhs + tol + pre.error_bar, pre.error_bar)


# ---------------------------------------------------------------------------
# Filtrations
# ---------------------------------------------------------------------------

@dataclass
class CurvePartition:
    """Interval atoms of one level together with their counter tuples."""

    level: int
    breaks: np.ndarray                  # atom i is [breaks[i], breaks[i+1]]
    index: np.ndarray                   # positions of the breaks among the elementary cuts
    keys: List[tuple]                   # (k_1, ..., k_p) per atom, None for infinity
    lebesgue: np.ndarray

    @property
    def n_atoms(self) -> int:
        return len(self.keys)


@dataclass
class StripFamily:
    """Float copies of the strip data used along curves."""

    regions: List[StripRegion]
    e: List[np.ndarray]
    rho: List[float]
    w: np.ndarray
    eta: float

    @classmethod
    def of(cls, schedule, depth: Optional[int] = None) -> "StripFamily":
        K = schedule.K if depth is None else depth
        regs = [StripRegion.of(schedule.strip(k)) for k in range(1, K + 1)]
        return cls(regs, [np.array(schedule.stage(k).e.as_float()) for k in range(1, K + 1)],
                   [float(schedule.stage(k).rho) for k in range(1, K + 1)],
                   np.array(schedule.w.as_float()), float(schedule.eta))

    @property
    def K(self) -> int:
        return len(self.regions)


@dataclass
class Filtration:
    curve: C1Curve
    family: StripFamily
    cuts: np.ndarray                   # elementary breakpoints
    members: np.ndarray                # (n_elem, K) strip membership per elementary interval
    mid_pos: np.ndarray                # gamma at a point inside each elementary interval
    dgam: np.ndarray                   # gamma increment over each elementary interval
    dlen: np.ndarray                   # length of each elementary interval
    levels: List[CurvePartition]
    error_bar: float

    @property
    def p_max(self) -> int:
        return len(self.levels) - 1


def _elementary(curve: C1Curve, fam: StripFamily, n: int = GRID):
    u = _raw_grid(curve, n)
    P = curve.raw_position(u)
    roots, flagged = [], 0
    for reg in fam.regions:
        off = reg.offset(P)
        for sgn in (1.0, -1.0):
            g = sgn * off - reg.half_width
            fun = lambda x, reg=reg, sgn=sgn: float(sgn * reg.offset(curve.raw_position([x]))[0]
                                                    - reg.half_width)
            r, f = _roots(fun, u, g, 2 * curve.max_speed)
            roots += r
            flagged += f
    if len(roots) > CROSSING_CAP:
        raise TangencyError(f"{len(roots)} crossings exceed the cap")
    joints = np.arange(len(curve.pieces) + 1, dtype=float)
    ucuts = np.unique(np.concatenate([joints, np.array(roots)]))
    ucuts = ucuts[np.concatenate([[True], np.diff(ucuts) > 0])]
    lo, hi = ucuts[:-1], ucuts[1:]
    dlen = curve._arc(lo, hi)
    keep = dlen > 0
    lo, hi, dlen = lo[keep], hi[keep], dlen[keep]
    dgam = curve.increment(lo, hi)
    M = curve.raw_position(0.5 * (lo + hi))
    cuts = np.concatenate([[0.0], np.cumsum(dlen)])
    members = np.stack([np.abs(reg.offset(M)) < reg.half_width for reg in fam.regions], axis=1) \
        if fam.regions else np.zeros((len(M), 0), bool)
    return cuts, members, M, dgam, dlen, 2 * ROOT_XTOL * curve.max_speed * max(len(roots), 1)


def level_keys(members: np.ndarray, p: int) -> List[tuple]:
    """``(k_1, ..., k_p)`` per elementary interval (``None`` stands for infinity)."""
    keys = []
    for row in members:
        hits = [k + 1 for k in np.nonzero(row)[0]]
        keys.append(tuple(hits[q] if q < len(hits) else None for q in range(p)))
    return keys


def build_filtration(schedule, curve: C1Curve, p_max: Optional[int] = None,
                     delta=None, depth: Optional[int] = None) -> Filtration:
    """Nested interval partitions ``Sigma_0, ..., Sigma_pmax`` generated by ``k_q o gamma``.

    Atoms of level ``p`` are maximal parameter intervals on which
    ``(k_1, ..., k_p)(gamma(t))`` is constant.
    """
    fam = schedule if isinstance(schedule, StripFamily) else StripFamily.of(schedule, depth)
    if delta is not None:
        m, tm = cone_margin(curve, fam.w, delta, double=False)
        if m < 0:
            raise ConePreconditionError(tm, "tangent leaves C(w, delta)")
    p_max = fam.K if p_max is None else p_max
    cuts, members, mid_pos, dgam, dlen, err = _elementary(curve, fam)
    levels = []
    for p in range(p_max + 1):
        keys = level_keys(members, p)
        idx, ks = [0], []
        for i, key in enumerate(keys):
            if ks and ks[-1] == key:
                continue
            if ks:
                idx.append(i)
            ks.append(key)
        idx.append(len(cuts) - 1)
        idx = np.array(idx)
        levels.append(CurvePartition(p, cuts[idx], idx, ks, np.add.reduceat(dlen, idx[:-1])))
    return Filtration(curve, fam, cuts, members, mid_pos, dgam, dlen, levels, err)


def is_nested(filt: Filtration) -> bool:
    for p in range(1, len(filt.levels)):
        coarse = set(np.round(filt.levels[p - 1].breaks, 15))
        fine = set(np.round(filt.levels[p].breaks, 15))
        if not coarse <= fine:
            return False
    return True


def atom_means(filt: Filtration, p: int) -> np.ndarray:
    """``beta_p`` per atom: mean tangent ``(gamma(b) - gamma(a)) / (b - a)``."""
    lv = filt.levels[p]
    return atom_increments(filt, p) / lv.lebesgue[:, None]


def atom_increments(filt: Filtration, p: int) -> np.ndarray:
    """``gamma(b) - gamma(a)`` per atom of level ``p``."""
    return np.add.reduceat(filt.dgam, filt.levels[p].index[:-1], axis=0)


def component_signature(fam: StripFamily, k: int, point) -> tuple:
    """Sign pattern of ``point`` against the boundaries of strips ``j < k``; it names the
    component of ``B(L_k, rho_k)`` minus those boundaries."""
    sig = []
    for reg in fam.regions[:k - 1]:
        o = float(reg.offset(np.atleast_2d(point))[0])
        sig.append((o > reg.half_width) - (o < -reg.half_width))
    return tuple(sig)


def strip_slope_integral_check(schedule, curve: C1Curve, k: int, p: int,
                               filt: Optional[Filtration] = None) -> List[CheckRow]:
    """Per component ``P`` with ``k_p = k``: ``int_{gamma^-1(P)} |<beta_p, e_k^perp>| <= 12 rho_k``."""
    filt = build_filtration(schedule, curve) if filt is None else filt
    fam = filt.family
    lv = filt.levels[p]
    beta = atom_means(filt, p)
    e = fam.e[k - 1]
    ep = np.array([-e[1], e[0]])
    M = filt.mid_pos[lv.index[:-1]]
    comps = {}
    for i, key in enumerate(lv.keys):
        if p == 0 or key[p - 1] != k:
            continue
        sig = component_signature(fam, k, M[i])
        comps.setdefault(sig, []).append(i)
    rows = []
    for sig, atoms in sorted(comps.items()):
        lhs = float(sum(abs(beta[i] @ ep) * lv.lebesgue[i] for i in atoms))
        rhs = 12 * fam.rho[k - 1]
        rows.append(CheckRow(f"strip12rho[k={k},p={p}]", lhs, rhs, lhs <= rhs + filt.error_bar,
                             filt.error_bar, note=f"atoms={len(atoms)}"))
    return rows


def D_p_diagnostic(schedule, curve: C1Curve, filt: Filtration, p: int, delta) -> dict:
    """Measure of ``D_p`` and the Markov and ratio-approximation checks."""
    fam = filt.family
    lv = filt.levels[p]
    beta = atom_means(filt, p)
    thr = 2.0 ** (-p)
    meas, expect, ratio_worst = 0.0, 0.0, 0.0
    w = fam.w
    wp = np.array([-w[1], w[0]])
    for i, key in enumerate(lv.keys):
        kp = key[p - 1] if p >= 1 else None
        if kp is None:
            continue
        e = fam.e[kp - 1]
        ep = np.array([-e[1], e[0]])
        x = abs(beta[i] @ ep)
        if x > thr:
            meas += lv.lebesgue[i]
            expect += x * lv.lebesgue[i]
        else:
            r = abs((e @ wp) / (e @ w) - (beta[i] @ wp) / (beta[i] @ w))
            ratio_worst = max(ratio_worst, r)
    ratio_bound = thr / ((1 - fam.eta) * (1 - float(delta)))
    markov_rhs = sum(3 ** k * 12 * fam.rho[k - 1] for k in range(max(p, 1), fam.K + 1))
    if hasattr(schedule, "rho_rule") and schedule.rho_rule is not None:
        base, ratio = (float(v) for v in schedule.rho_rule)
        if 3 * ratio < 1:
            markov_rhs += 12 * base * (3 * ratio) ** (fam.K + 1) / (1 - 3 * ratio)
    return {"p": p, "measure": meas, "bound": thr, "pass": meas <= thr + filt.error_bar,
            "expectation": expect, "expectation_bound": markov_rhs,
            "markov_pass": meas <= expect / thr + filt.error_bar,
            "ratio_worst": ratio_worst, "ratio_bound": ratio_bound,
            "ratio_pass": ratio_worst <= ratio_bound + 1e-12}


# ---------------------------------------------------------------------------
# Random admissible curves
# ---------------------------------------------------------------------------

def random_cone_curve(rng: np.random.Generator, w, delta, pieces: int = 3,
                      start=None, span: float = 1.0, max_tries: int = 200, aim=None) -> C1Curve:
    """A C^1 Hermite chain whose tangent stays in ``C(w, delta)``.

    Control tangents are drawn inside the cone with a 10% angular margin;
    candidates whose sampled tangent leaves the cone are redrawn.  With
    ``aim`` set, the chain is translated along ``w^perp`` so that it passes
    through that point (the point must lie within ``span`` of the start
    along ``w``).
    """
    w = np.asarray(w, float)
    wp = np.array([-w[1], w[0]])
    amax = math.acos(1 - float(delta)) * 0.9
    for _ in range(max_tries):
        p = np.array(start if start is not None else [0.0, rng.uniform(0.1, 0.9)], float)
        angs = rng.uniform(-amax, amax, size=pieces + 1)
        tans = [math.cos(a) * w + math.sin(a) * wp for a in angs]
        segs = []
        for i in range(pieces):
            step = span / pieces
            a = rng.uniform(-amax, amax) * 0.8
            q = p + step * (math.cos(a) * w + math.sin(a) * wp)
            segs.append({"type": "hermite", "p0": p.tolist(), "m0": (step * tans[i]).tolist(),
                         "p1": q.tolist(), "m1": (step * tans[i + 1]).tolist()})
            p = q
        c = C1Curve(segs)
        if aim is not None:
            c = _aim(c, np.asarray(aim, float), w)
        if cone_margin(c, w, delta, double=False)[0] >= 0:
            return c
    raise CurveError("could not draw an admissible curve")


def _shift_segment(d: dict, off) -> dict:
    d = dict(d)
    for key in ("p0", "p1", "center"):
        if key in d:
            d[key] = (np.asarray(d[key], float) + off).tolist()
    return d


def translated(curve: C1Curve, off) -> C1Curve:
    off = np.asarray(off, float)
    return C1Curve([_shift_segment(s, off) for s in curve.segments], name=curve.name)


def _aim(curve: C1Curve, target, w) -> C1Curve:
    wp = np.array([-w[1], w[0]])
    t = curve.grid()
    a = curve.position(t) @ w - target @ w
    i = np.nonzero(a[:-1] * a[1:] <= 0)[0]
    if not len(i):
        raise CurveError("aim point is out of reach along w")
    x = brentq(lambda s: float(curve.position([s])[0] @ w - target @ w), t[i[0]], t[i[0] + 1],
               xtol=ROOT_XTOL)
    off = (target - curve.position([x])[0]) @ wp
    return translated(curve, off * wp)


def delta_sweep(schedule, curves: Sequence[C1Curve], deltas: Sequence[float]) -> List[dict]:
    """Which downstream checks fail as the cone aperture ``delta`` grows.

    For every ``delta`` reports how many curves satisfy the cone hypothesis
    ``gamma' in C(w, delta)`` and, among those, how many violate the ``D_p``
    measure bound or the ratio-approximation bound at some level.  No
    threshold is asserted; the table is descriptive.
    """
    rows = []
    fam = StripFamily.of(schedule)
    for delta in deltas:
        admissible = dp_fail = ratio_fail = 0
        for c in curves:
            if cone_margin(c, fam.w, delta, double=False)[0] < 0:
                continue
            admissible += 1
            filt = build_filtration(fam, c)
            diags = [D_p_diagnostic(schedule, c, filt, p, delta) for p in range(1, fam.K + 1)]
            dp_fail += any(not d["pass"] for d in diags)
            ratio_fail += any(not d["ratio_pass"] for d in diags)
        rows.append({"delta": float(delta), "curves": len(curves), "admissible": admissible,
                     "D_p_failures": dp_fail, "ratio_failures": ratio_fail})
    return rows

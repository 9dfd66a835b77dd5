"""Staged strip construction: schedules, strip counters, signs, stage functions and partial sums.

Everything here is exact rational arithmetic.  Strip widths shrink
geometrically (``rho_12`` is far below double precision at unit scale), so
floats are only used as a prefilter before an exact test.

Stage ``k`` uses

* ``phi_tilde_k = clamp(u_k, 0, c_k)`` where ``u_k`` grows with slope one along
  ``w^perp`` from the lower strip boundary and ``c_k = 2 rho_k / <w, e_k>``;
* ``phi_k = min(phi_tilde_k, 2^-k * dist(., Z_{k-1}))`` where ``Z_{k-1}`` is the
  union of the boundary lines of strips ``1..k-1``;
* ``T_k = T_{k-1}`` plus the strip boundary lines plus every line along which
  ``phi_k`` has a kink inside the arrangement window.
"""
from __future__ import annotations

import functools
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arrangement import DEFAULT_WINDOW, PwAffineFunction, pa_from_ramps
from .geometry import (Cone, Line, Point, Strip, UnitVector, cone_contains, dot,
                       exact_sqrt, is_exact, perp, sqrt)

logger = logging.getLogger(__name__)

UNIT_WINDOW = (Fraction(0), Fraction(1), Fraction(0), Fraction(1))
DEFAULT_ETA = Fraction(1, 16)
DEFAULT_RHO_RULE = (Fraction(1, 32), Fraction(1, 1024))
DEFAULT_EPS0 = Fraction(4)
MAX_STAGE_LINES = 20000


class ScheduleError(ValueError):
    pass


class StageLineCapError(RuntimeError):
    def __init__(self, k, count):
        super().__init__(f"stage {k}: {count} lines exceed the cap of {MAX_STAGE_LINES}")
        self.k = k
        self.count = count


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageSpec:
    """Generator data of one stage: the line ``x + R e``, its width and guard radius."""

    x: Point
    e: UnitVector
    rho: Fraction
    delta: Optional[Fraction] = None


@dataclass
class StripSchedule:
    w: UnitVector
    eta: Fraction
    stages: List[StageSpec]
    eps0: Fraction = DEFAULT_EPS0
    rho_rule: Optional[Tuple[Fraction, Fraction]] = None
    window: Tuple = UNIT_WINDOW
    arr_window: Tuple = DEFAULT_WINDOW
    guard_budget: Fraction = Fraction(1)
    certificate: Optional[dict] = None

    @property
    def K(self) -> int:
        return len(self.stages)

    def stage(self, k: int) -> StageSpec:
        return self.stages[k - 1]

    def eps(self, n: int) -> Fraction:
        """Derivative-growth thresholds: ``eps0`` at zero and ``1/n^2`` after."""
        return self.eps0 if n == 0 else Fraction(1, n * n)

    @property
    def sqrt_eta(self):
        return sqrt(self.eta)

    def line(self, k: int) -> Line:
        st = self.stage(k)
        return Line.through(st.x, st.e, tag=f"L{k}")

    def strip(self, k: int) -> Strip:
        return Strip(self.line(k), self.stage(k).rho)

    def rho(self, j: int) -> Fraction:
        """``rho_j``; beyond the stored stages the geometric rule is used."""
        if 1 <= j <= self.K:
            return self.stage(j).rho
        if self.rho_rule is None:
            return Fraction(0)
        base, ratio = self.rho_rule
        return base * ratio ** j

    def rho_tail(self, k: int) -> Fraction:
        """``sum_{j > k} rho_j`` including the extrapolated tail beyond ``K``."""
        s = sum((self.rho(j) for j in range(k + 1, self.K + 1)), Fraction(0))
        if self.rho_rule is not None:
            base, ratio = self.rho_rule
            start = max(k, self.K) + 1
            s += base * ratio ** start / (1 - ratio)
        return s

    def h_tail_bound(self, depth: int) -> Fraction:
        """Uniform bound ``sum_{j > depth} 2 rho_j / (1 - eta)`` on ``|h - h_depth|``."""
        return 2 * self.rho_tail(depth) / (1 - self.eta)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        def q(v):
            return str(Fraction(v))

        d = {
            "w": [q(self.w.x), q(self.w.y)],
            "eta": q(self.eta),
            "K": self.K,
            "stages": [{"x": [q(s.x[0]), q(s.x[1])], "e": [q(s.e.x), q(s.e.y)],
                        "rho": q(s.rho),
                        "delta": None if s.delta is None else q(s.delta)} for s in self.stages],
            "eps0": q(self.eps0),
        }
        if self.rho_rule is not None:
            d["rho_rule"] = [q(self.rho_rule[0]), q(self.rho_rule[1])]
        if self.certificate is not None:
            d["certificate"] = self.certificate
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "StripSchedule":
        def q(v):
            if isinstance(v, float):
                return Fraction(v)
            return Fraction(str(v))

        try:
            w = UnitVector(q(d["w"][0]), q(d["w"][1]))
            stages = []
            for s in d["stages"]:
                delta = s.get("delta")
                stages.append(StageSpec((q(s["x"][0]), q(s["x"][1])),
                                        UnitVector(q(s["e"][0]), q(s["e"][1])),
                                        q(s["rho"]), None if delta is None else q(delta)))
            if "K" in d and int(d["K"]) != len(stages):
                raise ScheduleError(f"K={d['K']} but {len(stages)} stages listed")
            rr = d.get("rho_rule")
            return cls(w=w, eta=q(d["eta"]), stages=stages, eps0=q(d.get("eps0", DEFAULT_EPS0)),
                       rho_rule=None if rr is None else (q(rr[0]), q(rr[1])),
                       certificate=d.get("certificate"))
        except (KeyError, TypeError, IndexError, ValueError, ZeroDivisionError) as exc:
            raise ScheduleError(f"malformed schedule: {exc!r}") from exc

    @classmethod
    def loads(cls, text: str) -> "StripSchedule":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScheduleError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(d, dict):
            raise ScheduleError("schedule must be a JSON object")
        return cls.from_dict(d)


# ---------------------------------------------------------------------------
# Affine helpers (exact); an affine map is (gx, gy, h): z -> gx*x + gy*y + h
# ---------------------------------------------------------------------------

def _aff(g, z):
    return g[0] * z[0] + g[1] * z[1] + g[2]


def _aff_lin(a, p, b=None, q=0):
    """Linear combination ``p*a + q*b`` of affine maps."""
    if b is None:
        return (p * a[0], p * a[1], p * a[2])
    return (p * a[0] + q * b[0], p * a[1] + q * b[1], p * a[2] + q * b[2])


def _line_of(g, tag="") -> Line:
    return Line(g[0], g[1], -g[2], tag=tag)


@dataclass(frozen=True)
class StageGeometry:
    """Derived exact quantities of stage ``k``."""

    k: int
    x: Point
    e: UnitVector
    eperp: UnitVector
    rho: Fraction
    wde: Fraction          # <w, e_k>
    top: Fraction          # c_k = 2 rho / <w, e_k>
    U: Tuple               # affine u_k with u = 0 on the lower boundary
    s: Fraction            # 2^-k

    @classmethod
    def of(cls, sched: StripSchedule, k: int) -> "StageGeometry":
        st = sched.stage(k)
        ep = perp(st.e)
        wde = Fraction(dot(sched.w, st.e))
        if wde <= 0:
            raise ScheduleError(f"stage {k}: <w, e_k> = {wde} is not positive")
        off0 = -(ep.x * st.x[0] + ep.y * st.x[1])
        U = (ep.x / wde, ep.y / wde, (off0 + st.rho) / wde)
        return cls(k, st.x, st.e, ep, st.rho, wde, 2 * st.rho / wde, U, Fraction(1, 2 ** k))

    def offset(self, z):
        return self.eperp.x * (z[0] - self.x[0]) + self.eperp.y * (z[1] - self.x[1])

    def in_strip(self, z) -> bool:
        return abs(self.offset(z)) < self.rho

    def boundary(self) -> Tuple[Line, Line]:
        c0 = self.eperp.x * self.x[0] + self.eperp.y * self.x[1]
        return (Line(self.eperp.x, self.eperp.y, c0 - self.rho, tag=f"B{self.k}lo"),
                Line(self.eperp.x, self.eperp.y, c0 + self.rho, tag=f"B{self.k}hi"))

    def phi_tilde(self, z):
        u = _aff(self.U, z)
        if u <= 0:
            return Fraction(0)
        return self.top if u >= self.top else u

    def phi_tilde_gradient(self, z):
        u = _aff(self.U, z)
        if 0 < u < self.top:
            return (self.U[0], self.U[1])
        return (Fraction(0), Fraction(0))

    def gradient_formula(self, w: UnitVector):
        """``w^perp + <w, e_k^perp> / <w, e_k> * w``."""
        wp = perp(w)
        c = Fraction(dot(w, self.eperp)) / self.wde
        return (wp.x + c * w.x, wp.y + c * w.y)


def _zaff(line: Line):
    """Affine residual of a unit-normal line."""
    return (line.a, line.b, -line.c)


# ---------------------------------------------------------------------------
# Kink lines of phi_k
# ---------------------------------------------------------------------------

def _box_interval(p0, d, window):
    x0, x1, y0, y1 = window
    lo, hi = None, None
    for pc, dc, a, b in ((p0[0], d[0], x0, x1), (p0[1], d[1], y0, y1)):
        if dc == 0:
            if pc < a or pc > b:
                return None
            continue
        t1, t2 = (a - pc) / dc, (b - pc) / dc
        if t1 > t2:
            t1, t2 = t2, t1
        lo = t1 if lo is None else max(lo, t1)
        hi = t2 if hi is None else min(hi, t2)
    if lo is None or lo >= hi:
        return None
    return lo, hi


def _segment_search(F, window, positive, roots, predicate) -> bool:
    """Does ``predicate`` hold on a sub-segment of positive length of ``{F = 0}``?

    ``positive`` lists affine maps that must be positive (each cuts a half-line),
    ``roots`` lists affine maps whose zeros may change the predicate.
    """
    gx, gy, h = F
    n2 = gx * gx + gy * gy
    if n2 == 0:
        return False
    p0 = (-h * gx / n2, -h * gy / n2)
    d = (gy, -gx)
    iv = _box_interval(p0, d, window)
    if iv is None:
        return False
    lo, hi = iv
    for G in positive:
        g0 = _aff(G, p0)
        g1 = G[0] * d[0] + G[1] * d[1]
        if g1 == 0:
            if g0 <= 0:
                return False
            continue
        r = -g0 / g1
        if g1 > 0:
            lo = max(lo, r)
        else:
            hi = min(hi, r)
        if lo >= hi:
            return False
    cuts = {lo, hi}
    for G in roots:
        g1 = G[0] * d[0] + G[1] * d[1]
        if g1 != 0:
            r = -_aff(G, p0) / g1
            if lo < r < hi:
                cuts.add(r)
    cuts = sorted(cuts)
    for a, b in zip(cuts[:-1], cuts[1:]):
        t = (a + b) / 2
        z = (p0[0] + t * d[0], p0[1] + t * d[1])
        if predicate(z):
            return True
    return False


def stage_kink_lines(geo: StageGeometry, Z: Sequence[Line], window=DEFAULT_WINDOW) -> List[Line]:
    """Lines, other than strip boundaries and members of ``Z``, along which
    ``phi_k = min(phi_tilde_k, 2^-k dist(., Z))`` fails to be affine in ``window``.

    Three families are possible: coincidence lines ``u = 2^-k |a|`` inside
    the strip, level lines ``2^-k |a| = c_k`` above it, and bisectors of pairs
    of members of ``Z`` where the distance term is the smaller one.
    """
    s, U, top = geo.s, geo.U, geo.top
    A = [_zaff(l) for l in Z]
    out = []
    topc = (Fraction(0), Fraction(0), top)
    for i, a in enumerate(A):
        others = [b for j, b in enumerate(A) if j != i]
        for sg in (1, -1):
            sa = _aff_lin(a, sg * s)  # signed scaled distance, positive on this side
            # u = s|a| inside the strip.
            F = _aff_lin(U, 1, sa, -1)

            def pred_b(z, others=others):
                u = _aff(U, z)
                return all(abs(s * _aff(b, z)) > u for b in others)

            roots = [_aff_lin(U, 1, b, sgb * s) for b in others for sgb in (1, -1)]
            if _segment_search(F, window, [U, _aff_lin(topc, 1, U, -1)], roots, pred_b):
                out.append(_line_of(F, f"K{geo.k}:in"))
            # s|a| = c_k above the strip.
            F = _aff_lin(sa, 1, topc, -1)

            def pred_c(z, others=others):
                return all(abs(s * _aff(b, z)) > top for b in others)

            roots = [_aff_lin(b, sgb * s, topc, -1) for b in others for sgb in (1, -1)]
            if _segment_search(F, window, [_aff_lin(U, 1, topc, -1)], roots, pred_c):
                out.append(_line_of(F, f"K{geo.k}:lvl"))
    for i in range(len(A)):
        for j in range(i + 1, len(A)):
            a1, a2 = A[i], A[j]
            others = [b for q, b in enumerate(A) if q not in (i, j)]
            for tau in (1, -1):
                F = _aff_lin(a1, 1, a2, -tau)
                if F[0] == 0 and F[1] == 0:
                    continue
                pos = [_aff_lin(topc, 1, a1, -s), _aff_lin(topc, 1, a1, s)]

                def pred_d(z, a1=a1, others=others):
                    v = abs(_aff(a1, z))
                    if v == 0 or not s * v < _aff(U, z):
                        return False
                    return all(abs(_aff(b, z)) > v for b in others)

                roots = [a1, _aff_lin(U, 1, a1, -s), _aff_lin(U, 1, a1, s)]
                roots += [_aff_lin(b, 1, a1, sg) for b in others for sg in (1, -1)]
                if _segment_search(F, window, pos, roots, pred_d):
                    out.append(_line_of(F, f"K{geo.k}:bis"))
    return out


# ---------------------------------------------------------------------------
# Stage states
# ---------------------------------------------------------------------------

@dataclass
class StageState:
    """Line data of stage ``k``: ``T_k`` (cumulative), ``S_k`` and the boundary family."""

    k: int
    geo: Optional[StageGeometry]
    T: List[Line]
    new_lines: List[Line]
    S: List[Point]
    Z: List[Line]


def _intersections(L: Line, lines: Sequence[Line]) -> List[Point]:
    pts = {}
    for ln in lines:
        p = L.intersect(ln)
        if p is not None:
            pts[p] = None
    return list(pts)


def initial_state() -> StageState:
    return StageState(0, None, [], [], [], [])


def build_stage(s: StripSchedule, prev: StageState, k: int) -> StageState:
    """Stage ``k`` from stage ``k - 1``: ``S_k``, kink lines of ``phi_k`` and ``T_k``."""
    if prev.k != k - 1:
        raise ValueError(f"stage {k} needs stage {k - 1}, got {prev.k}")
    geo = StageGeometry.of(s, k)
    S = _intersections(s.line(k), prev.T)
    lo, hi = geo.boundary()
    kinks = stage_kink_lines(geo, prev.Z, s.arr_window)
    seen = {ln.key() for ln in prev.T}
    new = []
    for ln in [lo, hi] + kinks:
        key = ln.key()
        if key not in seen:
            seen.add(key)
            new.append(ln)
    T = prev.T + new
    if len(T) > MAX_STAGE_LINES:
        raise StageLineCapError(k, len(T))
    return StageState(k, geo, T, new, S, prev.Z + [lo, hi])


class Construction:
    """All stages of a schedule together with exact pointwise evaluators.

    ``phi(k, z)``, ``h(depth, z)`` and :meth:`profile` are the workhorses;
    everything else (witnesses, classification, audits) is built on them.
    """

    def __init__(self, sched: StripSchedule, depth: Optional[int] = None):
        self.s = sched
        self.K = sched.K if depth is None else depth
        st = initial_state()
        self.states = [st]
        for k in range(1, self.K + 1):
            st = build_stage(sched, st, k)
            self.states.append(st)
        self.geos = [None] + [self.states[k].geo for k in range(1, self.K + 1)]
        # Float copies of T_K for the on-line prefilter.
        T = self.states[self.K].T
        self._T = T
        intro = []
        for k in range(1, self.K + 1):
            intro += [k] * len(self.states[k].new_lines)
        self._intro = np.array(intro, dtype=int)
        if T:
            ab = np.array([[float(l.a), float(l.b), float(l.c)] for l in T])
            nrm = np.hypot(ab[:, 0], ab[:, 1])
            self._Tf = ab / nrm[:, None]
        else:
            self._Tf = np.zeros((0, 3))
        self._S = []
        for k in range(self.K + 1):
            S = self.states[k].S
            self._S.append(np.array([[float(p[0]), float(p[1])] for p in S]).reshape(-1, 2))
        # Float copies of the boundary families Z_{k-1} for the distance prefilter.
        self._Zf = [None]
        for k in range(1, self.K + 1):
            zf = np.array([[float(l.a), float(l.b), float(l.c)] for l in self.states[k - 1].Z]).reshape(-1, 3)
            self._Zf.append(zf / np.hypot(zf[:, 0], zf[:, 1])[:, None] if len(zf) else zf)

    # -- pointwise line incidence --------------------------------------------
    def first_T_stage(self, z) -> Optional[int]:
        """Smallest ``k`` with ``z`` on a line of ``T_k``, or ``None``."""
        if not self._T:
            return None
        zf = (float(z[0]), float(z[1]))
        res = np.abs(self._Tf[:, 0] * zf[0] + self._Tf[:, 1] * zf[1] - self._Tf[:, 2])
        best = None
        for i in np.nonzero(res < 1e-9)[0]:
            if self._T[i].value(z) == 0:
                k = int(self._intro[i])
                best = k if best is None else min(best, k)
        return best

    def same_cell(self, k: int, z1, z2) -> bool:
        """True when no line of ``T_k`` meets the closed segment ``[z1, z2]``."""
        n = sum(len(self.states[j].new_lines) for j in range(1, k + 1))
        if n == 0:
            return True
        Tf = self._Tf[:n]
        r1 = Tf[:, 0] * float(z1[0]) + Tf[:, 1] * float(z1[1]) - Tf[:, 2]
        r2 = Tf[:, 0] * float(z2[0]) + Tf[:, 1] * float(z2[1]) - Tf[:, 2]
        sure = ((r1 > 1e-9) & (r2 > 1e-9)) | ((r1 < -1e-9) & (r2 < -1e-9))
        for i in np.nonzero(~sure)[0]:
            ln = self._T[i]
            a, b = ln.side(z1), ln.side(z2)
            if a == 0 or b == 0 or a != b:
                return False
        return True

    def in_guard(self, k: int, z) -> bool:
        """``z in B(S_k, delta_k)``."""
        S = self.states[k].S
        if not S:
            return False
        d = self.s.stage(k).delta
        if d is None:
            raise ScheduleError(f"stage {k} has no guard radius")
        zf = np.array([float(z[0]), float(z[1])])
        d2 = np.sum((self._S[k] - zf) ** 2, axis=1)
        df = float(d)
        for i in np.nonzero(d2 < (df * 1.001 + 1e-300) ** 2 + 1e-30)[0]:
            p = S[i]
            if (z[0] - p[0]) ** 2 + (z[1] - p[1]) ** 2 < d * d:
                return True
        return False

    def dist2_to_T(self, k: int, z):
        """Exact squared distance from ``z`` to ``T_k`` (``None`` when empty)."""
        best = None
        for ln in self.states[k].T:
            v = ln.value(z)
            d2 = v * v / ln.normal_sq
            if best is None or d2 < best:
                best = d2
        return best

    # -- stage functions -------------------------------------------------------
    def _dist_term(self, k, z):
        """``(2^-k * dist(z, Z_{k-1}), gradient or None on ties)``; ``None`` when empty."""
        Z = self.states[k - 1].Z
        if not Z:
            return None
        # Boundary lines have unit normals, so float residuals are distances up
        # to rounding; only near-minimal lines are evaluated exactly.
        Zf = self._Zf[k]
        av = np.abs(Zf[:, 0] * float(z[0]) + Zf[:, 1] * float(z[1]) - Zf[:, 2])
        cand = np.nonzero(av <= av.min() + 1e-12)[0]
        best, grad, tie = None, None, False
        for i in cand:
            ln = Z[i]
            v = ln.value(z)
            av = abs(v)
            if best is None or av < best:
                best, tie = av, False
                sg = 1 if v > 0 else -1
                grad = (sg * ln.a, sg * ln.b) if v != 0 else None
            elif av == best:
                tie = True
        s = self.geos[k].s
        g = None if (tie or grad is None) else (s * grad[0], s * grad[1])
        return s * best, g

    def phi_tilde(self, k, z):
        return self.geos[k].phi_tilde(z)

    def phi(self, k, z):
        pt = self.geos[k].phi_tilde(z)
        dt = self._dist_term(k, z)
        if dt is None:
            return pt
        return min(pt, dt[0])

    def phi_gradient(self, k, z, _dt=False):
        """Gradient of ``phi_k`` at ``z``; ``None`` where the active piece is ambiguous."""
        geo = self.geos[k]
        pt = geo.phi_tilde(z)
        u = _aff(geo.U, z)
        dt = self._dist_term(k, z) if _dt is False else _dt
        if dt is None or pt < dt[0]:
            if u == 0 or u == geo.top:
                return None
            return geo.phi_tilde_gradient(z)
        if dt[0] < pt:
            return dt[1]
        return None

    # -- partial sums -------------------------------------------------------
    def profile(self, z, depth: Optional[int] = None) -> "PointProfile":
        depth = self.K if depth is None else depth
        on = self.first_T_stage(z)
        sig, m, h, grads, k_list, incs, phis = [-1], [0], [Fraction(0)], [(Fraction(0), Fraction(0))], [], [], []
        for k in range(1, depth + 1):
            geo = self.geos[k]
            dt = self._dist_term(k, z)
            pt = geo.phi_tilde(z)
            f = pt if dt is None else min(pt, dt[0])
            phis.append(f)
            coef = Fraction(sig[-1], 2 ** m[-1])
            h.append(h[-1] + coef * f)
            off_T = on is None or on > k
            if off_T and grads[-1] is not None:
                g = self.phi_gradient(k, z, dt)
                grads.append(None if g is None else (grads[-1][0] + coef * g[0], grads[-1][1] + coef * g[1]))
            else:
                grads.append(None)
            inside = geo.in_strip(z)
            if inside:
                k_list.append(k)
            sig.append(-sig[-1] if inside else sig[-1])
            j = max((i for i in range(1, k) if m[i] != m[i - 1]), default=0)
            inc = False
            if off_T and grads[k] is not None:
                dj = grads[j]
                dx, dy = grads[k][0] - dj[0], grads[k][1] - dj[1]
                eps = self.s.eps(m[j])
                inc = dx * dx + dy * dy > eps * eps
            m.append(m[-1] + 1 if inc else m[-1])
            if inc:
                incs.append(k)
        return PointProfile(z=z, depth=depth, k_list=k_list, sigma=sig, m=m, h=h,
                            grad=grads, phi=phis, on_T_stage=on, increments=incs)

    def h(self, depth, z):
        return self.profile(z, depth).h[depth]

    def h_gradient(self, depth, z):
        g = self.profile(z, depth).grad[depth]
        if g is None:
            raise ValueError(f"{z} lies on a break line of h_{depth}")
        return g


@dataclass
class PointProfile:
    """Per-point trajectory of strip hits, signs, counters and partial sums."""

    z: Point
    depth: int
    k_list: List[int]
    sigma: List[int]
    m: List[int]
    h: List[Fraction]
    grad: List[Optional[Tuple]]
    phi: List[Fraction]
    on_T_stage: Optional[int]
    increments: List[int]

    def j_index(self, k: int) -> int:
        return max((i for i in range(1, k) if self.m[i] != self.m[i - 1]), default=0)


# ---------------------------------------------------------------------------
# Function views usable by the chord and zeta machinery
# ---------------------------------------------------------------------------

class StageFunction:
    """``phi_k`` (or ``phi_tilde_k``) as an object with ``lines`` and ``evaluate``."""

    def __init__(self, c: Construction, k: int, tilde: bool = False):
        self.c, self.k, self.tilde = c, k, tilde
        self.lines = list(c.states[k].geo.boundary()) if tilde else c.states[k].T

    def evaluate(self, z):
        return self.c.phi_tilde(self.k, z) if self.tilde else self.c.phi(self.k, z)

    __call__ = evaluate

    def gradient(self, z):
        if self.tilde:
            return self.c.geos[self.k].phi_tilde_gradient(z)
        return self.c.phi_gradient(self.k, z)


class PartialSum:
    """``h_depth`` as an object with ``lines`` and ``evaluate``."""

    def __init__(self, c: Construction, depth: int):
        self.c, self.depth = c, depth
        self.lines = c.states[depth].T

    def evaluate(self, z):
        return self.c.h(self.depth, z)

    __call__ = evaluate

    def gradient(self, z):
        return self.c.h_gradient(self.depth, z)


def phi_tilde(s: StripSchedule, k: int) -> PwAffineFunction:
    """``phi_tilde_k`` as a cell function over its two strip boundary lines."""
    geo = StageGeometry.of(s, k)
    lo, hi = geo.boundary()
    return pa_from_ramps((Fraction(0), Fraction(0), Fraction(0)),
                         [(lo, 1 / geo.wde), (hi, -1 / geo.wde)], s.arr_window)


# ---------------------------------------------------------------------------
# Schedule generation and validation
# ---------------------------------------------------------------------------

ALL_CONDITIONS = ("eta", "i", "ii", "iii", "iv", "v")
# Conditions used by the curve and martingale estimates (no witness condition).
CURVE_CONDITIONS = ("eta", "i", "ii", "iv", "v")
# Decay rule for curve suites: strips stay resolvable in double precision to K = 6
# (rho_6 = 2^-35) while the separation condition still holds.
CURVE_RHO_RULE = (Fraction(1, 32), Fraction(1, 32))


def _radical_inverse(i: int, base: int) -> Fraction:
    f, r, denom = Fraction(0), i, 1
    while r:
        denom *= base
        r, d = divmod(r, base)
        f += Fraction(d, denom)
    return f


def _frac(x: Fraction) -> Fraction:
    return x - math.floor(x)


def generate_schedule(eta=DEFAULT_ETA, K: int = 6, rng_seed: int = 0, window=UNIT_WINDOW,
                      rho_rule=DEFAULT_RHO_RULE, eps0=DEFAULT_EPS0,
                      w: Optional[UnitVector] = None,
                      require: Sequence[str] = ALL_CONDITIONS) -> StripSchedule:
    """Generate and validate a ``K``-stage schedule.

    Base points follow a shifted Halton sequence in ``window`` and directions a
    shifted van der Corput sequence over the cone ``C(w, eta)`` (rationalized to
    exact unit vectors), so that the family is asymptotically dense in
    ``window x C(w, eta)``.  ``rho_k = base * ratio^k`` and
    ``delta_k = 4^-k / (1 + |S_k|)``.

    ``require`` names the conditions that must hold (see
    :func:`validate_schedule`); the certificate records all of them.
    """
    eta = Fraction(eta)
    if not 0 < eta <= 1:
        raise ScheduleError("eta must lie in (0, 1]")
    if 2 * (1 - eta) ** 2 < 1:
        raise ScheduleError(f"eta = {eta} violates 1 - eta >= 1/sqrt(2)")
    if K < 1:
        raise ScheduleError("K must be at least 1")
    w = UnitVector(Fraction(1), Fraction(0)) if w is None else w
    base, ratio = Fraction(rho_rule[0]), Fraction(rho_rule[1])
    for k in range(1, K + 1):
        if float(base * ratio ** k) == 0.0:
            raise ScheduleError(f"rho_{k} underflows double precision; max feasible K = {k - 1}")
    rng = np.random.default_rng(rng_seed)
    shift = [Fraction(int(v)) / 2 ** 20 for v in rng.integers(0, 2 ** 20, size=3)]
    x0, x1, y0, y1 = (Fraction(v) for v in window)
    amax = math.acos(1 - float(eta))
    cone = Cone(w, eta)
    sched = StripSchedule(w=w, eta=eta, stages=[], eps0=Fraction(eps0), rho_rule=(base, ratio),
                          window=tuple(Fraction(v) for v in window))
    st = initial_state()
    states = [st]
    angles: List[float] = []
    idx = 0
    for k in range(1, K + 1):
        while True:
            idx += 1
            hx = _frac(_radical_inverse(idx, 2) + shift[0])
            hy = _frac(_radical_inverse(idx, 3) + shift[1])
            ha = _frac(_radical_inverse(idx, 5) + shift[2])
            theta = (2 * float(ha) - 1) * 0.8 * amax + w.angle()
            e = UnitVector.from_angle(theta, max_den=256)
            if not cone_contains(cone, e):
                continue
            if any(abs(e.angle() - a) < 1e-3 for a in angles):
                continue
            break
        angles.append(e.angle())
        x = (x0 + (x1 - x0) * hx, y0 + (y1 - y0) * hy)
        sched.stages.append(StageSpec(x, e, base * ratio ** k))
        st = build_stage(sched, st, k)
        delta = Fraction(1, 4 ** k) / (1 + len(st.S))
        sched.stages[-1] = StageSpec(x, e, base * ratio ** k, delta)
        states.append(st)
    sched._states = states
    cert = validate_schedule(sched)
    bad = [v for v in cert["violations"] if v["condition"] in require]
    if bad:
        raise ScheduleError(f"generated schedule failed validation: {bad}")
    sched.certificate = cert
    return sched


def construction_for(s: StripSchedule, depth: Optional[int] = None) -> Construction:
    """Cached :class:`Construction` of a schedule (stages are rebuilt at most once)."""
    key = s.K if depth is None else depth
    cache = s.__dict__.setdefault("_constructions", {})
    if key not in cache:
        cache[key] = Construction(s, depth)
    return cache[key]


def _states_for(s: StripSchedule) -> List[StageState]:
    st = getattr(s, "_states", None)
    if st is not None and len(st) == s.K + 1:
        return st
    return construction_for(s).states


def theta_k(eta, k: int) -> Fraction:
    """Largest dyadic ``theta`` with twice the margin in both ``theta`` conditions."""
    se = sqrt(eta)
    M = 5 / se + Fraction(2 ** (k + 1)) / (1 - Fraction(eta))
    tstar = 1 / (1 + M)
    j = 0
    while Fraction(1, 2 ** j) > tstar / 2:
        j += 1
    return Fraction(1, 2 ** j)


def _num(v):
    """JSON-friendly number: float, or the string 'inf'."""
    if v == math.inf:
        return "inf"
    return float(v)


def certificate_ok(cert: dict, conditions: Sequence[str] = ALL_CONDITIONS) -> bool:
    return not any(v["condition"] in conditions for v in cert["violations"])


def validate_schedule(s: StripSchedule, states: Optional[List[StageState]] = None) -> dict:
    """Check the decay and separation conditions; return a certificate record.

    Conditions
    ----------
    (i)   ``12 sum_{k >= p} 3^k rho_k <= 4^-p`` for ``0 <= p <= K``.
    (ii)  ``rho_k < theta_k c_k`` with ``c_k = dist(T_{k-1}, L_k minus B(S_k, delta_k))``.
    (iii) ``(4 / rho_k) sum_{j > k} 2 rho_j / (1 - eta) <= sqrt(eta) / 16``.
    (iv)  ``sum_k |S_k| delta_k <= guard_budget``.
    (v)   ``e_k in C(w, eta)``.
    """
    viol, checks = [], []

    def record(cond, idx, lhs, rhs, ok):
        row = {"condition": cond, "index": idx, "lhs": _num(lhs), "rhs": _num(rhs), "pass": bool(ok)}
        checks.append(row)
        if not ok:
            viol.append(row)

    eta = s.eta
    K = s.K
    if 2 * (1 - eta) ** 2 < 1:
        record("eta", 0, 1 - eta, 1 / math.sqrt(2), False)
    # (i)
    tail3 = None
    if s.rho_rule is not None:
        base, ratio = s.rho_rule
        r3 = 3 * ratio
        tail3 = math.inf if r3 >= 1 else base * r3 ** (K + 1) / (1 - r3)
    for p in range(0, K + 1):
        lhs = 12 * sum((3 ** k * s.rho(k) for k in range(max(p, 1), K + 1)), Fraction(0))
        if tail3 is not None:
            lhs = math.inf if tail3 == math.inf else lhs + 12 * tail3
        rhs = Fraction(1, 4 ** p)
        record("i", p, lhs, rhs, lhs <= rhs)
    # (ii) needs the line families.
    if states is None:
        states = _states_for(s)
    for k in range(1, K + 1):
        st = s.stage(k)
        T = states[k - 1].T
        L = s.line(k)
        th = theta_k(eta, k)
        c2 = None
        for ln in T:
            if ln.parallel_to(L):
                v = ln.value(st.x)
                d2 = v * v / ln.normal_sq
            else:
                if st.delta is None:
                    record("ii", k, st.rho, "delta missing", False)
                    break
                cr = ln.a * L.b - ln.b * L.a
                d2 = st.delta ** 2 * cr * cr / (ln.normal_sq * L.normal_sq)
            c2 = d2 if c2 is None else min(c2, d2)
        if c2 is None:
            record("ii", k, st.rho, math.inf, True)
        else:
            ok = st.rho ** 2 < th ** 2 * c2
            record("ii", k, st.rho, th * math.sqrt(float(c2)) if c2 > 0 else 0.0, ok)
    # (iii)
    se = sqrt(eta)
    for k in range(1, K + 1):
        lhs = 4 / s.rho(k) * 2 * s.rho_tail(k) / (1 - eta)
        rhs = se / 16
        record("iii", k, lhs, rhs, lhs <= rhs)
    # (iv)
    tot = Fraction(0)
    for k in range(1, K + 1):
        d = s.stage(k).delta
        if d is not None:
            tot += len(states[k].S) * d
    record("iv", 0, tot, s.guard_budget, tot <= s.guard_budget)
    # (v)
    cone = Cone(s.w, eta)
    for k in range(1, K + 1):
        e = s.stage(k).e
        record("v", k, dot(e, s.w), 1 - eta, cone_contains(cone, e))
    return {"ok": not viol, "violations": viol, "checks": checks,
            "theta": [str(theta_k(eta, k)) for k in range(1, K + 1)],
            "S_sizes": [len(states[k].S) for k in range(1, K + 1)],
            "T_sizes": [len(states[k].T) for k in range(1, K + 1)]}


# ---------------------------------------------------------------------------
# Counters, signs, depth-K classification
# ---------------------------------------------------------------------------

def strip_hits(s: StripSchedule, z, depth: Optional[int] = None) -> List[int]:
    depth = s.K if depth is None else depth
    return [k for k in range(1, depth + 1) if s.strip(k).contains(z)]


def sigma_k(s: StripSchedule, z, k: int) -> int:
    """``(-1)^p`` where ``k_{p-1}(z) <= k < k_p(z)``."""
    p = 1 + len(strip_hits(s, z, k))
    return -1 if p % 2 else 1


def tail_window(K: int) -> Tuple[int, int]:
    return (math.ceil(K / 2), K)


def k_profile(s, z, depth: Optional[int] = None) -> PointProfile:
    """Strip counters and trajectories at ``z`` (accepts a schedule or a construction)."""
    c = s if isinstance(s, Construction) else construction_for(s)
    return c.profile(z, depth)


def classify_depth_K(s, z, m: int = 0, growth_threshold: int = 2) -> dict:
    """Depth-``K`` proxies for membership in ``E``, ``G``, ``F_m`` and ``H``.

    All flags are finite-depth proxies: ``E_K`` means a strip with index in
    the tail window ``[ceil(K/2), K]`` contains ``z``; ``G_K`` likewise for
    guard balls.
    """
    c = s if isinstance(s, Construction) else construction_for(s)
    K = c.K
    a, b = tail_window(K)
    prof = c.profile(z)
    inE = any(a <= k <= b for k in prof.k_list)
    inG = any(c.in_guard(k, z) for k in range(max(a, 1), b + 1))
    mK = prof.m[K]
    return {"proxy": f"depth-{K} tail[{a},{b}]", "E_K": inE, "G_K": inG, "m_K": mK,
            "F_m_K": (mK <= m) and not inG,
            "H_candidate": mK >= growth_threshold and inE and not inG,
            "k_list": prof.k_list}


def component_count(s: StripSchedule, k: int) -> int:
    """Components of ``B(L_k, rho_k) minus the boundaries of strips j < k`` meeting the window.

    For a convex region cut by lines in general position the count is
    ``1 + #(lines crossing it) + #(crossings of those lines inside it)``.
    """
    from .arrangement import split_polygon, _window_polygon
    geo = StageGeometry.of(s, k)
    lo, hi = geo.boundary()
    region = split_polygon(_window_polygon(s.window), lo)[1]
    region = None if region is None else split_polygon(region, hi)[0]
    if region is None:
        return 0
    polys = [region]
    for j in range(1, k):
        for ln in StageGeometry.of(s, j).boundary():
            nxt = []
            for pg in polys:
                neg, pos = split_polygon(pg, ln)
                nxt += [p for p in (neg, pos) if p is not None]
            polys = nxt
    return len(polys)

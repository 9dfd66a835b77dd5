"""Non-differentiability meters and explicit chord witnesses.

``zeta(f, z, eps, e)`` is the largest difference of slopes of two chords of
``f`` through ``z`` parallel to ``e`` with lengths at most ``eps``.  For a
piecewise-affine ``f`` it is computed exactly from the breakpoints along the
ray (see :func:`unrect.arrangement.chord_slope_extrema`).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence

from .arrangement import chord_slope_extrema
from .construction import Construction, construction_for, tail_window
from .geometry import Cone, UnitVector, cone_contains, dot, perp, sqrt


class WitnessError(ValueError):
    """A witness precondition failed; ``reason`` names which one."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class ChordWitness:
    """Two chords ``[x, x + t e]`` and ``[y, y + s e]`` through ``z``."""

    z: tuple
    e: UnitVector
    x: tuple
    y: tuple
    t: object
    s: object
    defect: object
    function_id: str = ""
    depth: int = 0

    def slopes(self, f):
        e = self.e
        sx = (f((self.x[0] + self.t * e[0], self.x[1] + self.t * e[1])) - f(self.x)) / self.t
        sy = (f((self.y[0] + self.s * e[0], self.y[1] + self.s * e[1])) - f(self.y)) / self.s
        return sx, sy

    def defect_of(self, f):
        """Slope difference of the same chords for another function ``f``."""
        a, b = self.slopes(f)
        return abs(a - b)

    def to_row(self) -> dict:
        def fl(v):
            return float(v)

        return {"z": [fl(self.z[0]), fl(self.z[1])], "e": [fl(self.e[0]), fl(self.e[1])],
                "x": [fl(self.x[0]), fl(self.x[1])], "y": [fl(self.y[0]), fl(self.y[1])],
                "s": fl(self.s), "t": fl(self.t), "defect": fl(self.defect),
                "function_id": self.function_id, "depth": self.depth}


def _f(f):
    return f.evaluate if hasattr(f, "evaluate") else f


def zeta(f, z, eps, e, function_id: str = ""):
    """Exact ``zeta(f, z, eps, e)`` and a witness attaining it."""
    ex = chord_slope_extrema(f, z, e, eps)
    a1, b1 = ex.argmax
    a0, b0 = ex.argmin
    x = (z[0] + a1 * e[0], z[1] + a1 * e[1])
    y = (z[0] + a0 * e[0], z[1] + a0 * e[1])
    val = ex.max_slope - ex.min_slope
    return val, ChordWitness(z, e, x, y, b1 - a1, b0 - a0, val, function_id)


def direction_set(budget: int) -> List[UnitVector]:
    """First ``budget`` directions of a van der Corput sequence on the circle.

    The sets are nested in ``budget`` (so maxima over them never decrease) and
    asymptotically uniform.  Directions are exact rational unit vectors.
    """
    out = []
    for i in range(budget):
        r, f, d = i, 0.0, 1.0
        while r:
            d *= 2
            f += (r % 2) / d
            r //= 2
        out.append(UnitVector.from_angle(2 * math.pi * f, max_den=2 ** 16))
    return out


def critical_directions(schedule=None, w: Optional[UnitVector] = None) -> List[UnitVector]:
    dirs = []
    if schedule is not None:
        w = schedule.w
        for st in schedule.stages:
            dirs += [st.e, -st.e, perp(st.e), -perp(st.e)]
    if w is not None:
        dirs += [w, -w, perp(w), -perp(w)]
    return dirs


def upsilon(f, z, eps, direction_budget: int = 8, extra: Iterable[UnitVector] = ()):
    """Lower bound for ``sup_e zeta(f, z, eps, e)`` over a finite direction set.

    Returns ``(value, best_direction, per_direction_values)``.
    """
    if direction_budget < 8:
        raise ValueError("direction_budget must be at least 8")
    best, best_e, vals = None, None, []
    for e in list(direction_set(direction_budget)) + list(extra):
        v, _ = zeta(f, z, eps, e)
        vals.append((e, v))
        if best is None or v > best:
            best, best_e = v, e
    return best, best_e, vals


def directional_derivative_probe(f, z, e, eps_sequence: Sequence, tol=1e-9) -> dict:
    """Track ``zeta(f, z, eps_i, e)`` along a decreasing scale sequence."""
    eps_sequence = list(eps_sequence)
    if any(b >= a for a, b in zip(eps_sequence, eps_sequence[1:])):
        raise ValueError("eps_sequence must be strictly decreasing")
    zs = [zeta(f, z, eps, e)[0] for eps in eps_sequence]
    tailn = max(1, len(zs) // 2)
    limsup = max(zs[-tailn:])
    ok = float(zs[-1]) <= tol
    return {"zeta": zs, "limsup_estimate": limsup,
            "verdict": "derivative-consistent" if ok else "non-differentiable at resolved scales"}


def perturbation_stability(wit: ChordWitness, theta):
    """Defect guaranteed for ``f + g`` on the same chords whenever ``|g| <= theta``."""
    return wit.defect - 4 * theta / min(abs(wit.s), abs(wit.t))


# ---------------------------------------------------------------------------
# Witnesses for the stage functions and the partial sums
# ---------------------------------------------------------------------------

def _as_construction(s) -> Construction:
    return s if isinstance(s, Construction) else construction_for(s)


def witness_geometry(c: Construction, k: int, z, v):
    """``(v', u, t1)`` with ``u`` on ``L_k``, ``z`` in ``[u, u + t1 v']``, ``v' = +-v``."""
    geo = c.geos[k]
    vp = dot(v, geo.eperp)
    off = geo.offset(z)
    lam = off / vp          # z = u + lam * v
    if lam < 0:
        v, vp, lam = -v, -vp, -lam
    u = (z[0] - lam * v[0], z[1] - lam * v[1])
    t1 = geo.rho / abs(vp)
    return v, u, t1


def nondiff_witness_phi(s, k: int, z, v) -> ChordWitness:
    """Chords ``[u, u + t1 v]`` and ``[u, u + 2 t1 v]`` witnessing a slope jump of ``phi_k``."""
    c = _as_construction(s)
    sc = c.s
    geo = c.geos[k]
    if not geo.in_strip(z):
        raise WitnessError(f"z is not in strip {k}")
    if c.in_guard(k, z):
        raise WitnessError(f"z lies in a guard ball of stage {k}")
    se = sqrt(sc.eta)
    if cone_contains(Cone(sc.w, 3 * se, double_sided=True), v):
        raise WitnessError("direction lies in the double cone around w")
    v, u, t1 = witness_geometry(c, k, z, v)
    t2 = 2 * t1
    if not (geo.rho <= t1 <= geo.rho / se):
        raise WitnessError(f"t1 = {float(t1)} outside [rho_k, rho_k / sqrt(eta)]")
    f = lambda p: c.phi(k, p)
    w = ChordWitness(z, v, u, u, t1, t2, 0, function_id=f"phi_{k}", depth=k)
    w.defect = w.defect_of(f)
    return w


@dataclass
class HWitnessReport:
    witness: ChordWitness
    k: int
    m: int
    bound: object          # 2^-m sqrt(eta) / 4
    slack: object          # tail beyond depth K
    within_depth_tail: object
    ok: bool


def admissible_h_stages(c: Construction, z, eps, prof=None) -> List[int]:
    """Tail strip indices usable for an ``h`` witness at ``z``, deepest first."""
    prof = c.profile(z) if prof is None else prof
    se = sqrt(c.s.eta)
    a, _ = tail_window(c.K)
    mK = prof.m[c.K]
    out = []
    for k in reversed(prof.k_list):
        if k < a:
            continue
        if c.in_guard(k, z):
            continue
        if not 2 * c.geos[k].rho / se < eps:
            continue
        if prof.m[k - 1] != mK:
            continue
        out.append(k)
    return out


def nondiff_witness_h(s, z, m: Optional[int], v, eps) -> HWitnessReport:
    """Lift the ``phi_k`` witness at a tail strip of ``z`` to ``h_K``."""
    c = _as_construction(s)
    sc = c.s
    prof = c.profile(z)
    ks = admissible_h_stages(c, z, eps, prof)
    if not ks:
        raise WitnessError("no admissible stage below depth K: increase K or eps")
    k = ks[0]
    mt = prof.m[k - 1]
    m = mt if m is None else m
    if m < mt:
        raise WitnessError(f"m = {m} below the counter ceiling {mt}")
    wphi = nondiff_witness_phi(c, k, z, v)
    K = c.K
    hK = lambda p: c.h(K, p)
    w = ChordWitness(z, wphi.e, wphi.x, wphi.y, wphi.t, wphi.s, 0, function_id=f"h_{K}", depth=K)
    w.defect = w.defect_of(hK)
    se = sqrt(sc.eta)
    rho_k = c.geos[k].rho
    scale = Fraction(1, 2 ** mt)
    slack = 4 / rho_k * scale * 2 * sc.rho_tail(K) / (1 - sc.eta)
    inner = 4 / rho_k * scale * 2 * (sc.rho_tail(k) - sc.rho_tail(K)) / (1 - sc.eta)
    bound = Fraction(1, 2 ** m) * se / 4
    return HWitnessReport(w, k, m, bound, slack, inner, w.defect >= bound - slack)


def accumulation_check(f, z, eps_sequence, tau, direction_budget=16, extra=()) -> dict:
    """Heuristic desk check of the ``Upsilon -> zeta`` accumulation statement.

    At each scale the best direction of :func:`upsilon` is recorded; the
    accumulation direction is taken to be the recorded direction nearest the
    circular mean of the last half.  The check reports whether
    ``zeta(f, z, eps, u) > tau / 4`` at every scale where ``upsilon > tau``.
    """
    rec = []
    for eps in eps_sequence:
        val, e, _ = upsilon(f, z, eps, direction_budget, extra)
        rec.append((eps, val, e))
    half = rec[len(rec) // 2:]
    # Directions are only defined up to sign for zeta.
    ang = [2 * e.angle() for _, _, e in half]
    mean = math.atan2(sum(math.sin(a) for a in ang), sum(math.cos(a) for a in ang)) / 2
    u = min((e for _, _, e in half), key=lambda e: abs(math.remainder(e.angle() - mean, math.pi)))
    rows, ok = [], True
    for eps, val, _ in rec:
        if val > tau:
            zu = zeta(f, z, eps, u)[0]
            good = zu > Fraction(tau) / 4 if isinstance(zu, Fraction) else float(zu) > float(tau) / 4
            ok &= good
            rows.append((eps, val, zu, good))
    return {"direction": u, "rows": rows, "ok": ok, "heuristic": True}

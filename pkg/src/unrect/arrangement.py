"""Line arrangements over a bounded window and continuous piecewise-affine functions on them.

Cells are enumerated by splitting the window polygon line by line.  With
rational lines every predicate is exact; lines with irrational data (angle
bisectors of lines whose normals have irrational length) are carried in floating
point and compared with a small tolerance.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from .geometry import Line, Number, Point, cross, dot, is_exact, sqrt

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = (Fraction(-2), Fraction(3), Fraction(-2), Fraction(3))
FLOAT_TOL = 1e-11


class OnLine:
    """Marker returned by :func:`locate` for points lying on arrangement lines."""

    def __init__(self, line_indices):
        self.line_indices = tuple(line_indices)

    def __repr__(self):
        return f"OnLine({self.line_indices})"

    def __bool__(self):
        return False


class MultiGradientError(ValueError):
    """Raised when a gradient is requested on a break line."""

    def __init__(self, z, gradients):
        super().__init__(f"gradient undefined at {z}: incident gradients {gradients}")
        self.z = z
        self.gradients = gradients


class OutsideWindow(ValueError):
    pass


def _sgn(v, exact: bool) -> int:
    if exact:
        return (v > 0) - (v < 0)
    v = float(v)
    if abs(v) <= FLOAT_TOL:
        return 0
    return 1 if v > 0 else -1


def _window_polygon(window) -> List[Point]:
    x0, x1, y0, y1 = window
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def polygon_area2(poly: Sequence[Point]) -> Number:
    """Twice the signed area of a polygon."""
    s = 0
    for p, q in zip(poly, list(poly[1:]) + [poly[0]]):
        s += cross(p, q)
    return s


def split_polygon(poly: Sequence[Point], line: Line):
    """Split a convex polygon by a line into its negative and positive parts.

    Either part is ``None`` when it has empty interior.
    """
    exact = line.exact and all(is_exact(*p) for p in poly)
    vals = [line.value(p) for p in poly]
    sg = [_sgn(v, exact) for v in vals]
    if all(s >= 0 for s in sg):
        return None, list(poly)
    if all(s <= 0 for s in sg):
        return list(poly), None
    neg, pos = [], []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        sp, sq = sg[i], sg[(i + 1) % n]
        if sp <= 0:
            neg.append(p)
        if sp >= 0:
            pos.append(p)
        if sp * sq < 0:
            t = vals[i] / (vals[i] - vals[(i + 1) % n])
            x = (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))
            neg.append(x)
            pos.append(x)

    def clean(pg):
        if len(pg) < 3:
            return None
        a = polygon_area2(pg)
        if (a == 0) if exact else abs(float(a)) <= FLOAT_TOL:
            return None
        return pg

    return clean(neg), clean(pos)


def centroid(poly: Sequence[Point]) -> Point:
    n = len(poly)
    sx = sum(p[0] for p in poly)
    sy = sum(p[1] for p in poly)
    if all(is_exact(*p) for p in poly):
        return (Fraction(sx) / n, Fraction(sy) / n)
    return (sx / n, sy / n)


@dataclass
class Cell:
    """An open convex cell of an arrangement, clipped to the window."""

    id: int
    polygon: List[Point]
    sample: Point
    signs: Tuple[int, ...]

    @property
    def halfplanes(self) -> List[Tuple[int, int]]:
        """(line index, required sign) pairs defining the unclipped cell."""
        return list(enumerate(self.signs))


@dataclass
class LineArrangement:
    lines: List[Line]
    window: Tuple[Number, Number, Number, Number]
    cells: List[Cell] = field(default_factory=list)
    adjacency: List[Tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self._by_signs: Dict[Tuple[int, ...], int] = {c.signs: c.id for c in self.cells}

    @property
    def exact(self) -> bool:
        return all(l.exact for l in self.lines)

    def sign_vector(self, z) -> Tuple[int, ...]:
        ex = self.exact and is_exact(*z)
        return tuple(_sgn(l.value(z), ex) for l in self.lines)

    def cell_by_signs(self, signs) -> Optional[Cell]:
        i = self._by_signs.get(tuple(signs))
        return None if i is None else self.cells[i]

    def incident_cells(self, z) -> List[Cell]:
        """All cells whose closure contains ``z`` (a single cell off the lines)."""
        sv = self.sign_vector(z)
        zeros = [i for i, s in enumerate(sv) if s == 0]
        out = []
        for combo in itertools.product((-1, 1), repeat=len(zeros)):
            s = list(sv)
            for i, c in zip(zeros, combo):
                s[i] = c
            c = self.cell_by_signs(s)
            if c is not None:
                out.append(c)
        return out


def dedup_lines(lines: Sequence[Line]) -> List[Line]:
    seen = {}
    for l in lines:
        k = l.key()
        if not l.exact:
            k = tuple(round(float(v), 10) for v in k)
        if k not in seen:
            seen[k] = l
    return list(seen.values())


def build_arrangement(lines: Sequence[Line], window=DEFAULT_WINDOW) -> LineArrangement:
    """Enumerate the cells of the arrangement of ``lines`` inside ``window``.

    Duplicate lines are removed.  Lines that miss the window do not split
    any cell but stay in the line list (their sign is constant on the window).
    """
    lines = dedup_lines(lines)
    polys = [_window_polygon(window)]
    for ln in lines:
        nxt = []
        for pg in polys:
            neg, pos = split_polygon(pg, ln)
            if neg is not None:
                nxt.append(neg)
            if pos is not None:
                nxt.append(pos)
        polys = nxt
    n = len(lines)
    if len(polys) > 1 + n + n * (n - 1) // 2:
        raise RuntimeError("cell count exceeds the arrangement bound")
    cells = []
    exact = all(l.exact for l in lines) and is_exact(*window)
    for i, pg in enumerate(polys):
        s = centroid(pg)
        signs = tuple(_sgn(l.value(s), exact) for l in lines)
        cells.append(Cell(i, pg, s, signs))
    arr = LineArrangement(list(lines), tuple(window), cells)
    arr.adjacency = _adjacency(arr)
    return arr


def _adjacency(arr: LineArrangement):
    adj = []
    for c in arr.cells:
        for j, s in enumerate(c.signs):
            if s > 0:
                flipped = list(c.signs)
                flipped[j] = -1
                d = arr.cell_by_signs(flipped)
                if d is not None and _share_edge(c, d, arr.lines[j]):
                    adj.append((c.id, j, d.id))
    return adj


def _share_edge(c: Cell, d: Cell, line: Line) -> bool:
    ex = line.exact
    on_c = [p for p in c.polygon if _sgn(line.value(p), ex) == 0]
    on_d = [p for p in d.polygon if _sgn(line.value(p), ex) == 0]
    return len(on_c) >= 2 and len(on_d) >= 2


def locate(arr: LineArrangement, z):
    """Containing cell of ``z``, or :class:`OnLine` when ``z`` is on a line."""
    sv = arr.sign_vector(z)
    zeros = [i for i, s in enumerate(sv) if s == 0]
    if zeros:
        return OnLine(zeros)
    c = arr.cell_by_signs(sv)
    if c is None:
        raise OutsideWindow(f"{z} lies in a cell that does not meet the window")
    return c


# ---------------------------------------------------------------------------
# Piecewise-affine functions
# ---------------------------------------------------------------------------

Affine = Tuple[Number, Number, Number]  # f(x, y) = gx*x + gy*y + b


def affine_eval(p: Affine, z) -> Number:
    return p[0] * z[0] + p[1] * z[1] + p[2]


class PwAffineFunction:
    """A continuous function that is affine on every cell of an arrangement.

    Parameters
    ----------
    arrangement : LineArrangement
    pieces : dict mapping cell id to ``(gx, gy, b)``
    meta : dict, optional
        Free-form metadata (for instance flags raised by :func:`pa_min`).
    """

    infinite = False

    def __init__(self, arrangement: LineArrangement, pieces: Dict[int, Affine], meta=None):
        self.arrangement = arrangement
        self.pieces = pieces
        self.meta = dict(meta or {})

    @property
    def lines(self) -> List[Line]:
        return self.arrangement.lines

    @property
    def window(self):
        return self.arrangement.window

    def piece_at(self, z) -> Affine:
        cells = self.arrangement.incident_cells(z)
        if not cells:
            raise OutsideWindow(f"{z} not covered")
        return self.pieces[cells[0].id]

    def evaluate(self, z) -> Number:
        return affine_eval(self.piece_at(z), z)

    __call__ = evaluate

    def gradient(self, z) -> Tuple[Number, Number]:
        loc = locate(self.arrangement, z)
        if isinstance(loc, OnLine):
            grads = sorted({self.pieces[c.id][:2] for c in self.arrangement.incident_cells(z)})
            if len(grads) == 1:
                # Break line of the arrangement but not of the function.
                return grads[0]
            raise MultiGradientError(z, grads)
        p = self.pieces[loc.id]
        return (p[0], p[1])

    def lipschitz(self) -> float:
        return max(float(sqrt(p[0] * p[0] + p[1] * p[1])) for p in self.pieces.values())

    def continuity_defect(self) -> float:
        """Largest jump between adjacent pieces along their shared edges."""
        worst = 0.0
        arr = self.arrangement
        for cid, j, did in arr.adjacency:
            ln = arr.lines[j]
            pts = [p for p in arr.cells[cid].polygon if _sgn(ln.value(p), ln.exact) == 0]
            for p in pts:
                d = affine_eval(self.pieces[cid], p) - affine_eval(self.pieces[did], p)
                worst = max(worst, abs(float(d)))
        return worst

    def __neg__(self) -> "PwAffineFunction":
        return PwAffineFunction(self.arrangement,
                                {k: (-a, -b, -c) for k, (a, b, c) in self.pieces.items()},
                                self.meta)


class InfiniteFunction:
    """The constant ``+inf`` placeholder used for the distance to an empty line set."""

    infinite = True
    lines: List[Line] = []

    def evaluate(self, z):
        return float("inf")

    __call__ = evaluate


def pa_affine(gx, gy, b, window=DEFAULT_WINDOW) -> PwAffineFunction:
    arr = build_arrangement([], window)
    return PwAffineFunction(arr, {0: (gx, gy, b)})


def pa_from_ramps(affine: Affine, ramps: Sequence[Tuple[Line, Number]],
                  window=DEFAULT_WINDOW) -> PwAffineFunction:
    """``affine + sum_i c_i * max(0, a_i x + b_i y - c_i)`` as a cell function."""
    arr = build_arrangement([ln for ln, _ in ramps], window)
    pieces = {}
    for cell in arr.cells:
        gx, gy, b = affine
        for ln, coef in ramps:
            if ln.value(cell.sample) > 0:
                gx += coef * ln.a
                gy += coef * ln.b
                b -= coef * ln.c
        pieces[cell.id] = (gx, gy, b)
    return PwAffineFunction(arr, pieces)


def _refine(lines, window, pick) -> PwAffineFunction:
    arr = build_arrangement(lines, window)
    return PwAffineFunction(arr, {c.id: pick(c.sample) for c in arr.cells})


def _clip(poly, halfplanes):
    """Intersect a convex polygon with half-planes ``(line, sign)``."""
    for ln, s in halfplanes:
        if poly is None:
            return None
        neg, pos = split_polygon(poly, ln)
        poly = pos if s > 0 else neg
    return poly


def pa_min(f, g) -> PwAffineFunction:
    """Pointwise minimum of two piecewise-affine functions.

    The result lives on the arrangement of both line sets together with the
    coincidence line of every pair of overlapping cells on which the two
    pieces cross.  Pairs of cells on which the pieces agree identically are
    counted in ``meta['coincident_cells']``.
    """
    if getattr(f, "infinite", False):
        return g
    if getattr(g, "infinite", False):
        return f
    window = f.window
    extra = []
    coincident = 0
    fa, ga = f.arrangement, g.arrangement
    for cf in fa.cells:
        for cg in ga.cells:
            hp = [(ga.lines[j], s) for j, s in enumerate(cg.signs)]
            ov = _clip(list(cf.polygon), hp)
            if ov is None:
                continue
            pf, pg = f.pieces[cf.id], g.pieces[cg.id]
            d = (pf[0] - pg[0], pf[1] - pg[1], pf[2] - pg[2])
            if d[0] == 0 and d[1] == 0:
                if d[2] == 0:
                    coincident += 1
                continue
            ln = Line(d[0], d[1], -d[2], tag="coincidence")
            ex = ln.exact and all(is_exact(*p) for p in ov)
            sg = {_sgn(ln.value(p), ex) for p in ov}
            if 1 in sg and -1 in sg:
                extra.append(ln)

    def pick(z):
        pf, pg = f.piece_at(z), g.piece_at(z)
        return pf if affine_eval(pf, z) <= affine_eval(pg, z) else pg

    out = _refine(list(fa.lines) + list(ga.lines) + extra, window, pick)
    out.meta["coincident_cells"] = coincident
    return out


def pa_max(f, g) -> PwAffineFunction:
    return -pa_min(-f, -g)


def bisectors(l1: Line, l2: Line) -> List[Line]:
    """Lines of points equidistant from ``l1`` and ``l2``."""
    n1, n2 = l1.normal_norm, l2.normal_norm
    out = []
    for s in (1, -1):
        a = l1.a * n2 - s * l2.a * n1
        b = l1.b * n2 - s * l2.b * n1
        c = l1.c * n2 - s * l2.c * n1
        if a == 0 and b == 0:
            continue
        if not is_exact(a, b, c) and abs(float(a)) + abs(float(b)) < FLOAT_TOL:
            continue
        out.append(Line(a, b, c, tag="bisector"))
    return out


def pa_dist_to_lines(T: Sequence[Line], scale: Number = 1, window=DEFAULT_WINDOW):
    """``scale * dist(z, union T)`` as a piecewise-affine function.

    Break lines are the members of ``T`` and their pairwise bisectors.  For an
    empty ``T`` the :class:`InfiniteFunction` placeholder is returned.
    """
    T = dedup_lines(T)
    if not T:
        return InfiniteFunction()
    lines = list(T)
    for l1, l2 in itertools.combinations(T, 2):
        lines.extend(bisectors(l1, l2))

    def pick(z):
        best = None
        for ln in T:
            d = abs(ln.offset(z))
            if best is None or d < best[0]:
                best = (d, ln)
        ln = best[1]
        nn = ln.normal_norm
        s = scale if ln.value(z) > 0 else -scale
        return (s * ln.a / nn, s * ln.b / nn, -s * ln.c / nn)

    return _refine(lines, window, pick)


def pa_eval(f, z) -> Number:
    return f.evaluate(z)


def pa_gradient(f, z):
    return f.gradient(z)


# ---------------------------------------------------------------------------
# Chord slopes along a ray
# ---------------------------------------------------------------------------

def ray_breakpoints(lines: Sequence[Line], z, e, eps) -> List[Number]:
    """Parameters ``s`` in ``(-eps, eps)`` where ``z + s*e`` meets a line."""
    out = set()
    for ln in lines:
        den = ln.a * e[0] + ln.b * e[1]
        if den == 0:
            continue
        s = -ln.value(z) / den
        if -eps < s < eps:
            out.add(s)
    return sorted(out)


@dataclass
class ChordExtrema:
    min_slope: Number
    max_slope: Number
    argmin: Tuple[Number, Number]
    argmax: Tuple[Number, Number]
    candidates: int


def chord_slope_extrema(f, z, e, eps) -> ChordExtrema:
    """Extreme slopes of chords of ``s -> f(z + s e)`` through ``s = 0``.

    A chord is a parameter interval ``[a, b]`` with ``a <= 0 <= b``,
    ``0 < b - a <= eps``.  The slope ``(g(b) - g(a)) / (b - a)`` is a
    linear-fractional function on every product of linear pieces, so the
    extremes occur at vertices of the feasible region: breakpoints, ``0``,
    ``+-eps`` and breakpoints shifted by ``eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    br = ray_breakpoints(f.lines, z, e, eps)
    A = {0, -eps} | {s for s in br if s < 0} | {s - eps for s in br if s > 0}
    B = {0, eps} | {s for s in br if s > 0} | {s + eps for s in br if s < 0}
    A = sorted(a for a in A if -eps <= a <= 0)
    B = sorted(b for b in B if 0 <= b <= eps)
    cache = {}

    def g(s):
        if s not in cache:
            cache[s] = f.evaluate((z[0] + s * e[0], z[1] + s * e[1]))
        return cache[s]

    lo = hi = None
    n = 0
    for a in A:
        for b in B:
            L = b - a
            if L == 0 or L > eps:
                continue
            n += 1
            sl = (g(b) - g(a)) / L
            if lo is None or sl < lo[0]:
                lo = (sl, (a, b))
            if hi is None or sl > hi[0]:
                hi = (sl, (a, b))
    return ChordExtrema(lo[0], hi[0], lo[1], hi[1], n)

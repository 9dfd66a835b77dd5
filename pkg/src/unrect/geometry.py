"""Planar primitives: unit vectors, lines, strips, cones and directional extents.

All primitives accept exact rationals (``int`` / ``Fraction``) or floats.  When
every input is rational the predicates below are exact; mixing in a float makes
the arithmetic fall back to floating point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Tuple, Union

Number = Union[int, Fraction, float]
Point = Tuple[Number, Number]

UNIT_TOL = 1e-12


def is_exact(*values) -> bool:
    """True when every value is an ``int`` or ``Fraction``."""
    return all(isinstance(v, (int, Fraction)) for v in values)


def exact_sqrt(q: Number):
    """Return the rational square root of ``q`` if it exists, else ``None``."""
    if not is_exact(q):
        return None
    q = Fraction(q)
    if q < 0:
        return None
    n, d = q.numerator, q.denominator
    rn, rd = math.isqrt(n), math.isqrt(d)
    if rn * rn == n and rd * rd == d:
        return Fraction(rn, rd)
    return None


def sqrt(q: Number) -> Number:
    """Square root that stays rational when the argument is a rational square."""
    r = exact_sqrt(q)
    if r is not None:
        return r
    return math.sqrt(float(q))


def dot(u, v) -> Number:
    return u[0] * v[0] + u[1] * v[1]


def cross(u, v) -> Number:
    return u[0] * v[1] - u[1] * v[0]


def sub(p, q) -> Point:
    return (p[0] - q[0], p[1] - q[1])


def add(p, q) -> Point:
    return (p[0] + q[0], p[1] + q[1])


def scale(t, p) -> Point:
    return (t * p[0], t * p[1])


def rot90(p) -> Point:
    """Rotate a plane vector by +90 degrees."""
    return (-p[1], p[0])


def to_fraction_point(p, max_den: int | None = None) -> Point:
    """Convert a point to exact rational coordinates."""
    out = []
    for c in p:
        f = Fraction(c)
        if max_den is not None:
            f = f.limit_denominator(max_den)
        out.append(f)
    return (out[0], out[1])


@dataclass(frozen=True)
class UnitVector:
    """A direction in the plane, renormalized on construction.

    Rational input whose squared norm is a rational square is normalized
    exactly; anything else is normalized in floating point.
    """

    x: Number
    y: Number

    def __post_init__(self):
        n2 = self.x * self.x + self.y * self.y
        if n2 == 0:
            raise ValueError("zero vector has no direction")
        if n2 != 1:
            r = exact_sqrt(n2)
            if r is not None:
                object.__setattr__(self, "x", Fraction(self.x) / r)
                object.__setattr__(self, "y", Fraction(self.y) / r)
            else:
                r = math.sqrt(float(n2))
                object.__setattr__(self, "x", float(self.x) / r)
                object.__setattr__(self, "y", float(self.y) / r)
                n2 = self.x * self.x + self.y * self.y
                if abs(n2 - 1.0) > UNIT_TOL:
                    raise ValueError("normalization failed")

    def __getitem__(self, i):
        return (self.x, self.y)[i]

    def __iter__(self):
        yield self.x
        yield self.y

    def __len__(self):
        return 2

    def __neg__(self) -> "UnitVector":
        return UnitVector(-self.x, -self.y)

    @property
    def exact(self) -> bool:
        return is_exact(self.x, self.y)

    def as_float(self) -> Tuple[float, float]:
        return (float(self.x), float(self.y))

    def angle(self) -> float:
        return math.atan2(float(self.y), float(self.x))

    @classmethod
    def from_angle(cls, theta: float, max_den: int | None = 2**20) -> "UnitVector":
        """Unit vector at angle ``theta``.

        With ``max_den`` set, returns an exact rational unit vector (a
        Pythagorean direction) whose angle is close to ``theta``.  The error is
        governed by the rational approximation of ``tan(theta/2)``.
        """
        if max_den is None:
            return cls(math.cos(theta), math.sin(theta))
        # Stay away from the tangent pole at theta = pi.
        theta = math.remainder(theta, 2 * math.pi)
        flip = abs(theta) > math.pi / 2
        if flip:
            theta = theta - math.copysign(math.pi, theta)
        t = Fraction(math.tan(theta / 2)).limit_denominator(max_den)
        den = 1 + t * t
        u = cls((1 - t * t) / den, 2 * t / den)
        return -u if flip else u


def perp(u: UnitVector) -> UnitVector:
    """Rotate ``u`` by +90 degrees: ``(x, y) -> (-y, x)``."""
    return UnitVector(-u.y, u.x)


def _canonical(a, b, c):
    """Scale (a, b, c) so the first nonzero normal coefficient equals one."""
    s = a if a != 0 else b
    if is_exact(a, b, c):
        s = Fraction(s)
        return (Fraction(a) / s, Fraction(b) / s, Fraction(c) / s)
    s = float(s)
    return (float(a) / s, float(b) / s, float(c) / s)


@dataclass(frozen=True, eq=False)
class Line:
    """The line ``{z : a*x + b*y = c}``.

    The homogeneous form ``(a, b, c)`` is what all incidence and side
    predicates use.  ``dir`` is the stored orientation; it is chosen so that
    ``perp(dir)`` points along the normal ``(a, b)``.  For a line built with
    :meth:`through` the normal is ``perp(dir)`` itself, hence a unit vector.
    """

    a: Number
    b: Number
    c: Number
    base: Point = field(default=None)
    tag: str = field(default="", compare=False)

    def __post_init__(self):
        if self.a == 0 and self.b == 0:
            raise ValueError("degenerate line")
        if self.base is None:
            n2 = self.a * self.a + self.b * self.b
            if is_exact(self.a, self.b, self.c):
                t = Fraction(self.c) / n2
            else:
                t = float(self.c) / float(n2)
            object.__setattr__(self, "base", (t * self.a, t * self.b))

    @classmethod
    def through(cls, base: Point, direction: UnitVector, tag: str = "") -> "Line":
        n = rot90(direction)
        return cls(n[0], n[1], dot(base, n), base=tuple(base), tag=tag)

    @property
    def normal(self) -> Point:
        return (self.a, self.b)

    @property
    def normal_sq(self) -> Number:
        return self.a * self.a + self.b * self.b

    @property
    def normal_norm(self) -> Number:
        return sqrt(self.normal_sq)

    @property
    def dir(self) -> UnitVector:
        return UnitVector(self.b, -self.a)

    @property
    def exact(self) -> bool:
        return is_exact(self.a, self.b, self.c)

    def value(self, z) -> Number:
        """Homogeneous residual ``a*x + b*y - c`` (zero exactly on the line)."""
        return self.a * z[0] + self.b * z[1] - self.c

    def side(self, z) -> int:
        v = self.value(z)
        return (v > 0) - (v < 0)

    def offset(self, z) -> Number:
        """Signed distance from ``z`` to the line, positive along the normal."""
        return self.value(z) / self.normal_norm

    def key(self):
        """Hashable key identifying the point set of the line."""
        return _canonical(self.a, self.b, self.c)

    def parallel_to(self, other: "Line") -> bool:
        return cross(self.normal, other.normal) == 0

    def intersect(self, other: "Line"):
        """Intersection point, or ``None`` for parallel lines."""
        det = cross(self.normal, other.normal)
        if det == 0:
            return None
        x = (self.c * other.b - self.b * other.c) / det
        y = (self.a * other.c - self.c * other.a) / det
        if is_exact(x, y) and not isinstance(x, Fraction):
            x, y = Fraction(x), Fraction(y)
        return (x, y)

    def point_at(self, t) -> Point:
        d = self.dir
        return (self.base[0] + t * d.x, self.base[1] + t * d.y)

    def __repr__(self):
        return f"Line({self.a}, {self.b}, {self.c})"


@dataclass(frozen=True)
class Strip:
    """Open neighbourhood ``{z : |<z - base, dir^perp>| < half_width}``."""

    line: Line
    half_width: Number

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    def contains(self, z) -> bool:
        v = self.line.value(z)
        if is_exact(v, self.half_width) and self.line.exact:
            return v * v < self.half_width * self.half_width * self.line.normal_sq
        return abs(float(v)) / float(self.line.normal_norm) < float(self.half_width)

    def boundary(self) -> Tuple[Line, Line]:
        """The two boundary lines, lower (negative offset) first."""
        ln = self.line
        r = self.half_width * ln.normal_norm
        return (Line(ln.a, ln.b, ln.c - r, tag=ln.tag + ":lo"),
                Line(ln.a, ln.b, ln.c + r, tag=ln.tag + ":hi"))


def strip_signed_offset(s: Strip, z) -> Number:
    """Signed offset ``<z - base, dir^perp>`` of ``z`` relative to the strip's line."""
    return s.line.offset(z)


@dataclass(frozen=True)
class Cone:
    """``C(axis, width)``, or the double cone when ``double_sided`` is set."""

    axis: UnitVector
    width: Number
    double_sided: bool = False

    def __post_init__(self):
        if not 0 <= self.width:
            raise ValueError("cone width must be nonnegative")


def cone_contains(c: Cone, v, strict: bool = False) -> bool:
    """Membership test ``<v, axis> >= 1 - width`` (absolute value for double cones)."""
    s = dot(v, c.axis)
    if c.double_sided:
        s = abs(s)
    bound = 1 - c.width
    return s > bound if strict else s >= bound


def diam_v(polygon: Iterable, v) -> Number:
    """Extent ``max <p, v> - min <p, v>`` of a point set along ``v``.

    Parameters
    ----------
    polygon : iterable of points
        Vertices of a convex set (any finite point set works).
    v : unit vector

    Returns
    -------
    The nonnegative directional diameter.
    """
    vals = [dot(p, v) for p in polygon]
    if not vals:
        raise ValueError("diam_v of an empty set")
    return max(vals) - min(vals)


def dist_point_line(z, line: Line) -> Number:
    return abs(line.offset(z))


def segment_window_clip(line: Line, window: Sequence[Number]):
    """Parameter interval of ``line`` (along ``line.dir`` from ``line.base``)
    that lies in the closed box ``window = (x0, x1, y0, y1)``.

    Returns ``None`` if the line misses the box.  Exact when inputs are.
    """
    x0, x1, y0, y1 = window
    d = line.dir
    p = line.base
    lo, hi = None, None
    for pc, dc, a, b in ((p[0], d.x, x0, x1), (p[1], d.y, y0, y1)):
        if dc == 0:
            if pc < a or pc > b:
                return None
            continue
        t1, t2 = (a - pc) / dc, (b - pc) / dc
        if t1 > t2:
            t1, t2 = t2, t1
        lo = t1 if lo is None else max(lo, t1)
        hi = t2 if hi is None else min(hi, t2)
    if lo is None or lo > hi:
        return None
    return (lo, hi)

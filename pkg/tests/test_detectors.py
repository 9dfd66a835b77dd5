import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from conftest import rq, strip_point
from oracles import zeta_bruteforce_exact
from unrect.arrangement import pa_affine, pa_from_ramps, ray_breakpoints
from unrect.construction import StageSpec, StripSchedule, construction_for
from unrect.detectors import (WitnessError, accumulation_check, direction_set,
                              directional_derivative_probe, nondiff_witness_h, nondiff_witness_phi,
                              perturbation_stability, upsilon, witness_geometry, zeta)
from unrect.geometry import Line, UnitVector, perp, sqrt

E1 = UnitVector(Fraction(1), Fraction(0))
E2 = UnitVector(Fraction(0), Fraction(1))
W = (Fraction(-2), Fraction(3), Fraction(-2), Fraction(3))


def absx():
    return pa_from_ramps((Fraction(-1), Fraction(0), Fraction(0)), [(Line(1, 0, 0), Fraction(2))], W)


def horizontal_stage():
    return StripSchedule(w=E1, eta=Fraction(1, 16),
                         stages=[StageSpec((Fraction(1, 2), Fraction(1, 2)), E1, Fraction(1, 64),
                                           Fraction(1, 4))])


def test_zeta_abs_is_two():
    for eps in (Fraction(1), Fraction(1, 1000)):
        val, wit = zeta(absx(), (0, 0), eps, E1)
        assert val == 2
        assert wit.defect_of(absx().evaluate) == 2


def test_zeta_affine_is_zero():
    f = pa_affine(Fraction(3), Fraction(-2), Fraction(1), W)
    for e in direction_set(8):
        assert zeta(f, (Fraction(1, 3), Fraction(1, 5)), Fraction(1, 4), e)[0] == 0


def test_zeta_symmetric_in_direction():
    f = absx()
    e = UnitVector(Fraction(3, 5), Fraction(4, 5))
    z = (Fraction(1, 10), Fraction(0))
    assert zeta(f, z, Fraction(1, 2), e)[0] == zeta(f, z, Fraction(1, 2), -e)[0]


def test_zeta_monotone_in_eps():
    f = absx()
    z = (Fraction(1, 10), Fraction(0))
    vals = [zeta(f, z, Fraction(1, n), E1)[0] for n in (1, 2, 4, 8, 16)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    # z is farther than eps from the kink for eps < 1/10; at eps = 1 the
    # steepest descending chord is [-9/10, 1/10] with slope -4/5
    assert vals[-1] == 0 and vals[0] == Fraction(9, 5)


def rand_pa(rnd, n):
    ramps = []
    for _ in range(n):
        a, b = rnd.randint(-5, 5), rnd.randint(-5, 5)
        if a == 0 and b == 0:
            a = 1
        ramps.append((Line(a, b, Fraction(rnd.randint(-5, 5), 7)), Fraction(rnd.randint(-3, 3), 2)))
    return pa_from_ramps((Fraction(0), Fraction(0), Fraction(0)), ramps, W)


@given(st.integers(0, 10 ** 6), st.integers(1, 5))
def test_zeta_matches_exact_bruteforce(seed, n):
    rnd = random.Random(seed)
    f = rand_pa(rnd, n)
    z = (rq(rnd, -1, 1, 64), rq(rnd, -1, 1, 64))
    e = rnd.choice([E1, E2, UnitVector(Fraction(3, 5), Fraction(-4, 5))])
    eps = Fraction(rnd.randint(1, 16), 16)
    br = ray_breakpoints(f.lines, z, e, eps)
    lo, hi = zeta_bruteforce_exact(f.evaluate, z, e, eps, br)
    assert zeta(f, z, eps, e)[0] == hi - lo


def test_direction_sets_nested():
    a, b = direction_set(8), direction_set(16)
    assert b[:8] == a
    assert len({(d.x, d.y) for d in b}) == 16


def test_upsilon_monotone_in_budget():
    f = absx()
    z = (Fraction(1, 10), Fraction(1, 7))
    vals = [upsilon(f, z, Fraction(1, 2), n)[0] for n in (8, 16, 32)]
    assert vals[0] <= vals[1] <= vals[2]
    with pytest.raises(ValueError):
        upsilon(f, z, Fraction(1, 2), 4)


def test_probe_verdicts():
    f = absx()
    r = directional_derivative_probe(f, (0, 0), E1, [Fraction(1, 2 ** i) for i in range(6)])
    assert r["verdict"].startswith("non-differentiable")
    r = directional_derivative_probe(f, (Fraction(1, 3), 0), E1, [Fraction(1, 2 ** i) for i in range(6)])
    assert r["verdict"] == "derivative-consistent"
    with pytest.raises(ValueError):
        directional_derivative_probe(f, (0, 0), E1, [Fraction(1, 4), Fraction(1, 2)])


# -- stage witnesses -----------------------------------------------------------------

def test_witness_geometry_horizontal():
    s = horizontal_stage()
    c = construction_for(s)
    z = (Fraction(1, 3), Fraction(1, 2) + Fraction(1, 200))
    v, u, t1 = witness_geometry(c, 1, z, E2)
    assert t1 == s.stage(1).rho
    assert u[1] == Fraction(1, 2)
    wit = nondiff_witness_phi(s, 1, z, E2)
    assert wit.s == 2 * wit.t == 2 * t1


def test_phi_witness_defect(sched6):
    c = construction_for(sched6)
    se = sqrt(sched6.eta)
    rnd = random.Random(1)
    n = 0
    for k in range(1, 7):
        geo = c.geos[k]
        for _ in range(15):
            z = strip_point(geo, rq(rnd, -1, 1), rq(rnd, -1, 1))
            try:
                wit = nondiff_witness_phi(c, k, z, perp(sched6.w))
            except WitnessError:
                continue
            assert wit.defect >= se / 2
            n += 1
    assert n > 60


def test_phi_witness_preconditions(sched6):
    c = construction_for(sched6)
    geo = c.geos[3]
    with pytest.raises(WitnessError, match="not in strip"):
        nondiff_witness_phi(c, 3, strip_point(geo, 0, 3), perp(sched6.w))
    with pytest.raises(WitnessError, match="double cone"):
        nondiff_witness_phi(c, 3, strip_point(geo, Fraction(1, 9), 0), sched6.w)


def test_h_witness(sched6):
    c = construction_for(sched6)
    rnd = random.Random(8)
    n = 0
    for _ in range(40):
        k = rnd.randint(3, 6)
        z = strip_point(c.geos[k], rq(rnd, -1, 1), rq(rnd, -1, 1))
        try:
            rep = nondiff_witness_h(c, z, None, perp(sched6.w), Fraction(1, 10))
        except WitnessError:
            continue
        assert rep.ok
        assert rep.slack <= rep.bound / 4
        n += 1
    assert n > 10


def test_perturbation_stability():
    wit = zeta(absx(), (0, 0), Fraction(1), E1)[1]
    theta = Fraction(1, 100)
    g = pa_from_ramps((Fraction(0), Fraction(0), theta), [(Line(0, 1, 0), Fraction(1, 1000))], W)
    guaranteed = perturbation_stability(wit, theta)
    f = lambda p: absx().evaluate(p) + g.evaluate(p)
    assert wit.defect_of(f) >= guaranteed


def test_accumulation_check_abs():
    r = accumulation_check(absx(), (0, 0), [Fraction(1, 2 ** i) for i in range(4)], Fraction(1))
    assert r["ok"] and r["heuristic"] and r["rows"]

import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from conftest import rq, strip_point
from oracles import exact_gradient
from unrect.arrangement import pa_dist_to_lines, pa_min
from unrect.construction import (ALL_CONDITIONS, CURVE_CONDITIONS, ScheduleError, StageGeometry,
                                 StageSpec, StripSchedule, certificate_ok, classify_depth_K,
                                 component_count, construction_for, generate_schedule, phi_tilde,
                                 sigma_k, strip_hits, theta_k, validate_schedule)
from unrect.geometry import UnitVector

HALF = Fraction(1, 2)


def one_stage(rho=Fraction(1, 64)):
    w = UnitVector(Fraction(1), Fraction(0))
    return StripSchedule(w=w, eta=Fraction(1, 16),
                         stages=[StageSpec((HALF, HALF), UnitVector(Fraction(1), Fraction(0)), rho,
                                           Fraction(1, 4))])


def failing(cert):
    return {v["condition"] for v in cert["violations"]}


# -- validator -----------------------------------------------------------------

def test_rule_24_passes_separation_decay():
    # 12 sum_{k>=max(p,1)} 3^k 2^-5 24^-k = (3/7) 8^-max(p,1) <= 4^-p
    s = generate_schedule(K=4, rng_seed=0, rho_rule=(Fraction(1, 32), Fraction(1, 24)), require=())
    rows = [r for r in s.certificate["checks"] if r["condition"] == "i"]
    assert all(r["pass"] for r in rows)
    for r in rows:
        assert r["lhs"] == pytest.approx(3 / 7 * 8.0 ** -max(r["index"], 1), rel=1e-12)


def test_rule_third_fails_at_p1():
    s = generate_schedule(K=3, rng_seed=0, rho_rule=(Fraction(1), Fraction(1, 3)), require=())
    bad = [v for v in s.certificate["violations"] if v["condition"] == "i"]
    assert any(v["index"] == 1 for v in bad)
    with pytest.raises(ScheduleError):
        generate_schedule(K=3, rng_seed=0, rho_rule=(Fraction(1), Fraction(1, 3)))


def test_single_stage_separation_vacuous():
    cert = validate_schedule(one_stage())
    rows = [r for r in cert["checks"] if r["condition"] == "ii"]
    assert len(rows) == 1 and rows[0]["pass"] and rows[0]["rhs"] == "inf"


def test_default_schedules_certified(sched12, curve_sched):
    assert sched12.certificate["ok"]
    assert certificate_ok(curve_sched.certificate, CURVE_CONDITIONS)
    assert set(ALL_CONDITIONS) >= failing(curve_sched.certificate)


def test_cone_violation_detected():
    s = one_stage()
    s.stages[0] = StageSpec((HALF, HALF), UnitVector(Fraction(3, 5), Fraction(4, 5)),
                            Fraction(1, 64), Fraction(1, 4))
    assert "v" in failing(validate_schedule(s))


def test_bad_eta_rejected():
    with pytest.raises(ScheduleError):
        generate_schedule(eta=Fraction(1, 2), K=2)


def test_theta_dyadic_and_decreasing():
    th = [theta_k(Fraction(1, 16), k) for k in range(1, 8)]
    for t in th:
        assert t.numerator == 1 and (t.denominator & (t.denominator - 1)) == 0
    assert all(a >= b for a, b in zip(th, th[1:]))


def test_roundtrip(sched6):
    again = StripSchedule.loads(sched6.dumps())
    assert again.stages == sched6.stages and again.eta == sched6.eta
    with pytest.raises(ScheduleError):
        StripSchedule.loads("{not json")
    with pytest.raises(ScheduleError):
        StripSchedule.loads('{"w": [1, 0]}')


def test_generation_deterministic():
    a = generate_schedule(K=4, rng_seed=7)
    b = generate_schedule(K=4, rng_seed=7)
    assert a.dumps() == b.dumps()


# -- stage functions -------------------------------------------------------------

def test_phi_tilde_midline_value():
    s = one_stage()
    c = construction_for(s)
    geo = c.geos[1]
    assert geo.phi_tilde((Fraction(1, 3), HALF)) == geo.rho / geo.wde
    assert geo.phi_tilde((HALF, HALF + geo.rho)) == geo.top
    assert geo.phi_tilde((HALF, HALF - geo.rho)) == 0


def test_phi_tilde_midline_sched(sched6):
    for k in range(1, 7):
        geo = StageGeometry.of(sched6, k)
        z = strip_point(geo, Fraction(1, 5), 0)
        assert geo.phi_tilde(z) == geo.rho / geo.wde


def test_phi_tilde_gradient_formula(sched6):
    for k in range(1, 7):
        geo = StageGeometry.of(sched6, k)
        z = strip_point(geo, Fraction(1, 7), Fraction(1, 3))
        assert geo.phi_tilde_gradient(z) == geo.gradient_formula(sched6.w)
        # derivative along w^perp equals 1 inside the strip
        g = geo.phi_tilde_gradient(z)
        assert -g[0] * sched6.w.y + g[1] * sched6.w.x == 1


@pytest.mark.parametrize("k", [2, 3])
def test_phi_matches_cell_oracle(sched6, k):
    c = construction_for(sched6)
    Z = c.states[k - 1].Z
    oracle = pa_min(phi_tilde(sched6, k), pa_dist_to_lines(Z, Fraction(1, 2 ** k), sched6.arr_window))
    rnd = random.Random(k)
    geo = c.geos[k]
    pts = [(rq(rnd, 0, 1, 2 ** 20), rq(rnd, 0, 1, 2 ** 20)) for _ in range(40)]
    pts += [strip_point(geo, rq(rnd, -1, 1, 2 ** 20), rq(rnd, -1, 1, 2 ** 20)) for _ in range(40)]
    for z in pts:
        assert c.phi(k, z) == oracle.evaluate(z)


def test_phi_properties(sched6):
    c = construction_for(sched6)
    rnd = random.Random(3)
    for k in range(1, 7):
        geo = c.geos[k]
        for _ in range(30):
            z = strip_point(geo, rq(rnd, -1, 1), rq(rnd, -2, 2))
            f = c.phi(k, z)
            assert 0 <= f <= c.phi_tilde(k, z)
            if not geo.in_strip(z):
                assert c.phi_tilde(k, z) in (0, geo.top)
        # phi vanishes on Z_{k-1}
        for ln in c.states[k - 1].Z[:4]:
            p = ln.point_at(Fraction(1, 3))
            assert c.phi(k, p) == 0


def test_phi_gradient_matches_difference_quotient(sched6):
    c = construction_for(sched6)
    rnd = random.Random(5)
    tau = Fraction(1, 2 ** 70)
    checked = 0
    for k in range(1, 5):
        geo = c.geos[k]
        for _ in range(20):
            z = strip_point(geo, rq(rnd, -1, 1), rq(rnd, -1, 1))
            g = c.phi_gradient(k, z)
            if g is None or not c.same_cell(k, z, (z[0] + tau, z[1] + tau)):
                continue
            if not (c.same_cell(k, z, (z[0] + tau, z[1])) and c.same_cell(k, z, (z[0], z[1] + tau))):
                continue
            assert exact_gradient(lambda p: c.phi(k, p), z, tau) == g
            checked += 1
    assert checked > 20


# -- partial sums and counters ----------------------------------------------------

def test_h_depth_zero(sched6):
    c = construction_for(sched6)
    assert c.h(0, (HALF, HALF)) == 0


def test_h_term_by_term(sched6):
    c = construction_for(sched6)
    rnd = random.Random(11)
    for _ in range(25):
        geo = c.geos[rnd.randint(1, 6)]
        z = strip_point(geo, rq(rnd, -1, 1), rq(rnd, -1, 1))
        prof = c.profile(z)
        total = Fraction(0)
        for k in range(1, 7):
            total += Fraction(prof.sigma[k - 1], 2 ** prof.m[k - 1]) * c.phi(k, z)
            assert prof.h[k] == total


def test_sigma_and_hits(sched6):
    c = construction_for(sched6)
    rnd = random.Random(2)
    for _ in range(25):
        geo = c.geos[rnd.randint(1, 6)]
        z = strip_point(geo, rq(rnd, -1, 1), rq(rnd, -1, 1))
        prof = c.profile(z)
        assert prof.k_list == strip_hits(sched6, z)
        assert prof.sigma[0] == -1
        for k in range(1, 7):
            assert prof.sigma[k] == sigma_k(sched6, z, k)


def test_sigma_outside_all_strips():
    s = one_stage()
    z = (Fraction(1, 3), Fraction(1, 10))
    assert sigma_k(s, z, 1) == -1
    assert sigma_k(s, (Fraction(1, 3), HALF), 1) == 1


def test_m_increments_are_unit(sched6):
    c = construction_for(sched6)
    rnd = random.Random(4)
    for _ in range(25):
        z = (rq(rnd, 0, 1), rq(rnd, 0, 1))
        prof = c.profile(z)
        steps = [b - a for a, b in zip(prof.m, prof.m[1:])]
        assert set(steps) <= {0, 1}
        assert len(prof.increments) == prof.m[-1]


def test_small_eps0_forces_increments():
    s = generate_schedule(K=5, rng_seed=0, eps0=Fraction(1, 4))
    c = construction_for(s)
    rnd = random.Random(0)
    seen = 0
    for _ in range(40):
        geo = c.geos[rnd.randint(1, 5)]
        seen += c.profile(strip_point(geo, rq(rnd, -1, 1), rq(rnd, -1, 1))).m[-1]
    assert seen > 0


@given(st.integers(0, 2 ** 30), st.integers(0, 2 ** 30))
def test_h_bounded_by_tail_sum(a, b):
    s = _SCHED6
    c = construction_for(s)
    z = (Fraction(a, 2 ** 30), Fraction(b, 2 ** 30))
    bound = 2 * s.rho_tail(0) / (1 - s.eta)
    assert abs(c.h(6, z)) <= bound


_SCHED6 = generate_schedule(K=6, rng_seed=0)


def test_classification_keys(sched6):
    c = construction_for(sched6)
    z = strip_point(c.geos[5], Fraction(1, 9), Fraction(1, 5))
    cls = classify_depth_K(c, z)
    assert cls["E_K"] and 5 in cls["k_list"]
    assert cls["proxy"].startswith("depth-6")


def test_component_count_bound(sched6):
    for k in range(1, 7):
        n = component_count(sched6, k)
        assert 1 <= n <= 3 ** k

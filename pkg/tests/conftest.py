import os
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from unrect.construction import (CURVE_CONDITIONS, CURVE_RHO_RULE, construction_for,
                                 generate_schedule)

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def sched12():
    """Default schedule at the maximal acceptance depth."""
    return generate_schedule(K=12, rng_seed=0)


@pytest.fixture(scope="session")
def cons12(sched12):
    return construction_for(sched12)


@pytest.fixture(scope="session")
def sched6():
    return generate_schedule(K=6, rng_seed=0)


@pytest.fixture(scope="session")
def curve_sched():
    """Schedule for curve suites (strips resolvable in double precision)."""
    return generate_schedule(K=6, rng_seed=0, rho_rule=CURVE_RHO_RULE, require=CURVE_CONDITIONS)


def rq(rnd: random.Random, a, b, den=2 ** 40) -> Fraction:
    """Uniform dyadic rational in ``[a, b]``."""
    return Fraction(rnd.randint(int(a * den), int(b * den)), den)


def strip_point(geo, a, b):
    """``x_k + a e_k + b rho_k e_k^perp``."""
    return (geo.x[0] + a * geo.e.x + b * geo.rho * geo.eperp.x,
            geo.x[1] + a * geo.e.y + b * geo.rho * geo.eperp.y)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines):
            terminalreporter.write_line(ln)

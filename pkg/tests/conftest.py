from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

from venetian.construction import construct
from venetian.kernel import Piece, canonicalize_direction, make_slab
from venetian.schedule import SEARCH, ParameterPlan, build_schedule

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def box(*ranges, directions=None):
    """Piece from per-direction ranges; axis directions unless given."""
    d = len(ranges)
    if directions is None:
        directions = [tuple(int(i == j) for j in range(d)) for i in range(d)]
    slabs = tuple(make_slab(canonicalize_direction(v), lo, hi) for v, (lo, hi) in zip(directions, ranges))
    return Piece(slabs, 0, -1, 0, Fraction(1))


def run(lines, depth, t=0, option="unconstrained", growth=1, max_pieces=200000, partition_tail=0,
        n_limit=1024):
    d = len(lines[0])
    sched = build_schedule(lines, d, max(depth, 2 * d * len(lines)))
    plan = ParameterPlan(Fraction(t), option, Fraction(growth), partition_tail=partition_tail,
                         strategy=SEARCH, depth=depth, max_pieces=max_pieces, n_limit=n_limit)
    return construct(sched, plan, depth, max_pieces)


@pytest.fixture(scope="session")
def ledger_d2():
    """Small two-cycle run in the plane, t = 0."""
    return run([(1, 0)], 8, t=0, option="capacity")


@pytest.fixture(scope="session")
def ledger_d2_half():
    return run([(1, 0)], 8, t=Fraction(1, 2), option="unconstrained")


@pytest.fixture(scope="session")
def ledger_d3():
    """Short run in R^3, t = 0."""
    return run([(1, 0, 0)], 8, t=0, option="capacity")


ACCEPTANCE = {}  # criterion number -> (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

import math
import random
from fractions import Fraction

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import box, run
from venetian.analysis import (
    CASE1,
    CASE2,
    BallQuery,
    Projection,
    StageRecord,
    ball_bound_holds,
    box_count,
    box_series,
    case_ranges,
    check_mk_recursion,
    classify_ball,
    compute_wk,
    dim_slope,
    energy,
    ledger_records,
    mass_ball_bounds,
    piece_center,
    projection_measure_series,
    rasterize,
    ratio_within,
    sample_centers,
    strictly_decreasing,
)
from venetian.construction import Stage
from venetian.errors import (
    CaseRangeError,
    InvalidExponent,
    LineNotInSchedule,
    OrthogonalLines,
    SlopeUndefined,
)
from venetian.kernel import Piece, canonicalize_direction, determinant, make_slab, piece_vertices
from venetian.schedule import build_schedule

F = Fraction


def line(*c):
    return canonicalize_direction(c)


def stage_of(pieces, k=1):
    return Stage(k, None, 0, 0, list(pieces), {})


class TestRecursion:
    def synthetic(self, m4):
        sched = build_schedule([(1, 0)], 2, 4)
        # m_k = m_{k-1} + n_k - a_k - n_{k-2} gives alpha tilde = 0 at k = 3, 4
        recs = [StageRecord(1, 4, 2, 2.0), StageRecord(2, 4, 2, 4.0),
                StageRecord(3, 4, 2, 2.0), StageRecord(4, 4, 2, m4)]
        return sched, recs

    def test_exact_recursion_has_zero_defect(self):
        sched, recs = self.synthetic(0.0)
        rep = check_mk_recursion(recs, sched)
        assert [r.k for r in rep.rows] == [3, 4]
        assert all(r.alpha_tilde == 0 for r in rep.rows)
        assert rep.verdict

    def test_defect_beyond_M_is_flagged(self):
        sched = build_schedule([(1, 0)], 2, 4)
        M = sched.angle_data[4].M
        sched, recs = self.synthetic(-(M + 1.0))
        rep = check_mk_recursion(recs, sched)
        assert rep.row(4).alpha_tilde == M + 1
        assert rep.violations() == [4]
        assert not rep.verdict

    def test_built_ledger_within(self, ledger_d2):
        rep = check_mk_recursion(ledger_d2, ledger_d2.schedule)
        assert rep.verdict
        assert [r.k for r in rep.rows] == list(range(3, ledger_d2.depth + 1))

    def test_corrupted_count_is_flagged(self, ledger_d2):
        recs = ledger_records(ledger_d2)
        k = 5
        M = ledger_d2.schedule.angle_data[k].M
        r = recs[k - 1]
        bumped = r.count * 2 ** (2 * M + 1)
        recs[k - 1] = StageRecord(r.k, r.n, r.a, math.log2(bumped), bumped)
        rep = check_mk_recursion(recs, ledger_d2.schedule)
        assert k in rep.violations()


class TestWk:
    # oldest slab x in [0, 1/4], newest y in [0, 1/64]
    parent = box((0, F(1, 4)), (0, F(1, 64)))

    def test_all_opposite_pairs(self):
        # near ends project to {0, 1/64}, far ends to {1/4, 17/64}
        rep = compute_wk(self.parent, line(1, 1))
        assert rep.gap == F(15, 64)
        assert rep.metric_sq == F(15, 64) ** 2 / 2

    def test_edges_only(self):
        rep = compute_wk(self.parent, line(1, 1), edges_only=True)
        assert rep.gap == F(1, 4)
        assert rep.width_sq == F(1, 16)

    def test_along_the_long_axis(self):
        rep = compute_wk(self.parent, line(1, 0))
        assert rep.gap == F(1, 4)
        assert rep.metric_sq == rep.width_sq
        assert rep.verdict

    def test_orthogonal_line(self):
        with pytest.raises(OrthogonalLines):
            compute_wk(self.parent, line(0, 1))


def _hull(points):
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _clip(poly, axis, bound, keep_below):
    def inside(p):
        return p[axis] <= bound if keep_below else p[axis] >= bound

    out = []
    for i, cur in enumerate(poly):
        prev = poly[i - 1]
        if inside(cur):
            if not inside(prev):
                out.append(_cut(prev, cur, axis, bound))
            out.append(cur)
        elif inside(prev):
            out.append(_cut(prev, cur, axis, bound))
    return out


def _cut(p, q, axis, bound):
    s = (bound - p[axis]) / (q[axis] - p[axis])
    return tuple(a + s * (b - a) for a, b in zip(p, q))


def _area(poly):
    return abs(sum(p[0] * q[1] - q[0] * p[1] for p, q in zip(poly, poly[1:] + poly[:1]))) / 2


def polygon_count(pieces, q):
    """Cells of side 2^-q whose clipped intersection with some piece has positive area."""
    h = F(1, 2 ** q)
    cells = set()
    for p in pieces:
        poly = _hull(piece_vertices(p))
        xs = [v[0] for v in poly]
        ys = [v[1] for v in poly]
        for i in range(math.floor(min(xs) / h) - 1, math.ceil(max(xs) / h) + 1):
            for j in range(math.floor(min(ys) / h) - 1, math.ceil(max(ys) / h) + 1):
                c = poly
                for axis, lo in ((0, i * h), (1, j * h)):
                    if c:
                        c = _clip(c, axis, lo, False)
                    if c:
                        c = _clip(c, axis, lo + h, True)
                if len(c) >= 3 and _area(c) > 0:
                    cells.add((i, j))
    return len(cells)


def random_piece(rng, d):
    while True:
        dirs = [tuple(rng.randint(-2, 2) for _ in range(d)) for _ in range(d)]
        if any(not any(v) for v in dirs):
            continue
        if determinant(dirs) == 0:
            continue
        slabs = []
        for v in dirs:
            lo = F(rng.randint(0, 15), 16)
            hi = lo + F(rng.randint(1, 12), 64)
            slabs.append(make_slab(canonicalize_direction(v), lo, hi))
        return Piece(tuple(slabs), 0, -1, 0, F(1))


class TestBoxCount:
    def test_unit_square(self):
        assert box_count([box((0, 1), (0, 1))], 2) == 16

    def test_grid_aligned_square_is_one_cell(self):
        assert box_count([box((F(1, 4), F(1, 2)), (F(1, 4), F(1, 2)))], 2) == 1

    def test_thin_strip(self):
        assert box_count([box((0, 1), (0, F(1, 1024)))], 2) == 4

    def test_projection(self):
        # v.x ranges over [0, 2]; eight open cells at q = 2
        assert box_count([box((0, 1), (0, 1))], 2, Projection(line(1, 1))) == 8

    def test_empty(self):
        assert box_count([], 3) == 0

    def test_against_polygon_clipping(self):
        rng = random.Random(7)
        configs = 0
        while configs < 24:
            pieces = [random_piece(rng, 2) for _ in range(rng.randint(1, 3))]
            q = rng.randint(2, 5)
            assert box_count(pieces, q) == polygon_count(pieces, q)
            configs += 1

    def test_against_rasterize_in_3d(self):
        rng = random.Random(11)
        for _ in range(20):
            pieces = [random_piece(rng, 3) for _ in range(rng.randint(1, 2))]
            q = rng.randint(1, 2)
            verts = [v for p in pieces for v in piece_vertices(p)]
            bounds = [(math.floor(min(v[i] for v in verts) * 2 ** q) - 1,
                       math.ceil(max(v[i] for v in verts) * 2 ** q) + 1) for i in range(3)]
            assert (bounds[0][1] - bounds[0][0] + 1) * (bounds[1][1] - bounds[1][0] + 1) \
                * (bounds[2][1] - bounds[2][0] + 1) <= 10 ** 5
            assert box_count(pieces, q) == rasterize(pieces, q, bounds)

    @given(st.integers(0, 10 ** 6), st.integers(0, 5))
    def test_monotone_and_bounded_in_q(self, seed, q):
        rng = random.Random(seed)
        pieces = [random_piece(rng, 2) for _ in range(2)]
        a, b = box_count(pieces, q), box_count(pieces, q + 1)
        assert a <= b <= 4 * a


class TestSlope:
    def test_exact_doubling(self):
        assert dim_slope([(1, 2), (2, 4), (3, 8)]) == pytest.approx(1.0)

    def test_flat(self):
        assert dim_slope([(3, 5), (7, 5)]) == pytest.approx(0.0)

    def test_single_scale(self):
        with pytest.raises(SlopeUndefined):
            dim_slope([(2, 4), (2, 8)])

    def test_zero_count(self):
        with pytest.raises(SlopeUndefined):
            dim_slope([(1, 0), (2, 4)])

    def test_square_has_slope_two(self):
        series = box_series([box((0, 1), (0, 1))], [1, 2, 3])
        assert series == [(1, 4), (2, 16), (3, 64)]
        assert dim_slope(series) == pytest.approx(2.0)


class TestSeries:
    def test_t_zero_points_are_counts(self, ledger_d2):
        series = projection_measure_series(ledger_d2, 0, 0)
        sched = ledger_d2.schedule
        assert [p.k for p in series] == [k for k in sched.occurrences(0) if k <= ledger_d2.depth]
        for p in series:
            assert p.count == ledger_d2.stage(p.k).count
            assert p.value == pytest.approx(p.count)

    def test_lookup_by_vector(self, ledger_d2):
        assert projection_measure_series(ledger_d2, (1, 0), 0) == projection_measure_series(ledger_d2, 0, 0)

    def test_not_a_user_line(self, ledger_d2):
        with pytest.raises(LineNotInSchedule):
            projection_measure_series(ledger_d2, (1, 1), 0)

    def test_single_occurrence(self):
        ledger = run([(1, 0)], 4)
        assert len([k for k in ledger.schedule.occurrences(0) if k <= 4]) < 2
        with pytest.raises(LineNotInSchedule):
            projection_measure_series(ledger, 0, 0)

    def test_exact_comparison(self):
        from venetian.analysis import SeriesPoint
        t = F(1, 2)
        a, b = SeriesPoint(1, 4, 4, t), SeriesPoint(2, 6, 8, t)  # 4/4 = 1, 8/8 = 1
        assert not a < b and not b < a
        assert strictly_decreasing([SeriesPoint(1, 4, 4, t), SeriesPoint(2, 8, 8, t)])


class TestBalls:
    pieces = [box((0, F(1, 8)), (0, F(1, 8))), box((F(3, 4), F(7, 8)), (F(3, 4), F(7, 8)))]
    pieces[0].mass = pieces[1].mass = F(1, 2)

    def test_containing_ball(self):
        ball = BallQuery((F(1, 2), F(1, 2)), -1)  # radius 1 around the center
        assert mass_ball_bounds(stage_of(self.pieces), ball) == (1, 1)

    def test_disjoint_ball(self):
        ball = BallQuery((F(1, 2), F(1, 2)), 3)
        assert mass_ball_bounds(stage_of(self.pieces), ball) == (0, 0)

    def test_partial_ball(self):
        # touches the first piece at a vertex region without covering it
        ball = BallQuery((F(1, 8), F(1, 8)), 4)
        assert mass_ball_bounds(stage_of(self.pieces), ball) == (0, F(1, 2))

    def test_case_ranges(self, ledger_d2):
        k = 5
        ranges = case_ranges(ledger_d2, k)
        n, a = ledger_d2.n(k), ledger_d2.a(k)
        assert ranges[CASE2] == (n - a + 1, n)
        assert classify_ball(ledger_d2, k, n) == CASE2
        with pytest.raises(CaseRangeError):
            classify_ball(ledger_d2, k, n - a)
        if CASE1 in ranges:
            assert ranges[CASE1] == (n + 1, ledger_d2.n(k + 1) - ledger_d2.a(k + 1))

    @settings(max_examples=25)
    @given(st.integers(0, 10 ** 6), st.integers(2, 12))
    def test_lower_at_most_upper(self, ledger_d2, seed, q):
        stage = ledger_d2.stage(ledger_d2.depth)
        (c,) = sample_centers(stage, 1, seed, 20)
        lo, hi = mass_ball_bounds(stage, BallQuery(c, q))
        assert 0 <= lo <= hi <= 1

    @given(st.fractions(0, 1, max_denominator=10 ** 6), st.integers(1, 40), st.fractions(0, 3, max_denominator=12))
    def test_bound_against_floats(self, mass, q, s):
        lhs = float(mass) * q * q
        rhs = 2.0 ** (-q * float(s))
        assume(lhs == 0 or abs(math.log2(lhs) - math.log2(rhs)) > 1e-9)
        assert ball_bound_holds(mass, q, s) == (lhs <= rhs)


class TestEnergy:
    def two(self):
        a = box((0, F(1, 8)), (0, F(1, 8)))
        b = box((1, F(9, 8)), (0, F(1, 8)))
        a.mass = b.mass = F(1, 2)
        b.global_id = 1
        return stage_of([a, b])

    @pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
    def test_unit_distance(self, s):
        # both ordered pairs contribute (1/2)(1/2) 1^-s
        assert energy(self.two(), s).cross_term == pytest.approx(0.5)

    def test_single_piece(self):
        p = box((0, 1), (0, 1))
        rep = energy(stage_of([p]), 1.0)
        assert rep.cross_term == 0
        assert rep.capacity_bound == math.inf
        assert rep.diagonal_mass_sq == 1

    def test_invalid_exponent(self):
        with pytest.raises(InvalidExponent):
            energy(self.two(), 0)

    def test_against_direct_sum(self, ledger_d2):
        stage = ledger_d2.stage(4)
        centers = [[float(x) for x in piece_center(p)] for p in stage.pieces]
        masses = [float(p.mass) for p in stage.pieces]
        s = 1.0
        want = sum(masses[i] * masses[j] * math.dist(centers[i], centers[j]) ** -s
                   for i in range(len(centers)) for j in range(len(centers)) if i != j)
        assert energy(stage, s).cross_term == pytest.approx(want, rel=1e-9)

    def test_center_is_exact(self):
        p = box((0, F(1, 2)), (F(1, 4), F(3, 4)), directions=[(1, 1), (0, 1)])
        c = piece_center(p)
        # y = 1/2, x + y = 1/4
        assert c == (F(-1, 4), F(1, 2))


class TestRatio:
    @given(st.integers(1, 10 ** 6), st.integers(1, 200), st.fractions(0, 1, max_denominator=8),
           st.fractions(0, 1, max_denominator=16))
    def test_against_floats(self, count, n, t, tol):
        x = abs(math.log2(count) / n - float(t))
        assume(abs(x - float(tol)) > 1e-9)
        assert ratio_within(count, n, t, tol) == (x <= float(tol))

    def test_exact_boundary(self):
        assert ratio_within(2 ** 5, 10, F(1, 2), 0)
        assert not ratio_within(2 ** 5 + 1, 10, F(1, 2), 0)

import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import box
from venetian.errors import DegeneratePiece, DimensionError, InvalidDirection
from venetian.kernel import (
    Dyadic,
    Piece,
    canonicalize_direction,
    contains_point,
    determinant,
    edge_length_multiset,
    format_dyadic,
    format_rational,
    make_slab,
    parse_dyadic,
    parse_rational,
    piece_vertices,
    projection_range,
    rank,
    scaled_projection,
    solve,
    sq_distance_to_piece,
)

small_int = st.integers(-6, 6)


def vectors(d):
    return st.lists(small_int, min_size=d, max_size=d).filter(any)


def independent(dirs):
    return determinant([list(v) for v in dirs]) != 0


class TestDyadic:
    def test_parts(self):
        x = Dyadic(Fraction(3, 8))
        assert (x.mantissa, x.exponent) == (3, -3)
        assert Dyadic(12).mantissa == 3 and Dyadic(12).exponent == 2

    def test_zero(self):
        assert (Dyadic(0).mantissa, Dyadic(0).exponent) == (0, 0)

    def test_rejects_non_dyadic(self):
        with pytest.raises(ValueError):
            Dyadic(Fraction(1, 3))

    @given(st.integers(-10**6, 10**6), st.integers(-40, 40))
    def test_roundtrip(self, m, e):
        x = Dyadic.from_parts(m, e)
        assert x == Fraction(m) * Fraction(2) ** e
        assert parse_dyadic(format_dyadic(x)) == x
        if x:
            assert x.mantissa % 2 == 1

    @given(st.fractions())
    def test_rational_roundtrip(self, x):
        assert parse_rational(format_rational(x)) == x


class TestCanonicalize:
    def test_examples(self):
        v = canonicalize_direction((2, 4))
        assert v.components == (1, 2) and v.norm_sq == 5
        assert canonicalize_direction((0, -3)).components == (0, 1)
        assert canonicalize_direction((0, -3)).norm_sq == 1
        w = canonicalize_direction((6, 10, 15))
        assert w.components == (6, 10, 15) and w.norm_sq == 361

    def test_zero(self):
        with pytest.raises(InvalidDirection):
            canonicalize_direction((0, 0))

    @given(vectors(3))
    def test_invariants(self, raw):
        v = canonicalize_direction(raw)
        assert math.gcd(*v.components) == 1
        assert next(c for c in v.components if c) > 0
        assert v.norm_sq == sum(c * c for c in v.components)
        # same line: v is a rational multiple of raw
        ratio = {Fraction(r, c) for r, c in zip(raw, v.components) if c}
        assert len(ratio) == 1
        assert all(r == 0 for r, c in zip(raw, v.components) if c == 0)


class TestScaledProjection:
    def test_examples(self):
        assert scaled_projection(canonicalize_direction((1, 1)), (Fraction(1, 2), Fraction(1, 4))) == Fraction(3, 4)
        assert scaled_projection(canonicalize_direction((3, 4)), (1, 1)) == 7
        assert scaled_projection(canonicalize_direction((1, 0)), (Fraction(2, 7), 5)) == Fraction(2, 7)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            scaled_projection(canonicalize_direction((1, 0)), (1, 2, 3))


class TestLinearAlgebra:
    def test_determinant(self):
        assert determinant([[1, 2], [3, 4]]) == -2
        assert determinant([[Fraction(1, 2), 0], [0, 4]]) == 2

    def test_rank(self):
        assert rank([[1, 2], [2, 4]]) == 1
        assert rank([[1, 0, 0], [0, 1, 0]]) == 2

    @given(st.lists(st.lists(small_int, min_size=3, max_size=3), min_size=3, max_size=3),
           st.lists(small_int, min_size=3, max_size=3))
    def test_solve(self, a, b):
        x = solve(a, b)
        if determinant(a) == 0:
            return
        assert all(sum(Fraction(r) * xi for r, xi in zip(row, x)) == bi for row, bi in zip(a, b))


class TestPieceVertices:
    def test_unit_square(self):
        assert sorted(piece_vertices(box((0, 1), (0, 1)))) == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_parallelogram(self):
        p = box((0, 1), (0, Fraction(1, 2)), directions=[(1, 0), (1, 1)])
        assert sorted(piece_vertices(p)) == sorted(
            [(0, 0), (0, Fraction(1, 2)), (1, -1), (1, Fraction(-1, 2))])

    def test_dependent(self):
        with pytest.raises(DegeneratePiece):
            piece_vertices(box((0, 1), (0, 1), directions=[(1, 0), (2, 0)]))

    @given(st.lists(vectors(3), min_size=3, max_size=3).filter(independent),
           st.lists(st.tuples(st.integers(-8, 8), st.integers(1, 8)), min_size=3, max_size=3))
    def test_vertex_faces(self, dirs, ranges):
        ranges = [(Fraction(lo, 4), Fraction(lo + w, 4)) for lo, w in ranges]
        p = box(*ranges, directions=dirs)
        verts = piece_vertices(p)
        assert len(set(verts)) == 8
        for v in verts:
            tight = 0
            for s in p.slabs:
                val = scaled_projection(s.direction, v)
                assert s.lo <= val <= s.hi
                tight += (val == s.lo) + (val == s.hi)
            assert tight == 3

    @given(st.lists(vectors(3), min_size=3, max_size=3).filter(independent), st.permutations(range(3)))
    def test_permutation_invariant(self, dirs, perm):
        ranges = [(0, 1), (Fraction(1, 2), 1), (-1, Fraction(1, 4))]
        p = box(*ranges, directions=dirs)
        q = box(*[ranges[i] for i in perm], directions=[dirs[i] for i in perm])
        assert set(piece_vertices(p)) == set(piece_vertices(q))
        assert edge_length_multiset(p) == edge_length_multiset(q)


class TestProjectionRange:
    def test_examples(self):
        sq = box((0, 1), (0, 1))
        assert projection_range(sq, canonicalize_direction((1, 1))) == (0, 2)
        assert projection_range(sq, canonicalize_direction((1, 0))) == (0, 1)
        par = box((0, 1), (0, Fraction(1, 2)), directions=[(1, 0), (1, 1)])
        assert projection_range(par, canonicalize_direction((0, 1))) == (-1, Fraction(1, 2))

    @given(st.lists(vectors(3), min_size=3, max_size=3).filter(independent), vectors(3))
    def test_matches_vertices(self, dirs, u):
        p = box((0, 1), (Fraction(1, 2), 1), (-1, Fraction(1, 4)), directions=dirs)
        v = canonicalize_direction(u)
        vals = [scaled_projection(v, x) for x in piece_vertices(p)]
        assert projection_range(p, v) == (min(vals), max(vals))
        for s in p.slabs:
            assert projection_range(p, s.direction) == (s.lo, s.hi)


class TestDistance:
    def test_inside_and_outside(self):
        sq = box((0, 1), (0, 1))
        assert sq_distance_to_piece(sq, (Fraction(1, 2), Fraction(1, 2))) == 0
        assert sq_distance_to_piece(sq, (2, 3)) == 1 + 4
        assert sq_distance_to_piece(sq, (Fraction(1, 2), -2)) == 4

    @given(st.lists(vectors(2), min_size=2, max_size=2).filter(independent),
           st.tuples(st.integers(-12, 12), st.integers(-12, 12)))
    def test_against_grid_search(self, dirs, pt):
        """Exact distance never exceeds the distance to any sampled point of the piece."""
        p = box((0, 1), (0, 1), directions=dirs)
        x = (Fraction(pt[0], 4), Fraction(pt[1], 4))
        dist = sq_distance_to_piece(p, x)
        verts = piece_vertices(p)
        o, e1, e2 = verts[0], verts[2], verts[1]
        best = None
        for i, j in itertools.product(range(9), repeat=2):
            y = tuple(o[c] + Fraction(i, 8) * (e1[c] - o[c]) + Fraction(j, 8) * (e2[c] - o[c]) for c in range(2))
            assert contains_point(p, y)
            dd = sum((a - b) ** 2 for a, b in zip(x, y))
            best = dd if best is None else min(best, dd)
        assert dist <= best
        assert (dist == 0) == contains_point(p, x)

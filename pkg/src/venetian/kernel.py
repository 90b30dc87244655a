"""Exact scalars, integer directions and slab-intersection parallelepipeds.

Every predicate here is decided in exact arithmetic: ``Fraction`` for
rationals, :class:`Dyadic` for interval endpoints, and fraction-free
(Bareiss) elimination for the small linear systems that locate vertices.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

from .errors import DegeneratePiece, DimensionError, InvalidDirection

Rational = Fraction


class Dyadic(Fraction):
    """A rational whose denominator is a power of two.

    ``Dyadic`` is a ``Fraction``, so it mixes freely with other rationals;
    arithmetic results come back as plain ``Fraction``.
    """

    __slots__ = ()

    def __new__(cls, numerator=0, denominator=None):
        self = super().__new__(cls, numerator, denominator)
        den = self.denominator
        if den & (den - 1):
            raise ValueError(f"{Fraction(self)} is not dyadic")
        return self

    @classmethod
    def cell(cls, index: int, level: int) -> "Dyadic":
        """Return ``index * 2**-level`` without a gcd pass."""
        if index == 0:
            index, level = 0, 0
        else:
            tz = (index & -index).bit_length() - 1
            if level > 0:
                shift = min(tz, level)
                index >>= shift
                level -= shift
            if level < 0:
                index <<= -level
                level = 0
        obj = object.__new__(cls)
        obj._numerator = index
        obj._denominator = 1 << level
        return obj

    @classmethod
    def from_parts(cls, mantissa: int, exponent: int) -> "Dyadic":
        return cls.cell(mantissa, -exponent)

    @property
    def mantissa(self) -> int:
        return self._parts()[0]

    @property
    def exponent(self) -> int:
        return self._parts()[1]

    def _parts(self):
        num = self.numerator
        if num == 0:
            return 0, 0
        exp = -(self.denominator.bit_length() - 1)
        if exp == 0:
            tz = (num & -num).bit_length() - 1
            num >>= tz
            exp = tz
        return num, exp

    def __str__(self):
        m, e = self._parts()
        return f"{m}*2^{e}"

    def __repr__(self):
        return f"Dyadic('{self}')"

    def __reduce__(self):
        return (Dyadic.from_parts, self._parts())


_DYADIC_RE = re.compile(r"^\s*(-?\d+)\s*\*\s*2\^\s*(-?\d+)\s*$")


def format_rational(x) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def parse_rational(text: str) -> Fraction:
    return Fraction(text.strip())


def format_dyadic(x: Dyadic) -> str:
    return str(x if isinstance(x, Dyadic) else Dyadic(x))


def parse_dyadic(text: str) -> Dyadic:
    m = _DYADIC_RE.match(text)
    if not m:
        raise ValueError(f"not a dyadic literal: {text!r}")
    return Dyadic.from_parts(int(m.group(1)), int(m.group(2)))


# ---------------------------------------------------------------------------
# Directions


@dataclass(frozen=True)
class Direction:
    """Primitive integer vector spanning a line through the origin."""

    components: tuple
    norm_sq: int

    def __post_init__(self):
        comps = self.components
        if not comps or all(c == 0 for c in comps):
            raise InvalidDirection("zero direction")
        if math.gcd(*comps) != 1:
            raise InvalidDirection(f"{comps} is not primitive")
        if next(c for c in comps if c != 0) < 0:
            raise InvalidDirection(f"{comps} does not have canonical sign")
        if self.norm_sq != sum(c * c for c in comps):
            raise InvalidDirection("norm_sq mismatch")

    @property
    def dim(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __len__(self):
        return len(self.components)

    def __str__(self):
        return "(" + ",".join(str(c) for c in self.components) + ")"


def canonicalize_direction(raw: Sequence[int]) -> Direction:
    comps = [int(c) for c in raw]
    if any(c != int(r) for c, r in zip(comps, raw)):
        raise InvalidDirection(f"{raw!r} is not an integer vector")
    if not comps or all(c == 0 for c in comps):
        raise InvalidDirection("zero vector has no direction")
    g = math.gcd(*comps)
    comps = [c // g for c in comps]
    if next(c for c in comps if c != 0) < 0:
        comps = [-c for c in comps]
    return Direction(tuple(comps), sum(c * c for c in comps))


def axis(i: int, d: int) -> Direction:
    return canonicalize_direction([1 if j == i else 0 for j in range(d)])


def dot(u: Sequence, v: Sequence):
    if len(u) != len(v):
        raise DimensionError(f"dimension mismatch: {len(u)} vs {len(v)}")
    return sum(a * b for a, b in zip(u, v))


def scaled_projection(v: Direction, x: Sequence) -> Fraction:
    """The scaled coordinate ``v . x``; divide by ``sqrt(norm_sq)`` for arclength."""
    return Fraction(dot(v.components, x))


# ---------------------------------------------------------------------------
# Fraction-free linear algebra


def _integer_rows(rows):
    """Scale each row by the lcm of its denominators; return rows and scale factors."""
    out, factors = [], []
    for row in rows:
        row = [Fraction(x) for x in row]
        f = math.lcm(*(x.denominator for x in row)) if row else 1
        out.append([int(x * f) for x in row])
        factors.append(f)
    return out, factors


def _bareiss(mat):
    """In-place fraction-free row echelon form of an integer matrix.

    Returns ``(rank, pivot_columns, swaps)``.
    """
    m = len(mat)
    n = len(mat[0]) if m else 0
    r = 0
    prev = 1
    pivots = []
    swaps = 0
    for c in range(n):
        if r == m:
            break
        p = next((i for i in range(r, m) if mat[i][c] != 0), None)
        if p is None:
            continue
        if p != r:
            mat[r], mat[p] = mat[p], mat[r]
            swaps += 1
        piv = mat[r][c]
        for i in range(r + 1, m):
            lead = mat[i][c]
            row_i, row_r = mat[i], mat[r]
            for j in range(c + 1, n):
                row_i[j] = (piv * row_i[j] - lead * row_r[j]) // prev
            row_i[c] = 0
        pivots.append(c)
        prev = piv
        r += 1
    return r, pivots, swaps


def determinant(rows) -> Fraction:
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise DimensionError("determinant of a non-square matrix")
    if n == 0:
        return Fraction(1)
    mat, factors = _integer_rows(rows)
    rank, _, swaps = _bareiss(mat)
    if rank < n:
        return Fraction(0)
    val = mat[n - 1][n - 1] * (-1) ** swaps
    return Fraction(val, math.prod(factors))


def rank(rows) -> int:
    if not rows:
        return 0
    mat, _ = _integer_rows(rows)
    return _bareiss(mat)[0]


def solve(a_rows, b) -> Optional[list]:
    """Exact solution of the square system ``A x = b``; ``None`` if singular."""
    n = len(a_rows)
    if len(b) != n or any(len(r) != n for r in a_rows):
        raise DimensionError("solve expects a square system")
    aug, _ = _integer_rows([list(r) + [bv] for r, bv in zip(a_rows, b)])
    rk, pivots, _ = _bareiss(aug)
    if rk < n or pivots[-1] >= n:
        return None
    x = [Fraction(0)] * n
    for i in range(n - 1, -1, -1):
        s = Fraction(aug[i][n]) - sum(aug[i][j] * x[j] for j in range(i + 1, n))
        x[i] = s / aug[i][i]
    return x


@lru_cache(maxsize=4096)
def _inverse(key: tuple) -> Optional[tuple]:
    n = len(key)
    cols = []
    for i in range(n):
        e = [1 if j == i else 0 for j in range(n)]
        col = solve([list(r) for r in key], e)
        if col is None:
            return None
        cols.append(col)
    # rows of the inverse
    return tuple(tuple(cols[j][i] for j in range(n)) for i in range(n))


def inverse_matrix(directions: Sequence[Direction]) -> tuple:
    """Inverse of the matrix whose rows are the given directions."""
    key = tuple(v.components for v in directions)
    inv = _inverse(key)
    if inv is None:
        raise DegeneratePiece(f"dependent slab directions {[str(v) for v in directions]}")
    return inv


@lru_cache(maxsize=16384)
def _dual(key: tuple, u: tuple) -> tuple:
    inv = _inverse(key)
    n = len(key)
    return tuple(sum(u[j] * inv[j][i] for j in range(n)) for i in range(n))


def dual_coefficients(directions: Sequence[Direction], u: Sequence[int]) -> tuple:
    """Weights ``w`` with ``u . x = sum_i w_i (v_i . x)`` for the slab directions ``v_i``."""
    key = tuple(v.components for v in directions)
    if len(u) != len(key):
        raise DimensionError("projection direction has the wrong dimension")
    if _inverse(key) is None:
        raise DegeneratePiece(f"dependent slab directions {[str(v) for v in directions]}")
    return _dual(key, tuple(u))


# ---------------------------------------------------------------------------
# Slabs and pieces


class Slab(NamedTuple):
    direction: Direction
    lo: Fraction
    hi: Fraction


def make_slab(direction: Direction, lo, hi) -> Slab:
    lo, hi = Dyadic(lo), Dyadic(hi)
    if not lo < hi:
        raise ValueError(f"empty slab [{lo}, {hi}]")
    return Slab(direction, lo, hi)


@dataclass(slots=True)
class Piece:
    """Closed parallelepiped: the intersection of ``d`` slabs, oldest first.

    ``gen`` records the ``(h, j)`` indices of the interval that generated the
    newest slab, or ``None`` for the initial cube.
    """

    slabs: tuple
    stage: int
    parent_id: int
    global_id: int
    mass: Optional[Fraction] = None
    gen: Optional[tuple] = None

    @property
    def dim(self) -> int:
        return len(self.slabs)

    @property
    def directions(self) -> tuple:
        return tuple(s.direction for s in self.slabs)


def unit_cube_slabs(axes_order: Sequence[int]) -> tuple:
    d = len(axes_order)
    one = Dyadic(1)
    zero = Dyadic(0)
    return tuple(Slab(axis(i, d), zero, one) for i in axes_order)


def piece_vertices(p: Piece) -> list:
    """All ``2**d`` vertices, ordered by the lo/hi choice per slab (lo first)."""
    inv = inverse_matrix(p.directions)
    d = len(p.slabs)
    verts = []
    for choice in itertools.product((0, 1), repeat=d):
        c = [s.hi if bit else s.lo for s, bit in zip(p.slabs, choice)]
        verts.append(tuple(sum(inv[i][j] * c[j] for j in range(d)) for i in range(d)))
    return verts


def slab_range(slabs: Sequence[Slab], u: Sequence[int]) -> tuple:
    """``[min, max]`` of ``u . x`` over the intersection of the slabs."""
    w = dual_coefficients([s.direction for s in slabs], u)
    lo = hi = Fraction(0)
    for wi, s in zip(w, slabs):
        if wi > 0:
            lo += wi * s.lo
            hi += wi * s.hi
        elif wi < 0:
            lo += wi * s.hi
            hi += wi * s.lo
    return lo, hi


def projection_range(p: Piece, v: Direction) -> tuple:
    return slab_range(p.slabs, v.components)


def contains_point(p: Piece, x: Sequence) -> bool:
    return all(s.lo <= dot(s.direction.components, x) <= s.hi for s in p.slabs)


def piece_contains(outer: Piece, inner: Piece) -> bool:
    """Exact containment of one parallelepiped in another (vertex test)."""
    return all(contains_point(outer, v) for v in piece_vertices(inner))


def edge_vectors(p: Piece) -> list:
    """The ``d`` edge vectors at the all-lo vertex."""
    inv = inverse_matrix(p.directions)
    d = len(p.slabs)
    return [tuple(inv[i][j] * (p.slabs[j].hi - p.slabs[j].lo) for i in range(d)) for j in range(d)]


def edge_length_multiset(p: Piece) -> tuple:
    """Sorted squared edge lengths over all ``d * 2**(d-1)`` edges."""
    verts = piece_vertices(p)
    d = len(p.slabs)
    out = []
    for idx in range(len(verts)):
        for j in range(d):
            bit = 1 << (d - 1 - j)
            if not idx & bit:
                a, b = verts[idx], verts[idx | bit]
                out.append(sum((x - y) ** 2 for x, y in zip(a, b)))
    return tuple(sorted(out))


def sq_distance_to_piece(p: Piece, x: Sequence) -> Fraction:
    """Exact squared Euclidean distance from a point to a parallelepiped.

    Minimises ``|V^-1 c - x|^2`` over the box of slab values ``c`` with an
    exact active-set search over which slab faces are tight.
    """
    inv = inverse_matrix(p.directions)
    d = len(p.slabs)
    if contains_point(p, x):
        return Fraction(0)
    # columns of V^-1 are the edge directions e_j; point = sum_j c_j e_j
    cols = [tuple(inv[i][j] for i in range(d)) for j in range(d)]
    best = None
    # every face pattern: each slab either free, at lo, or at hi
    for pattern in itertools.product((None, 0, 1), repeat=d):
        free = [j for j in range(d) if pattern[j] is None]
        fixed_point = [Fraction(0)] * d
        for j in range(d):
            if pattern[j] is not None:
                val = p.slabs[j].hi if pattern[j] else p.slabs[j].lo
                for i in range(d):
                    fixed_point[i] += cols[j][i] * val
        r = [xi - fi for xi, fi in zip(x, fixed_point)]
        if free:
            gram = [[sum(cols[a][i] * cols[b][i] for i in range(d)) for b in free] for a in free]
            rhs = [sum(cols[a][i] * r[i] for i in range(d)) for a in free]
            sol = solve(gram, rhs)
            if sol is None:
                continue
            ok = all(p.slabs[j].lo <= c <= p.slabs[j].hi for j, c in zip(free, sol))
            if not ok:
                continue
            diff = [r[i] - sum(c * cols[j][i] for j, c in zip(free, sol)) for i in range(d)]
        else:
            diff = r
        dist = sum(t * t for t in diff)
        if best is None or dist < best:
            best = dist
    return best

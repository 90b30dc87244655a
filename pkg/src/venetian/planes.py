"""k-plane families and dual hyperplanes built from construction stages.

A k-plane in R^d is encoded as ``P(Y, y0) = {(x, y0 + Y x) : x in R^k}``.
Families take one representative point per piece (its lexicographically
smallest vertex) and read plane coefficients off its coordinate blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .construction import ConstructionLedger, Stage
from .errors import DimensionError, InvalidInput, LineNotInSchedule, SampleNotInjective
from .kernel import Direction, Piece, canonicalize_direction, piece_vertices, projection_range, rank


def h_function(k: int, s, d: Optional[int] = None) -> Fraction:
    """Dimension of the union in the two-branch formula, with exact ceilings."""
    s = Fraction(s)
    if k < 1:
        raise InvalidInput(f"k must be at least 1, got {k}")
    if s < 0:
        raise InvalidInput(f"s must be non-negative, got {s}")
    if d is not None and s > (k + 1) * (d - k):
        raise InvalidInput(f"s={s} exceeds (k+1)(d-k)={(k + 1) * (d - k)}")
    first, second, use_first, use_second = h_branches(k, s)
    return first if use_first else second


def h_branches(k: int, s) -> tuple:
    """Both branch values and whether each branch condition holds."""
    s = Fraction(s)
    m = math.ceil(s / (k + 1))
    pivot = Fraction(k + s, k + 1)
    return s - k * m + 2 * k, Fraction(k + m), m >= pivot, m <= pivot


# ---------------------------------------------------------------------------
# Planes


def _frac_matrix(rows) -> tuple:
    return tuple(tuple(Fraction(x) for x in row) for row in rows)


@dataclass(frozen=True)
class KPlane:
    Y: tuple  # (d-k) rows of k entries
    y0: tuple  # d-k entries
    d: int
    k: int

    def __post_init__(self):
        if not self.d > self.k >= 1:
            raise DimensionError(f"need d > k >= 1, got d={self.d}, k={self.k}")
        object.__setattr__(self, "Y", _frac_matrix(self.Y))
        object.__setattr__(self, "y0", tuple(Fraction(x) for x in self.y0))
        if len(self.Y) != self.d - self.k or any(len(r) != self.k for r in self.Y):
            raise DimensionError(f"Y must be {self.d - self.k}x{self.k}")
        if len(self.y0) != self.d - self.k:
            raise DimensionError(f"y0 must have {self.d - self.k} entries")


def plane_contains(p: KPlane, point: Sequence) -> bool:
    if len(point) != p.d:
        raise DimensionError(f"point has {len(point)} coordinates, plane lives in R^{p.d}")
    x, y = point[:p.k], point[p.k:]
    return all(Fraction(yi) == y0i + sum(r * xi for r, xi in zip(row, x))
               for yi, y0i, row in zip(y, p.y0, p.Y))


def _same_shape(p: KPlane, q: KPlane) -> None:
    if (p.d, p.k) != (q.d, q.k):
        raise DimensionError(f"planes differ in shape: ({p.d},{p.k}) vs ({q.d},{q.k})")


def verify_disjoint(p: KPlane, q: KPlane) -> bool:
    """True iff ``(Y - Y') x = y0' - y0`` has no solution (rank test)."""
    _same_shape(p, q)
    coeff = [[a - b for a, b in zip(r1, r2)] for r1, r2 in zip(p.Y, q.Y)]
    aug = [row + [b - a] for row, a, b in zip(coeff, p.y0, q.y0)]
    return rank(coeff) != rank(aug)


def verify_nonparallel(p: KPlane, q: KPlane) -> bool:
    _same_shape(p, q)
    return p.Y != q.Y


@dataclass
class PairCheck:
    pairs: int
    disjoint_failures: int
    nonparallel_failures: int
    first_witness: Optional[tuple] = None

    @property
    def ok(self) -> bool:
        return self.disjoint_failures == 0 and self.nonparallel_failures == 0


def verify_family(planes: Sequence[KPlane]) -> PairCheck:
    """Check every pair; failures are counted and the first one is kept."""
    out = PairCheck(0, 0, 0)
    for i in range(len(planes)):
        for j in range(i + 1, len(planes)):
            out.pairs += 1
            dis = verify_disjoint(planes[i], planes[j])
            nonpar = verify_nonparallel(planes[i], planes[j])
            if not dis:
                out.disjoint_failures += 1
            if not nonpar:
                out.nonparallel_failures += 1
            if (not dis or not nonpar) and out.first_witness is None:
                out.first_witness = (i, j)
    return out


# ---------------------------------------------------------------------------
# Representatives


def representative(p: Piece) -> tuple:
    return min(piece_vertices(p))


@dataclass
class GraphSample:
    """Representative points with pairwise distinct values in every coordinate."""

    points: list
    piece_ids: list

    @property
    def t_values(self) -> list:
        return [p[0] for p in self.points]

    def blocks(self, i: int) -> tuple:
        """``(t, rest)`` split of the ``i``-th point."""
        return self.points[i][0], self.points[i][1:]


def graph_sample(stage: Stage, size: Optional[int] = None) -> GraphSample:
    """Representatives of the stage's pieces, in stage order.

    Without ``size`` every piece is used and any coordinate collision raises
    ``SampleNotInjective``.  With ``size`` pieces are scanned in order and a
    representative is kept only if all its coordinates are new, until ``size``
    are collected.
    """
    seen = None
    points, ids = [], []
    for piece in stage.pieces:
        pt = representative(piece)
        if seen is None:
            seen = [dict() for _ in pt]
        clash = next((seen[i][x] for i, x in enumerate(pt) if x in seen[i]), None)
        if clash is not None:
            if size is None:
                raise SampleNotInjective(
                    f"pieces {clash} and {piece.global_id} share a coordinate value")
            continue
        for i, x in enumerate(pt):
            seen[i][x] = piece.global_id
        points.append(pt)
        ids.append(piece.global_id)
        if size is not None and len(points) >= size:
            break
    if size is not None and len(points) < size:
        raise SampleNotInjective(f"only {len(points)} coordinate-injective representatives, wanted {size}")
    return GraphSample(points, ids)


def check_sample(points: Sequence[Sequence]) -> None:
    for i in range(len(points[0]) if points else 0):
        vals = [p[i] for p in points]
        if len(set(vals)) != len(vals):
            raise SampleNotInjective(f"coordinate {i} repeats among representatives")


# ---------------------------------------------------------------------------
# Families


@dataclass
class PlaneFamily:
    planes: list
    d: int
    k: int
    provenance: dict = field(default_factory=dict)
    s: Optional[Fraction] = None
    m: Optional[int] = None


def _block_plane(d: int, k: int, rows: int, t: Fraction, coords: Sequence) -> KPlane:
    """Plane from a point ``(t, f1, f2)``: ``f1`` fills ``rows`` rows of ``Y``, ``f2`` the top of ``y0``.

    Row ``rows`` of ``Y`` is zero and ``y0`` holds ``t`` there; rows below are zero.
    """
    f1 = coords[:rows * k]
    f2 = coords[rows * k:rows * k + rows]
    Y = [list(f1[r * k:(r + 1) * k]) for r in range(rows)]
    y0 = list(f2)
    Y.append([0] * k)
    y0.append(t)
    while len(Y) < d - k:
        Y.append([0] * k)
        y0.append(0)
    return KPlane(tuple(map(tuple, Y)), tuple(y0), d, k)


def _stage_dim(stage: Stage) -> int:
    return stage.pieces[0].dim


def measure_zero_family(stage: Stage, d: int, k: int, size: Optional[int] = None) -> PlaneFamily:
    """One plane per representative, each inside its own slice ``x_d = t``."""
    if not d >= k + 2:
        raise InvalidInput(f"need d >= k + 2, got d={d}, k={k}")
    D = (k + 1) * (d - 1 - k) + 1
    if _stage_dim(stage) != D:
        raise DimensionError(f"stage lives in R^{_stage_dim(stage)}, need R^{D}")
    sample = graph_sample(stage, size)
    rows = d - 1 - k
    planes = [_block_plane(d, k, rows, *sample.blocks(i)) for i in range(len(sample.points))]
    prov = {"family": "measure_zero", "stage": stage.k, "pieces": sample.piece_ids}
    return PlaneFamily(planes, d, k, prov)


def dimension_case(d: int, k: int, s) -> tuple:
    """``(m, case, rows)``; ``rows`` is the height of the ``f1`` block (``None`` when unused)."""
    s = Fraction(s)
    if s < 0 or s > (k + 1) * (d - k):
        raise InvalidInput(f"s={s} outside [0, {(k + 1) * (d - k)}]")
    m = math.ceil(s / (k + 1))
    pivot = Fraction(k + s, k + 1)
    if m == 0:
        return m, "single", None
    if m >= max(2, pivot):
        eff = m
        case = "block"
    elif m == 1 and m >= pivot:
        return m, "slice", None
    else:
        eff = m + 1
        case = "block_shifted"
    if eff > d - k:
        raise InvalidInput(f"block template needs {eff} rows of Y, only {d - k} available")
    return m, case, eff - 1


def dimension_family(d: int, k: int, s, stage: Optional[Stage] = None,
                     size: Optional[int] = None) -> PlaneFamily:
    """Disjoint, pairwise non-parallel planes for each case of ``m = ceil(s/(k+1))``."""
    s = Fraction(s)
    m, case, rows = dimension_case(d, k, s)
    prov = {"family": "dimension", "case": case}
    if case == "single":
        plane = KPlane(tuple((0,) * k for _ in range(d - k)), (0,) * (d - k), d, k)
        return PlaneFamily([plane], d, k, prov, s, m)
    if stage is None:
        raise InvalidInput(f"case {case} needs a construction stage")
    prov["stage"] = stage.k
    if case == "slice":
        # Y_11 = t, otherwise zero; y0 = (0, ..., 0, t)
        sample = graph_sample(stage, size)
        planes = []
        for t in sample.t_values:
            Y = [[0] * k for _ in range(d - k)]
            Y[0][0] = t
            y0 = [0] * (d - k - 1) + [t]
            planes.append(KPlane(tuple(map(tuple, Y)), tuple(y0), d, k))
        prov["pieces"] = sample.piece_ids
        return PlaneFamily(planes, d, k, prov, s, m)
    D = (k + 1) * rows + 1
    if _stage_dim(stage) != D:
        raise DimensionError(f"case {case} needs a stage in R^{D}, got R^{_stage_dim(stage)}")
    sample = graph_sample(stage, size)
    planes = [_block_plane(d, k, rows, *sample.blocks(i)) for i in range(len(sample.points))]
    prov["pieces"] = sample.piece_ids
    return PlaneFamily(planes, d, k, prov, s, m)


# ---------------------------------------------------------------------------
# Dual hyperplanes


@dataclass(frozen=True)
class Hyperplane:
    """``{(x, y) : y = a . x + b}`` in ``R^d``."""

    a: tuple
    b: Fraction

    def height(self, x: Sequence) -> Fraction:
        return sum(Fraction(ai) * Fraction(xi) for ai, xi in zip(self.a, x)) + self.b


def vertical_direction(x: Sequence) -> tuple:
    """Primitive integer direction along ``(x, 1)`` and the factor ``c`` with ``direction = c (x, 1)``."""
    vec = [Fraction(v) for v in x] + [Fraction(1)]
    den = math.lcm(*(v.denominator for v in vec))
    ints = [int(v * den) for v in vec]
    g = math.gcd(*ints)
    return canonicalize_direction([v // g for v in ints]), Fraction(den, g)


def section_intervals(pieces: Sequence[Piece], x: Sequence) -> list:
    """Heights ``a . x + b`` over each piece, as sorted closed intervals."""
    v, c = vertical_direction(x)
    out = []
    for p in pieces:
        lo, hi = projection_range(p, v)
        out.append((lo / c, hi / c))
    out.sort()
    return out


def first_overlap(intervals: Sequence[tuple]) -> Optional[int]:
    """Index ``i`` with ``intervals[i]`` meeting ``intervals[i+1]`` (sorted input), else ``None``."""
    for i, ((_, hi0), (lo1, _)) in enumerate(zip(intervals, intervals[1:])):
        if not hi0 < lo1:
            return i
    return None


def _line_stages(ledger: ConstructionLedger, v: Direction) -> list:
    return [k for k in range(1, ledger.depth + 1) if ledger.schedule.line(k).components == v.components]


def dual_hyperplanes(ledger: ConstructionLedger, verticals: Sequence[Sequence], k: Optional[int] = None) -> tuple:
    """Hyperplanes ``P_{a,b}`` of stage ``k`` and their sections with each vertical line.

    Returns ``(hyperplanes, sections)`` where ``sections[i]`` lists the
    section intervals on the ``i``-th vertical.
    """
    if k is None:
        k = ledger.depth
    for x in verticals:
        v, _ = vertical_direction(x)
        if not _line_stages(ledger, v):
            raise LineNotInSchedule(f"direction {v} of vertical {tuple(x)} is not a schedule line")
    stage = ledger.stage(k)
    planes = []
    for p in stage.pieces:
        rep = representative(p)
        planes.append(Hyperplane(tuple(rep[:-1]), rep[-1]))
    sections = [section_intervals(stage.pieces, x) for x in verticals]
    return planes, sections


def certified_stages(ledger: ConstructionLedger, x: Sequence) -> list:
    """Stages whose line is ``(x, 1)``: where sections on ``v_x`` are certified disjoint."""
    v, _ = vertical_direction(x)
    return _line_stages(ledger, v)

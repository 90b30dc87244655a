"""Quantitative checks on a built construction.

Counting recursion, the opposite-end gap of a parent, box counts, projection
measure sums, ball masses and discrete s-energies.  Verdicts are decided in
exact arithmetic; floating point only appears in displayed values and in the
energy estimate.
"""

from __future__ import annotations

import bisect
import itertools
import math
import random
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .construction import ConstructionLedger, Stage
from .errors import (
    CaseRangeError,
    DegeneratePiece,
    InsufficientDepth,
    InvalidExponent,
    LineNotInSchedule,
    SlopeUndefined,
)
from .kernel import (
    Direction,
    Piece,
    canonicalize_direction,
    dot,
    edge_vectors,
    inverse_matrix,
    piece_vertices,
    projection_range,
    slab_range,
    sq_distance_to_piece,
)
from .schedule import LineSchedule, angle_alpha, edge_alpha


# ---------------------------------------------------------------------------
# Counting recursion


@dataclass(frozen=True)
class StageRecord:
    """Scale data of one stage; ``count`` is ``None`` for synthetic records."""

    k: int
    n: int
    a: int
    m: float
    count: Optional[int] = None


@dataclass
class RecursionRow:
    k: int
    alpha_tilde: float
    M: int
    within: bool
    delta: float
    eps: Optional[float]
    eps_prime: Optional[float]


@dataclass
class RecursionReport:
    d: int
    rows: list

    @property
    def verdict(self) -> bool:
        return all(r.within for r in self.rows)

    def row(self, k: int) -> RecursionRow:
        for r in self.rows:
            if r.k == k:
                return r
        raise KeyError(k)

    def violations(self) -> list:
        return [r.k for r in self.rows if not r.within]


def ledger_records(ledger: ConstructionLedger) -> list:
    return [StageRecord(st.k, st.n, st.a, st.m, st.count) for st in ledger.stages[1:]]


def _within_exact(prev: StageRecord, cur: StageRecord, n_lag: int, M: int) -> bool:
    """``|n - a - n_lag - log2(c_k / c_{k-1})| <= M`` without logarithms."""
    e = cur.n - cur.a - n_lag
    ratio = Fraction(cur.count, prev.count)
    return Fraction(2) ** (e - M) <= ratio <= Fraction(2) ** (e + M)


def check_mk_recursion(ledger, schedule: LineSchedule) -> RecursionReport:
    """Rearranged counting recursion and the derived constants per stage ``k > d``.

    ``ledger`` is a :class:`ConstructionLedger` or a list of :class:`StageRecord`
    for stages ``1..K``.  Stages ``j <= 0`` have ``n_j = a_j = m_j = 0``.
    """
    d = schedule.d
    recs = ledger_records(ledger) if isinstance(ledger, ConstructionLedger) else list(ledger)
    K = len(recs)
    if K < d + 1:
        raise InsufficientDepth(f"need at least {d + 1} stages, have {K}")
    origin = StageRecord(0, 0, 0, 0.0, 1)
    by_k = {0: origin}
    by_k.update({r.k: r for r in recs})

    def n(j):
        return by_k[j].n if j >= 1 else 0

    def a(j):
        return by_k[j].a if j >= 1 else 0

    def m(j):
        return by_k[j].m if j >= 0 else 0.0

    rows = []
    for k in range(d + 1, K + 1):
        cur, prev = by_k[k], by_k[k - 1]
        M = schedule.angle_data[k].M
        at = n(k) - a(k) + m(k - 1) - n(k - d) - m(k)
        if cur.count is not None and prev.count is not None:
            within = _within_exact(prev, cur, n(k - d), M)
        else:
            within = abs(at) <= M
        delta = (m(k - 1) - n(k - d) - at) / n(k)
        eps = eps_p = None
        if k + d <= K:
            lhs = -m(k + d) + sum(n(k + j) - a(k + j) for j in range(1, d + 1)) + d
            eps = (lhs - a(k)) / n(k)
        if k + d - 1 <= K:
            lhs = -m(k + d - 1) + sum(n(k + j) - a(k + j) for j in range(1, d)) + d - 1
            eps_p = (lhs - a(k)) / n(k) + 1
        rows.append(RecursionRow(k, at, M, within, delta, eps, eps_p))
    return RecursionReport(d, rows)


# ---------------------------------------------------------------------------
# Opposite-end gap


@dataclass
class WkReport:
    """``2^-w`` of a parent along a line.

    ``gap`` is the scaled minimum ``|v.x1 - v.x2|``; the metric value is
    ``gap / |v|`` and is compared through its square ``metric_sq``.
    """

    gap: Fraction
    metric_sq: Fraction
    width_sq: Fraction  # squared metric width of the parent's oldest slab
    alpha: int
    lower_ok: bool
    upper_ok: bool

    @property
    def metric(self) -> float:
        return math.sqrt(self.metric_sq)

    edge_sq: Fraction = Fraction(0)  # squared length of the long edge
    edge_alpha: int = 0
    edge_ok: bool = False

    @property
    def verdict(self) -> bool:
        return self.lower_ok and self.upper_ok


def compute_wk(parent: Piece, line: Direction, edges_only: bool = False) -> WkReport:
    """Minimum projected distance over vertex pairs on opposite oldest faces.

    Any two vertices whose oldest-slab choice differs are on opposite ends;
    ``edges_only`` restricts to pairs joined by an edge of the oldest slab.
    The sandwich compares the metric value with the metric width of the
    oldest slab, ``width * 2^-alpha <= 2^-w <= width``, squared so no square
    root enters.
    """
    oldest = parent.slabs[0]
    _, alpha = angle_alpha(oldest.direction, line)  # raises OrthogonalLines
    verts = piece_vertices(parent)
    d = parent.dim
    top = 1 << (d - 1)  # bit of the oldest slab in the vertex ordering
    edge = edge_vectors(parent)[0]
    if edges_only:
        gap = min(abs(dot(line.components, verts[i]) - dot(line.components, verts[i | top]))
                  for i in range(len(verts)) if not i & top)
        return _wk_report(gap, line, oldest, alpha, edge)
    near = sorted({dot(line.components, v) for i, v in enumerate(verts) if not i & top})
    far = sorted({dot(line.components, v) for i, v in enumerate(verts) if i & top})
    gap = None
    for x in near:
        pos = bisect.bisect_left(far, x)
        for y in far[max(pos - 1, 0):pos + 1]:
            g = abs(x - y)
            if gap is None or g < gap:
                gap = g
    return _wk_report(gap, line, oldest, alpha, edge)


def _wk_report(gap: Fraction, line: Direction, oldest, alpha: int, edge: Sequence) -> WkReport:
    metric_sq = gap * gap / line.norm_sq
    width = oldest.hi - oldest.lo
    width_sq = width * width / oldest.direction.norm_sq
    lower = width_sq / Fraction(4) ** alpha
    # the same sandwich against the long edge and the angle between it and the line
    edge_sq = sum(x * x for x in edge)
    ip = dot(line.components, edge)
    e_alpha = edge_alpha(ip * ip / (edge_sq * line.norm_sq)) if ip else 0
    edge_ok = ip != 0 and edge_sq / Fraction(4) ** e_alpha <= metric_sq <= edge_sq
    return WkReport(gap, metric_sq, width_sq, alpha, lower <= metric_sq, metric_sq <= width_sq,
                    edge_sq, e_alpha, edge_ok)


# ---------------------------------------------------------------------------
# Box counting


AMBIENT = "ambient"


@dataclass(frozen=True)
class Projection:
    direction: Direction


@dataclass(frozen=True)
class Subspace:
    directions: tuple


Target = Union[str, Projection, Subspace]


def _open_cell_range(lo: Fraction, hi: Fraction, q: int) -> tuple:
    """Indices ``i`` whose open cell ``(i, i+1) 2^-q`` meets ``[lo, hi]``."""
    s = 1 << q
    if lo == hi:
        i = math.floor(lo * s)
        return i, i
    return math.floor(lo * s), math.ceil(hi * s) - 1


def _count_union(ranges: list) -> int:
    ranges.sort()
    total = 0
    cur_lo = cur_hi = None
    for lo, hi in ranges:
        if cur_hi is None or lo > cur_hi + 1:
            if cur_hi is not None:
                total += cur_hi - cur_lo + 1
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo + 1
    return total


def _cross(u, v):
    return (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])


def _separating_axes(p: Piece) -> list:
    """Candidate separating axes between the piece and any axis-parallel box."""
    d = p.dim
    axes = [tuple(int(i == j) for j in range(d)) for i in range(d)]
    axes += [s.direction.components for s in p.slabs]
    if d == 3:
        for e in edge_vectors(p):
            for u in axes[:3]:
                c = _cross(e, u)
                if any(c):
                    axes.append(c)
    return axes


def _box_range(cell: tuple, h: Fraction, u: Sequence) -> tuple:
    lo = hi = Fraction(0)
    for ci, ui in zip(cell, u):
        if ui > 0:
            lo += ui * ci * h
            hi += ui * (ci + 1) * h
        elif ui < 0:
            lo += ui * (ci + 1) * h
            hi += ui * ci * h
    return lo, hi


def _ambient_cells(p: Piece, q: int) -> set:
    """Cells of side ``2^-q`` whose interior meets the piece (separating-axis test)."""
    d = p.dim
    if d > 3:
        return _ambient_cells_fm(p, q)
    h = Fraction(1, 1 << q)
    verts = piece_vertices(p)
    ranges = [_open_cell_range(min(v[i] for v in verts), max(v[i] for v in verts), q) for i in range(d)]
    axes = _separating_axes(p)
    piece_ranges = [slab_range(p.slabs, u) for u in axes]
    out = set()
    for cell in itertools.product(*(range(lo, hi + 1) for lo, hi in ranges)):
        for u, (plo, phi) in zip(axes, piece_ranges):
            blo, bhi = _box_range(cell, h, u)
            if bhi <= plo or phi <= blo:
                break
        else:
            out.add(cell)
    return out


def strictly_feasible(constraints: list) -> bool:
    """Fourier-Motzkin test for ``{x : a.x <= b}`` with per-row strictness.

    ``constraints`` holds ``(a, b, strict)`` with rational ``a`` and ``b``.
    """
    rows = [(tuple(Fraction(c) for c in a), Fraction(b), s) for a, b, s in constraints]
    nvars = len(rows[0][0]) if rows else 0
    for var in range(nvars):
        pos, neg, rest = [], [], []
        for a, b, s in rows:
            c = a[var]
            if c > 0:
                pos.append((tuple(x / c for x in a), b / c, s))
            elif c < 0:
                neg.append((tuple(x / -c for x in a), b / -c, s))
            else:
                rest.append((a, b, s))
        for (ap, bp, sp), (an, bn, sn) in itertools.product(pos, neg):
            rest.append((tuple(x + y for x, y in zip(ap, an)), bp + bn, sp or sn))
        rows = list(set(rest))
    return all(b > 0 if s else b >= 0 for _, b, s in rows)


def _piece_constraints(p: Piece) -> list:
    out = []
    for s in p.slabs:
        v = s.direction.components
        out.append((v, s.hi, False))
        out.append((tuple(-c for c in v), -s.lo, False))
    return out


def cell_meets_piece(p: Piece, cell: Sequence[int], q: int, maps: Optional[Sequence] = None) -> bool:
    """Does the open grid cell meet the piece (or its image under ``maps``)?"""
    h = Fraction(1, 1 << q)
    d = p.dim
    if maps is None:
        maps = [tuple(int(i == j) for j in range(d)) for i in range(d)]
    rows = _piece_constraints(p)
    for u, c in zip(maps, cell):
        rows.append((tuple(u), (c + 1) * h, True))
        rows.append((tuple(-x for x in u), -c * h, True))
    return strictly_feasible(rows)


def _ambient_cells_fm(p: Piece, q: int) -> set:
    d = p.dim
    verts = piece_vertices(p)
    ranges = [_open_cell_range(min(v[i] for v in verts), max(v[i] for v in verts), q) for i in range(d)]
    return {cell for cell in itertools.product(*(range(lo, hi + 1) for lo, hi in ranges))
            if cell_meets_piece(p, cell, q)}


def _subspace_cells(p: Piece, q: int, dirs: Sequence[Direction]) -> set:
    maps = [v.components for v in dirs]
    ranges = [_open_cell_range(*projection_range(p, v), q) for v in dirs]
    return {cell for cell in itertools.product(*(range(lo, hi + 1) for lo, hi in ranges))
            if cell_meets_piece(p, cell, q, maps)}


def box_count(pieces: Sequence[Piece], q: int, target: Target = AMBIENT) -> int:
    """Number of open grid cells of side ``2^-q`` (anchored at 0) meeting the set.

    Projection and subspace targets count cells in the scaled coordinates
    ``v . x``.  A cell counts when its interior meets a piece, so a set
    aligned to the grid is not charged for the cells it merely touches.
    """
    if q < 0:
        raise ValueError("q must be non-negative")
    if not pieces:
        return 0
    if isinstance(target, Projection):
        return _count_union([_open_cell_range(*projection_range(p, target.direction), q) for p in pieces])
    if isinstance(target, Subspace):
        if len(target.directions) == 1:
            return box_count(pieces, q, Projection(target.directions[0]))
        cells = set()
        for p in pieces:
            cells |= _subspace_cells(p, q, target.directions)
        return len(cells)
    if target != AMBIENT:
        raise ValueError(f"unknown target {target!r}")
    cells = set()
    for p in pieces:
        cells |= _ambient_cells(p, q)
    return len(cells)


def rasterize(pieces: Sequence[Piece], q: int, bounds: Optional[Sequence[tuple]] = None) -> int:
    """Reference ambient count: every cell of the grid over ``bounds`` against every piece."""
    if not pieces:
        return 0
    d = pieces[0].dim
    if bounds is None:
        bounds = [(0, (1 << q) - 1)] * d
    count = 0
    for cell in itertools.product(*(range(lo, hi + 1) for lo, hi in bounds)):
        if any(cell_meets_piece(p, cell, q) for p in pieces):
            count += 1
    return count


def dim_slope(series: Sequence[tuple]) -> float:
    """Least-squares slope of ``log2 N`` against ``q``."""
    series = list(series)
    qs = [q for q, _ in series]
    if len(set(qs)) < 2 or any(N < 1 for _, N in series):
        raise SlopeUndefined(f"need two distinct q and all N >= 1, got {series}")
    ys = [math.log2(N) for _, N in series]
    slope, _ = statistics.linear_regression([float(q) for q in qs], ys)
    return slope


def box_series(pieces: Sequence[Piece], qs: Sequence[int], target: Target = AMBIENT) -> list:
    return [(q, box_count(pieces, q, target)) for q in qs]


# ---------------------------------------------------------------------------
# Projection measure sums


@dataclass(frozen=True)
class SeriesPoint:
    """``count * 2^(-n t)``; compared exactly through ``value^den(t)``."""

    k: int
    n: int
    count: int
    t: Fraction

    @property
    def log2_value(self) -> float:
        return math.log2(self.count) - self.n * float(self.t)

    @property
    def value(self) -> float:
        return 2.0 ** self.log2_value

    def power(self) -> Fraction:
        """``value ** t.denominator``, a rational."""
        den = self.t.denominator
        return Fraction(self.count) ** den / Fraction(2) ** (self.n * self.t.numerator)

    def __lt__(self, other: "SeriesPoint") -> bool:
        if self.t != other.t:
            raise ValueError("points at different exponents")
        return self.power() < other.power()

    def below_power_of_two(self, e: int) -> bool:
        """Exact test of ``value < 2^e``."""
        return self.power() < Fraction(2) ** (e * self.t.denominator)


def _resolve_line(schedule: LineSchedule, line_index) -> int:
    if isinstance(line_index, int):
        if 0 <= line_index < len(schedule.user_lines):
            return line_index
        raise LineNotInSchedule(f"no user line with index {line_index}")
    v = line_index if isinstance(line_index, Direction) else canonicalize_direction(line_index)
    for i, u in enumerate(schedule.user_lines):
        if u.components == v.components:
            return i
    raise LineNotInSchedule(f"{v} is not a user line of the schedule")


def projection_measure_series(ledger: ConstructionLedger, line_index, t) -> list:
    """``2^(m_k - n_k t)`` at every stage whose line is the requested user line."""
    t = Fraction(t)
    idx = _resolve_line(ledger.schedule, line_index)
    occ = [k for k in ledger.schedule.occurrences(idx) if k <= ledger.depth]
    if len(occ) < 2:
        raise LineNotInSchedule(f"user line {idx} occurs {len(occ)} time(s) within depth {ledger.depth}")
    return [SeriesPoint(k, ledger.n(k), ledger.stage(k).count, t) for k in occ]


def strictly_decreasing(series: Sequence[SeriesPoint]) -> bool:
    return all(b < a for a, b in zip(series, series[1:]))


# ---------------------------------------------------------------------------
# Ball masses

CASE1 = "case1"
CASE2 = "case2"


@dataclass(frozen=True)
class BallQuery:
    """Closed ball of diameter ``2^-q``."""

    center: tuple
    q: int
    case_tag: Optional[str] = None

    @property
    def radius_sq(self) -> Fraction:
        return Fraction(1, 1 << (2 * self.q + 2))


def case_ranges(ledger: ConstructionLedger, k: int) -> dict:
    """Inclusive ``q`` ranges of both cases at stage ``k`` (empty ranges omitted)."""
    out = {}
    if 1 <= k < ledger.depth:
        lo, hi = ledger.n(k) + 1, ledger.n(k + 1) - ledger.a(k + 1)
        if lo <= hi:
            out[CASE1] = (lo, hi)
    if 1 <= k <= ledger.depth:
        lo, hi = ledger.n(k) - ledger.a(k) + 1, ledger.n(k)
        if lo <= hi:
            out[CASE2] = (lo, hi)
    return out


def classify_ball(ledger: ConstructionLedger, k: int, q: int) -> str:
    for tag, (lo, hi) in case_ranges(ledger, k).items():
        if lo <= q <= hi:
            return tag
    raise CaseRangeError(f"q={q} is outside both case ranges at stage {k}")


class PieceIndex:
    """Pieces of one stage bucketed by the first coordinate of their bounding boxes."""

    def __init__(self, pieces: Sequence[Piece]):
        self.pieces = list(pieces)
        self.boxes = []
        for p in self.pieces:
            verts = piece_vertices(p)
            d = p.dim
            self.boxes.append(tuple((min(v[i] for v in verts), max(v[i] for v in verts)) for i in range(d)))
        order = sorted(range(len(self.pieces)), key=lambda i: self.boxes[i][0][0])
        self.order = order
        self.starts = [self.boxes[i][0][0] for i in order]
        self.span = max((b[0][1] - b[0][0] for b in self.boxes), default=Fraction(0))
        self.vertices = {}

    def near(self, center: Sequence, r: Fraction) -> list:
        """Indices of pieces whose bounding box meets the cube around the ball."""
        lo = bisect.bisect_left(self.starts, center[0] - r - self.span)
        hi = bisect.bisect_right(self.starts, center[0] + r)
        out = []
        for pos in range(lo, hi):
            i = self.order[pos]
            if all(b_lo <= c + r and c - r <= b_hi for (b_lo, b_hi), c in zip(self.boxes[i], center)):
                out.append(i)
        return out

    def verts(self, i: int) -> list:
        if i not in self.vertices:
            self.vertices[i] = piece_vertices(self.pieces[i])
        return self.vertices[i]


def _ball_bounds(index: PieceIndex, center: Sequence, r_sq: Fraction, r: Fraction) -> tuple:
    lower = upper = Fraction(0)
    for i in index.near(center, r):
        p = index.pieces[i]
        if sq_distance_to_piece(p, center) > r_sq:
            continue
        upper += p.mass
        if all(sum((x - c) ** 2 for x, c in zip(v, center)) <= r_sq for v in index.verts(i)):
            lower += p.mass
    return lower, upper


def mass_ball_bounds(stage: Stage, ball: BallQuery, ledger: Optional[ConstructionLedger] = None,
                     index: Optional[PieceIndex] = None) -> tuple:
    """Masses of the pieces inside the ball and of those meeting it.

    With a ledger the ball's ``q`` must fall in a case range of ``stage.k``.
    """
    if ledger is not None:
        classify_ball(ledger, stage.k, ball.q)
    if index is None:
        index = PieceIndex(stage.pieces)
    r = Fraction(1, 1 << (ball.q + 1))
    return _ball_bounds(index, tuple(Fraction(c) for c in ball.center), ball.radius_sq, r)


def sample_centers(stage: Stage, count: int, seed: int, precision: int) -> list:
    """Seeded points of random pieces, rounded down to multiples of ``2^-precision``."""
    rng = random.Random(seed)
    scale = 1 << precision
    out = []
    for _ in range(count):
        p = stage.pieces[rng.randrange(stage.count)]
        verts = piece_vertices(p)
        weights = [rng.getrandbits(32) for _ in verts]
        total = sum(weights) or 1
        pt = [sum(Fraction(w, total) * v[i] for w, v in zip(weights, verts)) for i in range(p.dim)]
        out.append(tuple(Fraction(math.floor(x * scale), scale) for x in pt))
    return out


@dataclass
class BallCheck:
    ball: BallQuery
    lower: Fraction
    upper: Fraction
    holds: bool  # lower <= 2^-qs / q^2
    inconclusive: bool  # upper exceeds the same bound


def ball_bound_holds(mass: Fraction, q: int, s: Fraction) -> bool:
    """Exact ``mass <= 2^(-q s) / q^2`` for rational ``s``."""
    lhs = mass * q * q
    if lhs == 0:
        return True
    den = s.denominator
    return lhs ** den <= Fraction(1, 2 ** (q * s.numerator))


def check_balls(ledger: ConstructionLedger, k: int, case: str, samples: int, seed: int,
                s: Optional[Fraction] = None) -> list:
    """Sample ``samples`` balls per ``q`` round-robin over the case range at stage ``k``."""
    rng_q = case_ranges(ledger, k)
    if case not in rng_q:
        raise CaseRangeError(f"stage {k} has no {case} range")
    lo, hi = rng_q[case]
    if s is None:
        s = ledger.schedule.d - 1 + ledger.plan.t
    s = Fraction(s)
    stage = ledger.stage(ledger.depth)
    index = PieceIndex(stage.pieces)
    qs = [lo + i % (hi - lo + 1) for i in range(samples)]
    centers = sample_centers(stage, samples, seed, hi + 16)
    out = []
    for q, c in zip(qs, centers):
        ball = BallQuery(c, q, case)
        lower, upper = mass_ball_bounds(stage, ball, index=index)
        out.append(BallCheck(ball, lower, upper, ball_bound_holds(lower, q, s),
                             not ball_bound_holds(upper, q, s)))
    return out


# ---------------------------------------------------------------------------
# Energy


@dataclass
class EnergyReport:
    s: float
    k: int
    cross_term: float
    diagonal_count: int
    diagonal_mass_sq: Fraction

    @property
    def capacity_bound(self) -> float:
        """Reciprocal of the cross term (infinite when it vanishes)."""
        return math.inf if self.cross_term == 0 else 1.0 / self.cross_term


def piece_center(p: Piece) -> tuple:
    """Exact center: the image of the slab midpoints."""
    inv = inverse_matrix(p.directions)
    mids = [(Fraction(sl.lo) + Fraction(sl.hi)) / 2 for sl in p.slabs]
    return tuple(sum(Fraction(r) * c for r, c in zip(row, mids)) for row in inv)


ENERGY_CHUNK = 512
NEAR = 2.0 ** -40  # float differences below this are recomputed exactly


def _log2_fraction(x: Fraction) -> float:
    return math.log2(x.numerator) - math.log2(x.denominator)


def energy(stage: Stage, s: float) -> EnergyReport:
    """``sum_{i != j} m_i m_j |c_i - c_j|^-s`` over piece centers.

    Pairs far apart are summed in floating point from a two-term split of
    each center; pairs closer than ``NEAR`` are recomputed from the exact
    centers, since the construction nests far below float resolution.
    """
    if not s > 0:
        raise InvalidExponent(f"s must be positive, got {s}")
    if not stage.pieces:
        raise ValueError("stage has no pieces")
    exact = [piece_center(p) for p in stage.pieces]
    hi = np.array([[float(x) for x in c] for c in exact])
    lo = np.array([[float(x - Fraction(h)) for x, h in zip(c, row)] for c, row in zip(exact, hi)])
    masses = np.array([float(p.mass) for p in stage.pieces])
    n = len(masses)
    total = 0.0
    near = []
    for start in range(0, n, ENERGY_CHUNK):
        stop = min(start + ENERGY_CHUNK, n)
        diff = (hi[start:stop, None, :] - hi[None, :, :]) + (lo[start:stop, None, :] - lo[None, :, :])
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        rows = np.arange(start, stop)
        dist[rows - start, rows] = np.inf
        close = dist < NEAR
        for i, j in zip(*np.nonzero(close)):
            near.append((start + int(i), int(j)))
        dist[close] = np.inf
        total += float(np.sum(masses[start:stop, None] * masses[None, :] * dist ** (-s)))
    for i, j in near:
        d2 = sum((a - b) ** 2 for a, b in zip(exact[i], exact[j]))
        if d2 == 0:
            raise DegeneratePiece(f"pieces {stage.pieces[i].global_id} and {stage.pieces[j].global_id} share a center")
        total += float(masses[i] * masses[j]) * 2.0 ** (-s / 2 * _log2_fraction(d2))
    diag = sum((p.mass * p.mass for p in stage.pieces), Fraction(0))
    return EnergyReport(float(s), stage.k, total, n, diag)


# ---------------------------------------------------------------------------
# Projection dimension trend


def ratio_within(count: int, n: int, t, tol) -> bool:
    """Exact ``|log2(count) / n - t| <= tol`` for rational ``t`` and ``tol``."""
    lo, hi = Fraction(t) - Fraction(tol), Fraction(t) + Fraction(tol)

    def at_least(e: Fraction) -> bool:  # count >= 2^(n e)
        if e <= 0:
            return True
        return Fraction(count) ** e.denominator >= Fraction(2) ** (n * e.numerator)

    def at_most(e: Fraction) -> bool:  # count <= 2^(n e)
        if e < 0:
            return False
        return Fraction(count) ** e.denominator <= Fraction(2) ** (n * e.numerator)

    return at_least(lo) and at_most(hi)


def scale_series(ledger: ConstructionLedger, k: int, line: Direction, scales: int = 3) -> list:
    """Box counts of stage ``k`` projected onto ``line`` at ``q = n_{k-scales+1}, ..., n_k``."""
    qs = sorted({ledger.n(j) for j in range(max(1, k - scales + 1), k + 1)})
    return box_series(ledger.stage(k).pieces, qs, Projection(line))

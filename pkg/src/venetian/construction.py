"""Stage-by-stage construction of the nested parallelepiped sets.

Stage ``k`` replaces the oldest slab of every stage ``k-1`` piece by a thin
slab of direction ``l_k``.  The new slab is the preimage of one of the
intervals ``[h 2^(a-n) + j 2^(1-n), ... + 2^-n]`` where ``j`` is the parent's
rank and ``h`` ranges over every position at which the slab crosses the
parent completely.  All interval endpoints are dyadic; all tests are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

from .errors import DegeneratePiece, EmptyStage, PieceCapExceeded, StageStarved
from .kernel import (
    Direction,
    Dyadic,
    Piece,
    Slab,
    dual_coefficients,
    edge_length_multiset,
    piece_contains,
    piece_vertices,
    projection_range,
    slab_range,
    unit_cube_slabs,
)
from .errors import PlanInfeasible
from .schedule import SEARCH, LineSchedule, ParameterPlan, PlanState, check_plan_step, plan_horizon, plan_parameters


def interval(h: int, j: int, n: int, a: int) -> tuple:
    """Generating interval ``I^(h,j)`` for scales ``n > a >= 1``."""
    lo = h * (1 << a) + 2 * j
    return Dyadic.cell(lo, n), Dyadic.cell(lo + 1, n)


def interval_index(h: int, j: int, a: int) -> int:
    """Left endpoint of ``I^(h,j)`` in units of ``2**-n``."""
    return h * (1 << a) + 2 * j


@dataclass
class Stage:
    k: int
    line: Optional[Direction]
    n: int
    a: int
    pieces: list
    per_parent_counts: dict
    line_tag: object = None

    @property
    def count(self) -> int:
        return len(self.pieces)

    @property
    def m(self) -> float:
        return math.log2(len(self.pieces))

    @property
    def directions(self) -> tuple:
        return self.pieces[0].directions

    def min_children(self) -> int:
        return min(self.per_parent_counts.values()) if self.per_parent_counts else 1

    def max_children(self) -> int:
        return max(self.per_parent_counts.values()) if self.per_parent_counts else 1


@dataclass
class InjectivityCertificate:
    k: int
    line: Direction
    intervals: list  # sorted (global_id, lo, hi)
    certified: bool
    violation: Optional[tuple] = None  # (global_id, global_id) of the first overlapping pair

    @property
    def verdict(self) -> str:
        return "certified" if self.certified else "violated"


@dataclass
class ConstructionLedger:
    schedule: LineSchedule
    plan: ParameterPlan
    stages: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.stages) - 1

    def stage(self, k: int) -> Stage:
        return self.stages[k]

    def n(self, k: int) -> int:
        return self.stages[k].n if k >= 1 else 0

    def a(self, k: int) -> int:
        return self.stages[k].a if k >= 1 else 0

    def m(self, k: int) -> float:
        return self.stages[k].m if k >= 0 else 0.0

    def rows(self) -> list:
        out = []
        for st in self.stages[1:]:
            out.append({
                "k": st.k,
                "line_index": st.line_tag,
                "n_k": st.n,
                "a_k": st.a,
                "count": st.count,
                "m_k": st.m,
                "min_children": st.min_children(),
                "max_children": st.max_children(),
            })
        return out


def initial_stage(schedule: LineSchedule) -> Stage:
    cube = Piece(unit_cube_slabs(schedule.initial_axes), 0, -1, 0, Fraction(1), None)
    return Stage(0, None, 0, 0, [cube], {})


def full_crossing_child(parent: Piece, new_line: Direction, iv: Sequence, drop_index: int = 0) -> Optional[Piece]:
    """Replace one parent slab by ``(new_line, iv)``; ``None`` unless the result lies in the parent."""
    lo, hi = iv
    slabs = list(parent.slabs)
    dropped = slabs.pop(drop_index)
    cand = tuple(slabs) + (Slab(new_line, Dyadic(lo), Dyadic(hi)),)
    rlo, rhi = slab_range(cand, dropped.direction.components)  # raises DegeneratePiece
    if dropped.lo <= rlo and rhi <= dropped.hi:
        return Piece(cand, parent.stage + 1, parent.global_id, -1, None, None)
    return None


def _h_window(parent: Piece, w: tuple, n: int, a: int, j: int) -> tuple:
    """Inclusive range of ``h`` for which the crossing of ``parent`` is full.

    ``w`` expresses the dropped direction in the candidate's slab coordinates;
    the newest coordinate enters linearly, so the admissible ``h`` are contiguous.
    """
    dropped = parent.slabs[0]
    c_lo = c_hi = Fraction(0)
    for wi, s in zip(w, parent.slabs[1:]):
        if wi > 0:
            c_lo += wi * s.lo
            c_hi += wi * s.hi
        elif wi < 0:
            c_lo += wi * s.hi
            c_hi += wi * s.lo
    wn = w[-1]
    width = Fraction(1, 1 << n)
    # need dropped.lo <= c_lo + min(wn*lo, wn*hi) and c_hi + max(...) <= dropped.hi
    if wn > 0:
        lo_min = (dropped.lo - c_lo) / wn
        lo_max = (dropped.hi - c_hi) / wn - width
    else:
        lo_min = (dropped.hi - c_hi) / wn - width
        lo_max = (dropped.lo - c_lo) / wn
    scale = 1 << n
    l_min = math.ceil(lo_min * scale)
    l_max = math.floor(lo_max * scale)
    step = 1 << a
    return -((2 * j - l_min) // step), (l_max - 2 * j) // step


def build_stage(prev: Stage, line: Direction, n: int, a: int, id_base: int = 0,
                max_pieces: Optional[int] = None, line_tag=None) -> Stage:
    """Build stage ``prev.k + 1`` from ``prev`` along ``line``."""
    parents = prev.pieces
    if not parents:
        raise EmptyStage(f"stage {prev.k} has no pieces")
    k = prev.k + 1
    cand_dirs = parents[0].directions[1:] + (line,)
    w = dual_coefficients(cand_dirs, parents[0].directions[0].components)
    windows = []
    total = 0
    for j, parent in enumerate(parents, start=1):
        h_lo, h_hi = _h_window(parent, w, n, a, j)
        cnt = max(0, h_hi - h_lo + 1)
        if cnt == 0:
            raise StageStarved(f"stage {k}: parent {parent.global_id} (j={j}) has no full crossing")
        windows.append((h_lo, h_hi))
        total += cnt
    if max_pieces is not None and total > max_pieces:
        raise PieceCapExceeded(k, total, max_pieces)

    children = []
    counts = {}
    step = 1 << a
    for j, (parent, (h_lo, h_hi)) in enumerate(zip(parents, windows), start=1):
        cnt = h_hi - h_lo + 1
        counts[parent.global_id] = cnt
        kept = parent.slabs[1:]
        mass = parent.mass / cnt if parent.mass is not None else None
        for h in range(h_lo, h_hi + 1):
            lo = h * step + 2 * j
            slab = Slab(line, Dyadic.cell(lo, n), Dyadic.cell(lo + 1, n))
            children.append((h, j, Piece(kept + (slab,), k, parent.global_id, -1, mass, (h, j))))
    children.sort(key=lambda c: (c[0], c[1]))
    pieces = []
    for idx, (_, _, p) in enumerate(children):
        p.global_id = id_base + idx
        pieces.append(p)
    return Stage(k, line, n, a, pieces, counts, line_tag)


def assign_mass(stage: Stage, prev: Stage) -> Stage:
    """Split each parent's mass uniformly over its children."""
    by_id = {p.global_id: p for p in prev.pieces}
    for p in prev.pieces:
        if stage.per_parent_counts.get(p.global_id, 0) == 0:
            raise StageStarved(f"stage {stage.k}: parent {p.global_id} has no children")
    pieces = [replace(c, mass=by_id[c.parent_id].mass / stage.per_parent_counts[c.parent_id]) for c in stage.pieces]
    return replace(stage, pieces=pieces)


def certify_injectivity(stage: Stage) -> InjectivityCertificate:
    """Sort the generating intervals on the stage line and scan for overlaps."""
    ivs = sorted(((p.slabs[-1].lo, p.slabs[-1].hi, p.global_id) for p in stage.pieces))
    violation = None
    for (lo0, hi0, g0), (lo1, hi1, g1) in zip(ivs, ivs[1:]):
        if not hi0 < lo1:
            violation = (g0, g1)
            break
    return InjectivityCertificate(
        stage.k, stage.line, [(g, lo, hi) for lo, hi, g in ivs], violation is None, violation)


def check_ordering(stage: Stage) -> bool:
    """``I^(h,1) < I^(h,2) < ... < I^(h+1,1)``: sorting by ``(h, j)`` sorts the intervals."""
    seq = sorted(stage.pieces, key=lambda p: p.gen)
    return all(p.slabs[-1].hi < q.slabs[-1].lo for p, q in zip(seq, seq[1:]))


def _sample(items: list, size: int) -> list:
    if len(items) <= size:
        return list(items)
    stride = len(items) / size
    return [items[int(i * stride)] for i in range(size)]


def check_congruence(stage: Stage, sample: Optional[int] = 16) -> bool:
    pieces = stage.pieces if sample is None else _sample(stage.pieces, max(sample, 1))
    ref = edge_length_multiset(pieces[0])
    return all(edge_length_multiset(p) == ref for p in pieces[1:])


def check_nesting(stage: Stage, prev: Stage, sample: Optional[int] = None) -> bool:
    by_id = {p.global_id: p for p in prev.pieces}
    pieces = stage.pieces if sample is None else _sample(stage.pieces, sample)
    return all(piece_contains(by_id[p.parent_id], p) for p in pieces)


def check_gaps(stage: Stage) -> bool:
    """Siblings sit at least ``2^(a-n) - 2^-n`` apart on the stage line."""
    gap = Fraction(1, 1 << stage.n) * ((1 << stage.a) - 1)
    sibs = {}
    for p in stage.pieces:
        sibs.setdefault(p.parent_id, []).append(p.slabs[-1])
    for group in sibs.values():
        group.sort(key=lambda s: s.lo)
        for s, t in zip(group, group[1:]):
            if t.lo - s.hi < gap:
                return False
    return True


def brute_force_stage(prev: Stage, line: Direction, n: int, a: int) -> list:
    """Reference builder: every ``(h, j)`` over the cube's projection, tested on vertices.

    Returns sorted ``(h, j, parent_global_id)`` triples of accepted children.
    """
    d = len(line.components)
    lo_cube = sum(c for c in line.components if c < 0)
    hi_cube = sum(c for c in line.components if c > 0)
    step = Fraction(1 << a, 1 << n)
    accepted = []
    for j, parent in enumerate(prev.pieces, start=1):
        off = Fraction(2 * j, 1 << n)
        h_min = math.floor((lo_cube - off - Fraction(1, 1 << n)) / step)
        h_max = math.ceil((hi_cube - off) / step)
        verts_parent = parent.slabs
        for h in range(h_min, h_max + 1):
            lo, hi = interval(h, j, n, a)
            cand = parent.slabs[1:] + (Slab(line, lo, hi),)
            probe = Piece(cand, prev.k + 1, parent.global_id, -1)
            try:
                verts = piece_vertices(probe)
            except DegeneratePiece:
                continue
            if all(all(s.lo <= sum(c * x for c, x in zip(s.direction.components, v)) <= s.hi
                       for s in verts_parent) for v in verts):
                accepted.append((h, j, parent.global_id))
    return sorted(accepted)


def check_persistence(ledger: ConstructionLedger) -> dict:
    """Deepest pieces re-projected onto each user line land inside their ancestor's interval.

    Returns ``{user_index: violation_count}`` for every user line that occurs.
    """
    sched = ledger.schedule
    K = ledger.depth
    deepest = ledger.stages[K].pieces
    maps = [{p.global_id: p for p in st.pieces} for st in ledger.stages]
    result = {}
    for idx, line in enumerate(sched.user_lines):
        occ = [k for k in sched.occurrences(idx) if k <= K]
        if not occ:
            continue
        ki = occ[-1]
        bad = 0
        for p in deepest:
            anc = p
            for k in range(K, ki, -1):
                anc = maps[k - 1][anc.parent_id]
            lo, hi = projection_range(p, line)
            gen = anc.slabs[-1]
            if not (gen.lo <= lo and hi <= gen.hi):
                bad += 1
        result[idx] = bad
    return result


def plan_state(stages: list, d: int) -> PlanState:
    k = len(stages)  # next stage index
    n_hist = tuple(stages[i].n if i >= 1 else 0 for i in range(k - d, k))
    last = stages[-1]
    return PlanState(n_hist, last.a, last.m, last.count)


def construct(schedule: LineSchedule, plan: ParameterPlan, depth: int,
              max_pieces: Optional[int] = None, progress=None) -> ConstructionLedger:
    """Plan and build stages ``1..depth``."""
    ledger = ConstructionLedger(schedule, plan, [initial_stage(schedule)])
    id_base = 1
    ahead = []
    for k in range(1, depth + 1):
        state = plan_state(ledger.stages, schedule.d)
        if plan.strategy == SEARCH:
            if ahead:
                n, a = ahead[0]
                try:
                    check_plan_step(n, a, k, state, schedule, plan.t, plan.option, **plan.settings(k))
                except PlanInfeasible:
                    ahead = []
            if not ahead:
                prefix = [(st.n, st.a) for st in ledger.stages[1:]]
                ahead = plan_horizon(schedule, plan, k, prefix, ledger.stages[-1].count)
            n, a = ahead.pop(0)
        else:
            n, a = plan_parameters(schedule, plan.t, plan.option, k, state, **plan.settings(k))
        plan.stages[k] = (n, a)
        st = build_stage(ledger.stages[-1], schedule.line(k), n, a, id_base, max_pieces,
                         schedule.entry(k).tag)
        id_base += st.count
        ledger.stages.append(st)
        if progress is not None:
            progress(st)
    return ledger

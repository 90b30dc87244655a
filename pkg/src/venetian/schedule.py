"""Line enumeration and parameter planning.

The schedule repeats the user lines, separating consecutive user lines by
the helper block ``e_1..e_{d-1}, e, e_1..e_{d-1}``.  Any ``d`` consecutive
entries are then independent and entries ``d`` apart are never orthogonal.
The planner picks the integer scales ``n_k`` (interval width ``2**-n_k``)
and ``a_k`` (offset ``2**(a_k - n_k)`` between sibling intervals).
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .errors import DimensionError, InvalidDirection, OrthogonalLines, PlanInfeasible, ScheduleSearchExhausted
from .kernel import Direction, axis, canonicalize_direction, determinant, dot, dual_coefficients, inverse_matrix

CAPACITY = "capacity"
MEASURE_ZERO = "measure_zero"
UNCONSTRAINED = "unconstrained"
OPTIONS = (CAPACITY, MEASURE_ZERO, UNCONSTRAINED)

HELPER_SEARCH_BOUND = 3


@dataclass(frozen=True)
class ScheduleEntry:
    direction: Direction
    tag: object  # int for user line index, "e" / "e1".. for helpers

    @property
    def is_user(self) -> bool:
        return isinstance(self.tag, int)


@dataclass(frozen=True)
class AngleData:
    k: int
    cos_sq: Fraction
    alpha: int

    @property
    def M(self) -> int:
        return self.alpha + 1


@dataclass
class LineSchedule:
    entries: list
    horizon: int
    d: int
    user_lines: list
    helpers: list  # e_1..e_{d-1}
    e: Direction
    initial_axes: tuple  # axis indices of the unit cube slabs, oldest first
    angle_data: dict = field(default_factory=dict)  # k -> AngleData (all k >= 1)

    def line(self, k: int) -> Direction:
        """``l_k`` for ``k >= 1``."""
        return self.entries[k - 1].direction

    def entry(self, k: int) -> ScheduleEntry:
        return self.entries[k - 1]

    def dropped_direction(self, k: int) -> Direction:
        """Direction of the parent slab replaced at stage ``k``."""
        if k > self.d:
            return self.line(k - self.d)
        return axis(self.initial_axes[k - 1], self.d)

    def occurrences(self, user_index: int) -> list:
        return [k for k in range(1, self.horizon + 1) if self.entries[k - 1].tag == user_index]

    def period(self) -> int:
        return 2 * self.d * len(self.user_lines)


def angle_alpha(u: Direction, v: Direction) -> tuple:
    """``cos^2`` of the angle between two lines and the least ``alpha`` with ``4**-alpha <= cos^2``."""
    ip = dot(u.components, v.components)
    if ip == 0:
        raise OrthogonalLines(f"{u} and {v} are orthogonal")
    cos_sq = Fraction(ip * ip, u.norm_sq * v.norm_sq)
    alpha = 0
    while Fraction(1, 4 ** alpha) > cos_sq:
        alpha += 1
    return cos_sq, alpha


def _small_vectors(d: int, bound: int):
    """Deterministic enumeration of primitive integer directions, all-ones first."""
    seen = set()
    ones = canonicalize_direction([1] * d)
    seen.add(ones.components)
    yield ones
    cands = []
    for v in itertools.product(range(-bound, bound + 1), repeat=d):
        if not any(v):
            continue
        c = canonicalize_direction(v)
        if c.components in seen:
            continue
        seen.add(c.components)
        cands.append(c)
    cands.sort(key=lambda c: (max(abs(x) for x in c.components), sum(abs(x) for x in c.components), c.components))
    yield from cands


def _hyperplane_basis(normal: Direction) -> list:
    """Integer basis of ``normal^perp``, as close to coordinate axes as possible."""
    nu = normal.components
    d = len(nu)
    p = next(i for i, c in enumerate(nu) if c != 0)
    basis = []
    for i in range(d):
        if i == p:
            continue
        v = [0] * d
        v[i] = nu[p]
        v[p] = -nu[i]
        basis.append(canonicalize_direction(v))
    return basis


def _normal_candidates(d: int, bound: int):
    for i in range(d):
        yield axis(i, d)
    for v in _small_vectors(d, bound):
        if sum(1 for c in v.components if c) > 1:
            yield v


def find_helpers(user_lines: Sequence[Direction], d: int, bound: int = HELPER_SEARCH_BOUND) -> tuple:
    """Choose ``(e_1..e_{d-1}, e)``: a hyperplane basis avoiding every user line and a transversal ``e``."""
    users = [u.components for u in user_lines]
    for normal in _normal_candidates(d, bound):
        if any(dot(normal.components, u) == 0 for u in users):
            continue  # H contains a user line
        basis = _hyperplane_basis(normal)
        taken = set(users) | {b.components for b in basis}
        for e in _small_vectors(d, bound):
            if e.components in taken:
                continue
            if dot(normal.components, e.components) == 0:
                continue  # e inside H
            if any(dot(e.components, u) == 0 for u in users):
                continue
            return basis, e
    raise ScheduleSearchExhausted(f"no helper lines with entries bounded by {bound}")


def _initial_axes(lines: Sequence[Direction], d: int) -> tuple:
    """Order the unit-cube axes so the axis dropped at stage ``k <= d`` is transversal to ``l_k``."""
    for perm in itertools.permutations(range(d)):
        ok = True
        for k in range(1, d + 1):
            ax = axis(perm[k - 1], d)
            if dot(ax.components, lines[k - 1].components) == 0:
                ok = False
                break
            rows = [axis(i, d).components for i in perm[k:]] + [lines[j].components for j in range(k)]
            if determinant(rows) == 0:
                ok = False
                break
        if ok:
            return perm
    raise ScheduleSearchExhausted("no admissible ordering of the unit cube axes")


def build_schedule(user_lines: Sequence, d: int, horizon: int, helper_bound: int = HELPER_SEARCH_BOUND) -> LineSchedule:
    if d < 2:
        raise DimensionError("ambient dimension must be at least 2")
    lines = []
    for raw in user_lines:
        v = raw if isinstance(raw, Direction) else canonicalize_direction(raw)
        if v.dim != d:
            raise DimensionError(f"user line {v} is not in R^{d}")
        lines.append(v)
    if not lines:
        raise InvalidDirection("at least one user line is required")
    if horizon < 2 * d * len(lines):
        raise ValueError(f"horizon {horizon} shorter than one period {2 * d * len(lines)}")
    helpers, e = find_helpers(lines, d, helper_bound)
    block = [(h, f"e{i + 1}") for i, h in enumerate(helpers)]
    pattern = []
    for idx, v in enumerate(lines):
        pattern.append(ScheduleEntry(v, idx))
        pattern.extend(ScheduleEntry(h, t) for h, t in block)
        pattern.append(ScheduleEntry(e, "e"))
        pattern.extend(ScheduleEntry(h, t) for h, t in block)
    entries = [pattern[i % len(pattern)] for i in range(horizon)]
    dirs = [en.direction for en in entries]
    verify_schedule(dirs, d)
    axes = _initial_axes(dirs, d)
    sched = LineSchedule(entries, horizon, d, lines, helpers, e, axes)
    for k in range(1, horizon + 1):
        cos_sq, alpha = angle_alpha(sched.dropped_direction(k), sched.line(k))
        sched.angle_data[k] = AngleData(k, cos_sq, alpha)
    return sched


def verify_schedule(dirs: Sequence[Direction], d: int) -> None:
    """Raise ``ScheduleSearchExhausted`` unless every window condition holds exactly."""
    for k in range(len(dirs) - d + 1):
        if determinant([v.components for v in dirs[k:k + d]]) == 0:
            raise ScheduleSearchExhausted(f"entries {k + 1}..{k + d} are dependent")
    for k in range(len(dirs) - d):
        if dot(dirs[k].components, dirs[k + d].components) == 0:
            raise ScheduleSearchExhausted(f"entries {k + 1} and {k + 1 + d} are orthogonal")


# ---------------------------------------------------------------------------
# Parameter planning


@dataclass(frozen=True)
class PlanState:
    """What the planner needs from the stages already built.

    ``n_hist[i]`` is ``n_{k-d+i}`` (zero for virtual stages ``<= 0``).
    """

    n_hist: tuple
    a_prev: int
    m_prev: float
    count_prev: int

    @classmethod
    def initial(cls, d: int) -> "PlanState":
        return cls((0,) * d, 0, 0.0, 1)


GREEDY = "greedy"
SEARCH = "search"


@dataclass
class ParameterPlan:
    """Planner configuration plus the ``(n_k, a_k)`` chosen so far.

    ``partition_tail`` limits where ``n_k >= a_k + n_{k-1}`` is enforced:
    ``None`` means every stage, ``j`` means only the last ``j`` stages of
    ``depth``.  The search strategy needs ``depth`` and ``max_pieces``.
    """

    t: Fraction
    option: str
    growth: Fraction = Fraction(2)
    k_ramp: Optional[int] = None
    partition_tail: Optional[int] = None
    strategy: str = GREEDY
    depth: Optional[int] = None
    max_pieces: Optional[int] = None
    n_limit: int = 1024
    stages: dict = field(default_factory=dict)  # k -> (n_k, a_k)

    def __post_init__(self):
        self.t = Fraction(self.t)
        self.growth = Fraction(self.growth)
        if self.option not in OPTIONS:
            raise ValueError(f"unknown option {self.option!r}")
        if self.strategy not in (GREEDY, SEARCH):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def ratio(self, k: int) -> Fraction:
        n, a = self.stages[k]
        return Fraction(a, n)

    def partitioned(self, k: int) -> bool:
        if self.partition_tail is None:
            return True
        if self.depth is None:
            return False
        return k > self.depth - self.partition_tail

    def settings(self, k: int) -> dict:
        return dict(growth=self.growth, k_ramp=self.k_ramp, case_partition=self.partitioned(k))


def ramp_stage(d: int) -> int:
    return d + 2


def _target_a(n: int, k: int, t: Fraction, option: str, ramped: bool) -> Fraction:
    """Where the planner aims ``a_k`` inside its admissible window."""
    if option == CAPACITY:
        margin = Fraction(2, k) if not ramped else 0
        return n * (1 - t - margin)
    if option == MEASURE_ZERO:
        margin = Fraction(2, k) if not ramped else 0
        return n * (1 - t + margin)
    return n * (1 - t)


def a_window(n: int, k: int, state: PlanState, angle: AngleData, t: Fraction, option: str,
             k_ramp: int, growth: Fraction, case_partition: bool = True) -> tuple:
    """Inclusive ``[lo, hi]`` of admissible ``a_k`` for a given ``n_k``; empty if lo > hi."""
    n_lag = state.n_hist[0]
    n_prev = state.n_hist[-1]
    if n <= n_prev or n < growth * n_prev:
        return 1, 0
    # a_k > k, a_k > a_{k-1}, a_k > m_{k-1} + 1 (count form: 2**a_k > 2 * count)
    lo = max(k + 1, state.a_prev + 1, (2 * state.count_prev).bit_length())
    # n_k - a_k >= n_{k-d} + alpha_k + 1, a_k < n_k
    hi = min(n - n_lag - angle.alpha - 1, n - 1)
    if case_partition:
        hi = min(hi, n - n_prev - 1)  # n_k > a_k + n_{k-1}: the finer ball range is non-empty
    if k > k_ramp:
        if option == CAPACITY:
            # a/n + 1/k <= 1 - t
            hi = min(hi, math.floor(n * (1 - t - Fraction(1, k))))
        elif option == MEASURE_ZERO:
            # a/n - 1/k >= 1 - t
            lo = max(lo, math.ceil(n * (1 - t + Fraction(1, k))))
    return lo, hi


def plan_parameters(schedule: LineSchedule, t, option: str, k: int, state: PlanState, *,
                    growth=Fraction(2), k_ramp: Optional[int] = None, case_partition: bool = True,
                    n_limit: int = 1 << 20) -> tuple:
    """Smallest admissible ``n_k``; ``a_k`` is the admissible value nearest the ratio target."""
    t = Fraction(t)
    growth = Fraction(growth)
    if option not in OPTIONS:
        raise ValueError(f"unknown option {option!r}")
    if k_ramp is None:
        k_ramp = ramp_stage(schedule.d)
    angle = schedule.angle_data[k]
    n_prev = state.n_hist[-1]
    n = max(n_prev + 1, math.ceil(growth * n_prev), 2)
    while n <= n_limit:
        lo, hi = a_window(n, k, state, angle, t, option, k_ramp, growth, case_partition)
        if lo <= hi:
            target = _target_a(n, k, t, option, k <= k_ramp)
            a = min(max(round(target), lo), hi)
            return n, a
        n += 1
    raise PlanInfeasible(f"no admissible (n_{k}, a_{k}) with n_{k} <= {n_limit}", stage=k)


def check_plan_step(n: int, a: int, k: int, state: PlanState, schedule: LineSchedule, t, option: str, *,
                    growth=Fraction(2), k_ramp: Optional[int] = None, case_partition: bool = True) -> None:
    """Raise ``PlanInfeasible`` if a requested ``(n_k, a_k)`` violates an invariant."""
    if k_ramp is None:
        k_ramp = ramp_stage(schedule.d)
    lo, hi = a_window(n, k, state, schedule.angle_data[k], Fraction(t), option, k_ramp,
                      Fraction(growth), case_partition)
    if not lo <= a <= hi:
        raise PlanInfeasible(f"(n_{k}, a_{k}) = ({n}, {a}) violates the plan invariants", stage=k)


# ---------------------------------------------------------------------------
# Shape-driven planning
#
# All pieces of a stage are translates of one parallelepiped whose slab widths
# are 2**-n_j for the d most recent stages, so the number of children per
# parent is known before building: the admissible positions of the new slab
# form an interval of length ``gap - 2**-n_k`` on the new line.


def slab_direction(schedule: LineSchedule, j: int) -> Direction:
    """Direction of the slab created at stage ``j``; virtual cube slabs for ``j <= 0``."""
    if j >= 1:
        return schedule.line(j)
    return axis(schedule.initial_axes[j + schedule.d - 1], schedule.d)


def crossing_gap(schedule: LineSchedule, k: int, widths: Sequence[int]) -> Fraction:
    """Length (scaled, on ``l_k``) of the window in which a thin slab crosses a stage ``k-1`` piece.

    ``widths`` are ``n_{k-d}, ..., n_{k-1}`` (zero for virtual stages).
    """
    d = schedule.d
    cand = [slab_direction(schedule, j) for j in range(k - d + 1, k)] + [schedule.line(k)]
    w = dual_coefficients(cand, slab_direction(schedule, k - d).components)
    spread = sum(abs(wi) * Fraction(1, 1 << widths[i + 1]) for i, wi in enumerate(w[:-1]))
    return (Fraction(1, 1 << widths[0]) - spread) / abs(w[-1])


def sandwich_holds(schedule: LineSchedule, k: int, widths: Sequence[int]) -> bool:
    """Opposite-end gap of a stage ``k-1`` piece on ``l_k`` against its oldest width.

    The metric gap ``gap / |l_k|`` must lie between ``2^-alpha`` times the
    metric width ``2^-n_{k-d} / |v|`` of the oldest slab and that width;
    compared through squares.
    """
    gap = crossing_gap(schedule, k, widths)
    if gap <= 0:
        return False
    metric_sq = gap * gap / schedule.line(k).norm_sq
    width_sq = Fraction(1, (1 << (2 * widths[0])) * slab_direction(schedule, k - schedule.d).norm_sq)
    return width_sq / (1 << (2 * schedule.angle_data[k].alpha)) <= metric_sq <= width_sq


def edge_alpha(cos_sq: Fraction) -> int:
    """Least ``alpha`` with ``4**-alpha < cos^2`` (strict: the gap only tends to the edge projection)."""
    alpha = 0
    while Fraction(1, 4 ** alpha) >= cos_sq:
        alpha += 1
    return alpha


def edge_bound_holds(schedule: LineSchedule, k: int, widths: Sequence[int]) -> bool:
    """Gap against the long edge ``L`` of a stage ``k-1`` piece: ``2^-alpha_e L <= gap <= L``.

    ``alpha_e`` comes from the angle between ``l_k`` and the edge itself.
    """
    d = schedule.d
    dirs = [slab_direction(schedule, j) for j in range(k - d, k)]
    inv = inverse_matrix(dirs)
    edge = [inv[i][0] for i in range(d)]
    line = schedule.line(k)
    ip = dot(line.components, edge)
    if ip == 0:
        return False
    edge_sq = sum(x * x for x in edge)
    cos_sq = ip * ip / (edge_sq * line.norm_sq)
    gap = crossing_gap(schedule, k, widths)
    if gap <= 0:
        return False
    metric_sq = gap * gap / line.norm_sq
    length_sq = edge_sq / (1 << (2 * widths[0]))
    return length_sq / (1 << (2 * edge_alpha(cos_sq))) <= metric_sq <= length_sq


def sandwich_attainable(schedule: LineSchedule, k: int) -> bool:
    """Whether the gap bound can hold at stage ``k`` once the newer slabs are thin enough."""
    if k <= schedule.d:
        return False
    return sandwich_holds(schedule, k, (0,) + (64,) * (schedule.d - 1))


def child_bounds(gap: Fraction, n: int, a: int) -> tuple:
    """``(min, max, log2 mean)`` children per parent for scales ``(n, a)``.

    ``min``/``max`` range over every parent offset; the mean averages the offsets.
    """
    length = gap * (1 << n) - 1  # admissible left endpoints, in units of 2**-n
    if length <= 0:
        return 0, 0, -math.inf
    g = math.floor(length)
    step = 1 << a
    return g // step, -(-(g + 1) // step), _log2(length) - a


def _log2(x: Fraction) -> float:
    return math.log2(x.numerator) - math.log2(x.denominator)


RATIO_TOLERANCES = (0.05, 0.1, 0.2, 0.35, None)
DENSE_SPAN = 16


def _n_candidates(n_lo: int, n_limit: int) -> list:
    """Every ``n`` in a window above ``n_lo``, then a geometric tail."""
    out = list(range(n_lo, min(n_lo + DENSE_SPAN, n_limit + 1)))
    n = n_lo + DENSE_SPAN
    while n <= n_limit:
        out.append(n)
        n = n + max(1, n // 2)
    return out


MAX_STATES = 1200


def _thin(layer: dict) -> dict:
    """Keep the states with least ``m`` and the states with least ``a``, half each."""
    by_m = sorted(layer, key=lambda W: (min(v[0] for v in layer[W].values()), W))
    by_a = sorted(layer, key=lambda W: (min(layer[W]), min(v[0] for v in layer[W].values()), W))
    keep = set(by_m[:MAX_STATES // 2])
    for W in by_a:
        if len(keep) >= MAX_STATES:
            break
        keep.add(W)
    return {W: layer[W] for W in layer if W in keep}


def _search(schedule: LineSchedule, plan: ParameterPlan, start: int, widths0: tuple, a0: int,
            m0: float, cap: float, tol: Optional[float]):
    """Dynamic program over ``(last d scales, a)`` keeping the least ``m`` per state.

    ``m`` is an upper bound on the true ``m_k``: it assumes every parent gets
    the largest possible number of children.  Returns the path, or the first
    stage at which no state survives.
    """
    d = schedule.d
    k_ramp = plan.k_ramp if plan.k_ramp is not None else ramp_stage(d)
    t = float(plan.t)
    layer = {widths0: {a0: (m0, None)}}
    layers = [layer]
    for k in range(start, plan.depth + 1):
        angle = schedule.angle_data[k]
        part = plan.partitioned(k)
        ramped = k <= k_ramp
        check_ratio = tol is not None and schedule.entry(k).is_user and not ramped
        a_cap = a_floor = None  # option bounds a <= n*p/q or a >= n*p/q
        if not ramped and plan.option == CAPACITY:
            a_cap = 1 - plan.t - Fraction(1, k)
        elif not ramped and plan.option == MEASURE_ZERO:
            a_floor = 1 - plan.t + Fraction(1, k)
        sandwich = sandwich_attainable(schedule, k)
        new = {}
        for W, amap in layer.items():
            gap = crossing_gap(schedule, k, W)
            if gap <= 0 or (sandwich and not sandwich_holds(schedule, k, W)):
                continue
            if k > d and not edge_bound_holds(schedule, k, W):
                continue
            gp, gq = gap.numerator, gap.denominator
            log_gq = math.log2(gq)
            aps = sorted(amap)
            best = []  # best[i]: least m over aps[:i+1], with its a
            for ap in aps:
                m = amap[ap][0]
                best.append((m, ap) if not best or m < best[-1][0] else best[-1])
            m_min = best[-1][0]
            n_lo = max(W[-1] + 1, math.ceil(plan.growth * W[-1]), 2)
            W2_base = W[1:]
            for n in _n_candidates(n_lo, plan.n_limit):
                top = (gp << n) - gq  # length of admissible left endpoints is top / gq
                if top <= 0:
                    continue
                lf = top // gq
                log_len = math.log2(top) - log_gq
                a_hi = min(n - W[0] - angle.alpha - 1, n - 1, lf.bit_length() - 1)
                if part:
                    a_hi = min(a_hi, n - W[-1] - 1)
                a_lo = max(k + 1, aps[0] + 1, math.floor(log_len + m_min - cap))
                if a_cap is not None:
                    a_hi = min(a_hi, n * a_cap.numerator // a_cap.denominator)
                elif a_floor is not None:
                    a_lo = max(a_lo, -(-n * a_floor.numerator // a_floor.denominator))
                if a_lo > a_hi:
                    continue
                W2 = W2_base + (n,)
                for a in range(a_hi, a_lo - 1, -1):
                    i = bisect.bisect_left(aps, a) - 1
                    if i < 0:
                        continue
                    m, ap = best[i]
                    if math.ceil(2 ** m - 1e-9) >= 1 << (a - 1):
                        continue  # a_k > m_{k-1} + 1
                    cmax = -(-(lf + 1) >> a)
                    if k > d:
                        excess = n - a - W[0]
                        if excess - math.log2(cmax) < -angle.M or excess - math.log2(lf >> a) > angle.M:
                            continue
                    m2 = m + math.log2(cmax)  # every parent has at most cmax children
                    if m2 > cap:
                        break
                    if check_ratio and abs(m2 / n - t) > tol:
                        continue
                    slot = new.setdefault(W2, {})
                    if a not in slot or m2 < slot[a][0]:
                        slot[a] = (m2, (W, ap))
        if not new:
            return k
        if len(new) > MAX_STATES:
            new = _thin(new)
        layer = new
        layers.append(layer)
    W, a = min(((W, a) for W, amap in layer.items() for a in amap), key=lambda wa: (layer[wa[0]][wa[1]][0], wa))
    path = []
    for lay in reversed(layers[1:]):
        path.append((W[-1], a))
        W, a = lay[W][a][1]
    return path[::-1]


def plan_horizon(schedule: LineSchedule, plan: ParameterPlan, start: int = 1,
                 prefix: Sequence = (), count_now: int = 1) -> list:
    """Search ``(n_k, a_k)``, ``k = start..depth``, continuing a built prefix.

    ``prefix`` lists the ``(n_j, a_j)`` already built; ``count_now`` is the
    piece count of stage ``start - 1``.  Predicted counts stay under
    ``max_pieces``, every plan invariant holds, and the counting recursion
    stays inside ``[-M_k, M_k]``.  Past the ramp, user-line stages must keep
    ``|m_k / n_k - t|`` within the first feasible tolerance of
    ``RATIO_TOLERANCES``; among feasible plans the one with fewest pieces wins.
    """
    if plan.depth is None:
        raise PlanInfeasible("search planning needs a depth")
    cap = math.log2(0.9 * (plan.max_pieces if plan.max_pieces is not None else 1 << 20))
    widths0 = ((0,) * schedule.d + tuple(n for n, _ in prefix))[-schedule.d:]
    a0 = prefix[-1][1] if prefix else 0
    reached = start
    for tol in RATIO_TOLERANCES:
        path = _search(schedule, plan, start, widths0, a0, math.log2(count_now), cap, tol)
        if not isinstance(path, int):
            return path
        reached = max(reached, path)
    raise PlanInfeasible(f"stage {reached}: no admissible plan for stages {start}..{plan.depth} "
                         f"under the piece budget", stage=reached)

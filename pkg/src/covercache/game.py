"""Best-response dynamics for the content placement game.

Each cache greedily minimizes its local miss given its neighbours'
contents. The best response is a threshold rule: rank files by
popularity times exposure and keep the top ``capacity`` of them. The
network miss probability is an exact potential for these moves, so the
dynamics terminate at a Nash placement in finitely many steps.

Two schedules are provided: round-robin (caches visited cyclically) and
uniform-random draws. For the random schedule two stopping rules exist:

* ``"flags"`` (default): per-cache improvement flags; a run stops once
  every cache has been re-verified as non-improving since the most
  recent accepted change anywhere, which guarantees the terminal
  placement is a Nash equilibrium;
* ``"consecutive"``: stop after ``n_caches`` consecutive non-improving
  draws.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .catalog import Popularity
from .errors import EnumerationCapError, PlacementError
from .placement import OBJ_TOL, MissEngine, Placement, exposure, local_miss
from .topology import CellTable, Topology

DEFAULT_STEP_CAP = 10**6
DEFAULT_ENUMERATION_CAP = 200_000

TERMINATED_CONVERGED = "full-round-no-improvement"
TERMINATED_STEP_CAP = "step-cap"


@dataclass(frozen=True)
class Schedule:
    """Cache visiting order: ``round-robin`` or ``uniform-random``."""

    kind: str = "round-robin"
    seed: int = 0
    stop_rule: str = "flags"  # random kind only: "flags" | "consecutive"

    def __post_init__(self):
        if self.kind not in ("round-robin", "uniform-random"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.stop_rule not in ("flags", "consecutive"):
            raise ValueError(f"unknown stop rule {self.stop_rule!r}")


@dataclass
class StepRecord:
    """One cache-update attempt in a dynamics trace."""

    step: int
    cache: int  # 1-based id
    f_before: float
    f_after: float
    changed: bool
    swapped_out: np.ndarray | None = None
    swapped_in: np.ndarray | None = None
    q_out: np.ndarray | None = None
    q_in: np.ndarray | None = None
    # annealing extras; None for plain best-response runs
    temperature: float | None = None
    tau: float | None = None
    accepted: bool | None = None
    proposal_kind: str | None = None

    @property
    def improvement(self) -> float:
        return self.f_before - self.f_after


@dataclass
class DynamicsTrace:
    """Ordered record of an algorithm run plus its terminal placement."""

    steps: list = field(default_factory=list)
    placement: Placement | None = None
    reason: str = ""
    f_initial: float = 0.0
    f_final: float = 0.0
    # annealing summary: best incumbent seen along the chain
    best_f: float | None = None
    best_placement: Placement | None = None

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def improvements(self) -> np.ndarray:
        return np.array([s.improvement for s in self.steps], dtype=np.float64)


def save_trace_csv(trace: DynamicsTrace, path) -> None:
    """Write `step,cache,f_before,f_after,changed` rows; annealing runs
    carry the extra `temperature,tau,accepted,proposal_kind` columns."""
    annealing = any(s.temperature is not None or s.tau is not None for s in trace.steps)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        header = "step,cache,f_before,f_after,changed"
        if annealing:
            header += ",temperature,tau,accepted,proposal_kind"
        fh.write(header + "\n")
        for s in trace.steps:
            row = f"{s.step},{s.cache},{s.f_before!r},{s.f_after!r},{int(s.changed)}"
            if annealing:
                temp = "" if s.temperature is None else repr(s.temperature)
                tau = "" if s.tau is None else repr(s.tau)
                acc = "" if s.accepted is None else int(s.accepted)
                kind = s.proposal_kind or ""
                row += f",{temp},{tau},{acc},{kind}"
            fh.write(row + "\n")


def select_top_k(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties to the lower index, sorted."""
    scores = np.asarray(scores, dtype=np.float64)
    if k > scores.size:
        raise PlacementError(f"cannot select {k} of {scores.size} files")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def best_response(
    placement: Placement,
    m: int,
    cells: CellTable,
    pop: Popularity,
    capacity: int | None = None,
) -> np.ndarray:
    """Best-response row for cache ``m``: top-capacity files by score.

    Scores are popularity times exposure. The incumbent row is returned
    unchanged whenever it already achieves the optimal local miss
    within 1e-12 (ties never force a change). The search is restricted
    to a provably sufficient candidate prefix of the catalog, so the
    cost does not grow with the catalog size.
    """
    capacity = placement.capacity if capacity is None else capacity
    if capacity is None:
        raise PlacementError("best response needs a capacity")
    if capacity > placement.n_files:
        raise PlacementError("capacity exceeds catalog size")
    engine = MissEngine(cells, pop, placement)
    row, _, _ = engine.best_response(m - 1)
    return np.array(row)


def brute_force_best_response(
    placement: Placement,
    m: int,
    cells: CellTable,
    pop: Popularity,
    capacity: int | None = None,
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP,
) -> np.ndarray:
    """Exact best response by enumerating every capacity-subset.

    Test oracle: evaluates the local miss of each subset directly from
    its definition (plain Python products over cells), independent of
    the vectorized threshold path. Ties resolve to the lexicographically
    smallest subset. Intractable sizes raise
    :class:`EnumerationCapError`.
    """
    capacity = placement.capacity if capacity is None else capacity
    n_files = placement.n_files
    n_subsets = 1
    for i in range(capacity):
        n_subsets = n_subsets * (n_files - i) // (i + 1)
    if n_subsets > enumeration_cap:
        raise EnumerationCapError(
            f"C({n_files},{capacity}) = {n_subsets} exceeds cap {enumeration_cap}"
        )
    a = pop.probs
    m_idx = m - 1
    # exposures computed naively: explicit loop over cells containing m
    q = [0.0] * n_files
    for key, p in cells.sorted_items():
        if m not in key:
            continue
        others = [l - 1 for l in key if l != m]
        for j in range(n_files):
            surv = 1.0
            for l_idx in others:
                if placement.stores(l_idx + 1, j):
                    surv = 0.0
                    break
            q[j] += p * surv
    best_set = None
    best_value = None
    for subset in itertools.combinations(range(n_files), capacity):
        value = 0.0
        inside = set(subset)
        for j in range(n_files):
            if j not in inside:
                value += a[j] * q[j]
        if best_value is None or value < best_value:
            best_value = value
            best_set = subset
    return np.array(best_set, dtype=np.int64)


def run_dynamics(
    placement: Placement | None,
    topology: Topology,
    pop: Popularity,
    capacity: int,
    schedule: Schedule = Schedule(),
    step_cap: int = DEFAULT_STEP_CAP,
    epsilon: float = 0.0,
) -> DynamicsTrace:
    """Iterated best responses until no cache can improve.

    ``placement=None`` starts from the standard initialization (every
    cache stores the most popular ``capacity`` files). A step counts as
    an improvement only when the row changed and the local miss
    strictly decreased beyond max(1e-12, ``epsilon``); setting a
    positive ``epsilon`` turns the stopping rule into an epsilon-Nash
    criterion. Reaching ``step_cap`` flags the trace rather than
    raising.
    """
    cells = topology.require_cells()
    if placement is None:
        placement = Placement.top_k(topology.n_sites, pop.n_files, capacity)
    engine = MissEngine(cells, pop, placement)
    trace = DynamicsTrace(f_initial=engine.f)
    tol = max(OBJ_TOL, epsilon)
    n = topology.n_sites
    step = 0

    def attempt(m_idx: int) -> bool:
        nonlocal step
        row, improvement, detail = engine.best_response(m_idx)
        f_before = engine.f
        improved = improvement > tol
        if improved:
            engine.apply(m_idx, row, -improvement)
        rec = StepRecord(
            step=step,
            cache=m_idx + 1,
            f_before=f_before,
            f_after=engine.f,
            changed=improved,
        )
        if improved and detail is not None:
            rec.swapped_out = detail["swapped_out"]
            rec.swapped_in = detail["swapped_in"]
            rec.q_out = detail["q_out"]
            rec.q_in = detail["q_in"]
        trace.steps.append(rec)
        step += 1
        return improved

    reason = TERMINATED_STEP_CAP
    if schedule.kind == "round-robin":
        while step < step_cap:
            round_improved = False
            for m_idx in range(n):
                if step >= step_cap:
                    break
                round_improved |= attempt(m_idx)
            else:
                if not round_improved:
                    reason = TERMINATED_CONVERGED
                    break
                continue
            break
    else:
        rng = np.random.default_rng(schedule.seed)
        if schedule.stop_rule == "flags":
            unverified = set(range(n))
            while unverified and step < step_cap:
                m_idx = int(rng.integers(n))
                if attempt(m_idx):
                    unverified |= {int(l) for l in engine.ca.neighbors_idx(m_idx)}
                unverified.discard(m_idx)
            if not unverified:
                reason = TERMINATED_CONVERGED
        else:
            quiet = 0
            while quiet < n and step < step_cap:
                m_idx = int(rng.integers(n))
                quiet = 0 if attempt(m_idx) else quiet + 1
            if quiet >= n:
                reason = TERMINATED_CONVERGED

    trace.placement = engine.placement()
    trace.reason = reason
    trace.f_final = engine.f
    return trace


def is_nash(
    placement: Placement,
    topology: Topology,
    pop: Popularity,
    capacity: int | None = None,
    method: str = "threshold",
    tol: float = OBJ_TOL,
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP,
) -> bool:
    """Whether no single cache can lower its local miss by more than ``tol``.

    ``method="threshold"`` checks every cache against its threshold
    best response; ``method="brute-force"`` enumerates all alternative
    rows per cache (bounded by ``enumeration_cap``).
    """
    cells = topology.require_cells()
    capacity = placement.capacity if capacity is None else capacity
    if method == "threshold":
        engine = MissEngine(cells, pop, placement)
        for m_idx in range(placement.n_caches):
            n_cand, q, scores, threshold_set = engine._scores(m_idx)
            incumbent = engine.row(m_idx)
            extra = incumbent[incumbent >= n_cand]
            inc_score = float(scores[incumbent[incumbent < n_cand]].sum())
            if extra.size:
                inc_score += float((pop.probs[extra] * engine.q(m_idx, extra)).sum())
            if float(scores[threshold_set].sum()) - inc_score > tol:
                return False
        return True
    if method == "brute-force":
        for m in range(1, placement.n_caches + 1):
            current = local_miss(placement, m, cells, pop)
            row = brute_force_best_response(
                placement, m, cells, pop, capacity, enumeration_cap
            )
            alt = local_miss(placement.with_row(m, row), m, cells, pop)
            if current - alt > tol:
                return False
        return True
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class ImprovementBound:
    """Guaranteed minimum decrease per improving step at a placement state.

    ``epsilon_lower`` is the smallest gap between any two distinct
    popularity-times-exposure scores at the same cache; any improving
    single-file swap decreases the objective by at least this much.
    ``degenerate`` flags exact score ties (the bound collapses to 0,
    e.g. under equal popularities on symmetric cells). ``min_cell_gap``
    and ``min_popularity`` are the geometric and popularity components
    of the bound, reported for topologies whose cell masses take
    finitely many values.
    """

    epsilon_lower: float
    min_cell_gap: float
    min_popularity: float
    degenerate: bool


def min_improvement_bound(
    placement: Placement, cells: CellTable, pop: Popularity
) -> ImprovementBound:
    """Evaluate the per-improvement lower bound at a concrete placement."""
    eps = np.inf
    for m in range(1, placement.n_caches + 1):
        scores = pop.probs * exposure(placement, m, cells)
        scores = np.sort(scores)
        gaps = np.abs(np.diff(scores))
        if gaps.size:
            eps = min(eps, float(gaps.min()))
    probs = np.array([p for _, p in cells.sorted_items()])
    distinct = np.sort(probs)
    cell_gaps = np.abs(np.diff(distinct))
    cell_gaps = cell_gaps[cell_gaps > 0]
    min_cell_gap = float(cell_gaps.min()) if cell_gaps.size else 0.0
    if not np.isfinite(eps):
        eps = 0.0
    return ImprovementBound(
        epsilon_lower=float(eps),
        min_cell_gap=min_cell_gap,
        min_popularity=float(pop.probs.min()),
        degenerate=(eps == 0.0),
    )


def epsilon_nash_stop(trace: DynamicsTrace, epsilon: float) -> int:
    """First step index after which no step improves by more than ``epsilon``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    improvements = trace.improvements()
    last_big = -1
    for i, imp in enumerate(improvements):
        if imp > epsilon:
            last_big = i
    return last_big + 1


def check_improvement_bound(trace: DynamicsTrace, pop: Popularity, tol: float = OBJ_TOL) -> bool:
    """Verify each strict improvement against the swapped-pair bound.

    Every improving step swaps equally many files out and in; pairing
    the k-th best inserted file with the k-th best removed one, the
    step's decrease must be at least the smallest pair score difference
    |a_i q_m(i) - a_j q_m(j)|, up to ``tol``. The step records carry the
    exposures measured when the move was taken.
    """
    a = pop.probs
    for rec in trace.steps:
        if not rec.changed or rec.swapped_in is None or not rec.swapped_in.size:
            continue
        s_in = np.sort(a[rec.swapped_in] * rec.q_in)[::-1]
        s_out = np.sort(a[rec.swapped_out] * rec.q_out)[::-1]
        pair_min = float(np.min(np.abs(s_in - s_out)))
        if rec.improvement < pair_min - tol:
            return False
    return True

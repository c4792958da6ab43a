"""Simulated-annealing escapes from local optima of the placement game.

Two variants:

* stochastic (SSA): a Metropolis chain over binary placements. Each
  step picks a cache uniformly, proposes its best response with
  probability ``br_prob`` and otherwise a uniform random
  capacity-subset (resampled if it collides with the best response),
  then accepts with probability exp(-max(delta, 0) / T_t) under the
  logarithmic cooling T_t = depth / log(t + 1).
* deterministic (DSA): rows live in the box [tau, 1 - tau]; the
  per-cache optimum is a closed-form three-level row. The floor tau
  decays toward 0 each step; once the dynamics settle the rows are
  rounded to the nearest integers, which must give exactly-capacity
  binary rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import Popularity
from .errors import PlacementError, RoundingError
from .game import DEFAULT_STEP_CAP, DynamicsTrace, StepRecord, TERMINATED_CONVERGED, TERMINATED_STEP_CAP
from .placement import OBJ_TOL, CellArrays, MissEngine, Placement
from .topology import CellTable, Topology


@dataclass(frozen=True)
class CoolingSchedule:
    """Logarithmic cooling T_t = depth / log(t + 1), t starting at 1.

    ``depth >= 1`` is the regime with the global-convergence guarantee
    (the objective is a probability, so no local minimum is deeper
    than 1).
    """

    depth: float = 1.0

    def __post_init__(self):
        if self.depth <= 0:
            raise ValueError("depth must be > 0")

    @property
    def convergence_guaranteed(self) -> bool:
        return self.depth >= 1.0

    def temperature(self, t) -> float:
        if t < 1:
            raise ValueError("t starts at 1")
        return self.depth / math.log(t + 1.0)


def acceptance_prob(f_proposal: float, f_current: float, t, cooling: CoolingSchedule) -> float:
    """Metropolis acceptance: 1 for downhill moves, exp(-delta/T_t) uphill."""
    delta = f_proposal - f_current
    if delta <= 0:
        return 1.0
    return math.exp(-delta / cooling.temperature(t))


def random_k_subset(n_files: int, capacity: int, rng) -> np.ndarray:
    """Uniform random capacity-subset as a sorted index array, O(n_files).

    Drawn by a full shuffle (Fisher-Yates under the hood) keeping the
    first ``capacity`` entries. ``rng`` may be a Generator or a seed.
    """
    if capacity < 1:
        raise PlacementError("capacity must be >= 1 (rows sum to the capacity)")
    if capacity > n_files:
        raise PlacementError("capacity exceeds catalog size")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return np.sort(rng.permutation(n_files)[:capacity])


@dataclass(frozen=True)
class SsaConfig:
    """Stochastic-annealing knobs.

    ``br_prob`` is the probability of proposing the cache's best
    response instead of a uniform random subset. ``record="none"``
    skips per-step trace records (the summary fields are still filled),
    which keeps very long chains cheap.
    """

    br_prob: float = 0.9
    cooling: CoolingSchedule = field(default_factory=CoolingSchedule)
    steps: int = 100_000
    seed: int = 0
    record: str = "full"

    def __post_init__(self):
        if not 0.0 < self.br_prob < 1.0:
            raise ValueError("br_prob must lie strictly between 0 and 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.record not in ("full", "none"):
            raise ValueError("record must be 'full' or 'none'")


def run_ssa(
    placement: Placement | None,
    topology: Topology,
    pop: Popularity,
    capacity: int,
    config: SsaConfig,
) -> DynamicsTrace:
    """Run the stochastic-annealing chain for ``config.steps`` steps.

    The trace reports the incumbent's exact binary objective each step,
    updated incrementally per accepted move; ``best_f`` and
    ``best_placement`` track the best incumbent visited, which is the
    value an annealing run returns in practice.
    """
    cells = topology.require_cells()
    if placement is None:
        placement = Placement.top_k(topology.n_sites, pop.n_files, capacity)
    engine = MissEngine(cells, pop, placement)
    rng = np.random.default_rng(config.seed)
    n = topology.n_sites
    n_files = pop.n_files
    trace = DynamicsTrace(f_initial=engine.f)
    best_f = engine.f
    best_rows = engine.snapshot_rows()
    for t in range(1, config.steps + 1):
        m_idx = int(rng.integers(n))
        temperature = config.cooling.temperature(t)
        rho = rng.random()
        br_row, _, _ = engine.best_response(m_idx)
        if rho < config.br_prob:
            proposal = br_row
            kind = "best-response"
        else:
            proposal = random_k_subset(n_files, capacity, rng)
            while np.array_equal(proposal, br_row):
                proposal = random_k_subset(n_files, capacity, rng)
            kind = "random"
        delta = engine.delta_for(m_idx, proposal)
        p_hat = 1.0 if delta <= 0 else math.exp(-delta / temperature)
        mu = rng.random()
        accepted = mu < p_hat
        f_before = engine.f
        changed = False
        if accepted and not np.array_equal(proposal, engine.row(m_idx)):
            engine.apply(m_idx, proposal, delta)
            changed = True
        if engine.f < best_f - 0.0:
            best_f = engine.f
            best_rows = engine.snapshot_rows()
        if config.record == "full":
            trace.steps.append(
                StepRecord(
                    step=t - 1,
                    cache=m_idx + 1,
                    f_before=f_before,
                    f_after=engine.f,
                    changed=changed,
                    temperature=temperature,
                    accepted=accepted,
                    proposal_kind=kind,
                )
            )
    trace.placement = engine.placement()
    trace.reason = TERMINATED_STEP_CAP
    trace.f_final = engine.f
    trace.best_f = best_f
    trace.best_placement = Placement.binary(
        best_rows, n_files=n_files, capacity=capacity
    )
    return trace


@dataclass(frozen=True)
class TauSchedule:
    """Exponentially decaying box floor for DSA.

    ``tau(t)`` falls from ``tau0`` so that it reaches ``tau_at`` at step
    ``at_step``, then keeps decaying until it freezes at ``tau_final``.
    The freeze makes the relaxed rows eventually exactly stationary, so
    the improvement flags can clear.
    """

    tau0: float = 1e-3
    tau_at: float = 1e-6
    at_step: int = 1500
    tau_final: float = 1e-9

    def __post_init__(self):
        if not 0 < self.tau_final <= self.tau_at <= self.tau0 < 0.5:
            raise ValueError("need 0 < tau_final <= tau_at <= tau0 < 0.5")
        if self.at_step < 1:
            raise ValueError("at_step must be >= 1")

    def tau(self, t) -> float:
        value = self.tau0 * (self.tau_at / self.tau0) ** (t / self.at_step)
        return max(value, self.tau_final)


def three_level_row(scores: np.ndarray, capacity: int, tau: float) -> np.ndarray:
    """Optimal box-constrained row: 1-tau on top scores, tau below, one pivot.

    Fills every file to the floor ``tau`` and spends the remaining
    budget raising files toward ``1 - tau`` in score order; the pivot
    file takes whatever fraction is left. Ties in scores resolve to the
    lower file index. The row sums to the capacity exactly (asserted).
    """
    n_files = scores.size
    if not 0 < tau < 0.5:
        raise PlacementError("tau must lie in (0, 0.5)")
    if tau * n_files > capacity or capacity > (1 - tau) * n_files:
        raise PlacementError(
            "box [tau, 1-tau] infeasible for this capacity: need "
            "tau*n_files <= capacity <= (1-tau)*n_files"
        )
    budget = capacity - tau * n_files
    span = 1.0 - 2.0 * tau
    full = int(math.floor(budget / span + 1e-12))
    full = min(full, n_files)
    order = np.argsort(-scores, kind="stable")
    row = np.full(n_files, tau)
    row[order[:full]] = 1.0 - tau
    if full < n_files:
        pivot = budget - full * span + tau
        if not (tau - 1e-9 <= pivot <= 1.0 - tau + 1e-9):
            raise PlacementError(
                f"internal consistency: pivot value {pivot!r} outside [tau, 1-tau]"
            )
        row[order[full]] = min(max(pivot, tau), 1.0 - tau)
    total = float(row.sum())
    if abs(total - capacity) > 1e-9:
        raise PlacementError(f"internal consistency: row sum {total!r} != {capacity}")
    return row


def dsa_best_response(
    placement: Placement,
    m: int,
    cells: CellTable,
    pop: Popularity,
    capacity: int | None = None,
    tau: float | None = None,
) -> np.ndarray:
    """Closed-form relaxed best response for cache ``m`` at floor ``tau``."""
    capacity = placement.capacity if capacity is None else capacity
    tau = placement.tau if tau is None else tau
    if tau is None:
        raise PlacementError("dsa_best_response needs a box floor tau")
    ca = CellArrays(cells, placement.n_caches)
    q = _fractional_exposure(placement.dense(), m - 1, ca)
    return three_level_row(pop.probs * q, capacity, tau)


def _fractional_exposure(dense: np.ndarray, m_idx: int, ca: CellArrays) -> np.ndarray:
    probs_m, _ = ca.masks_without(m_idx)
    q = np.zeros(dense.shape[1])
    for p, c in zip(probs_m, ca.cells_of[m_idx]):
        surv = np.ones(dense.shape[1])
        for l_idx in ca.members[c]:
            if l_idx != m_idx:
                surv *= 1.0 - dense[l_idx]
        q += p * surv
    return q


def _relaxed_miss(dense: np.ndarray, ca: CellArrays, a: np.ndarray) -> float:
    total = 0.0
    for c in range(ca.n_cells):
        surv = np.ones(dense.shape[1])
        for l_idx in ca.members[c]:
            surv *= 1.0 - dense[l_idx]
        total += ca.probs[c] * float(a @ surv)
    return total


def run_dsa(
    topology: Topology,
    pop: Popularity,
    capacity: int,
    schedule: TauSchedule = TauSchedule(),
    seed: int = 0,
    step_cap: int = DEFAULT_STEP_CAP,
) -> tuple:
    """Deterministic annealing from all-zero relaxed rows.

    Per step: draw a cache uniformly, install its three-level optimum at
    the current floor, mark its improvement flag when its local miss
    moved by more than 1e-12, then decay the floor. Stops once every
    cache has been re-verified quiet since the last material change.
    Returns ``(trace, rounded)`` where ``rounded`` is the nearest-integer
    binary placement; rows that do not round to exactly ``capacity``
    files raise :class:`RoundingError` (the floor was not small enough).

    The trace reports the relaxed objective (the multilinear extension
    of the miss probability), which a frozen-floor sweep never
    increases.
    """
    cells = topology.require_cells()
    n = topology.n_sites
    n_files = pop.n_files
    if capacity >= n_files:
        raise PlacementError("DSA needs capacity < n_files (box infeasible otherwise)")
    ca = CellArrays(cells, n)
    a = pop.probs
    dense = np.zeros((n, n_files))
    rng = np.random.default_rng(seed)
    f = _relaxed_miss(dense, ca, a)
    trace = DynamicsTrace(f_initial=f)
    unverified = set(range(n))
    step = 0
    reason = TERMINATED_STEP_CAP
    while step < step_cap:
        if not unverified:
            reason = TERMINATED_CONVERGED
            break
        t = step + 1
        tau = schedule.tau(t)
        m_idx = int(rng.integers(n))
        q = _fractional_exposure(dense, m_idx, ca)
        new_row = three_level_row(a * q, capacity, tau)
        old_row = dense[m_idx]
        d_local = float((a * (old_row - new_row)) @ q)
        f_before = f
        changed = abs(d_local) > OBJ_TOL
        dense[m_idx] = new_row
        f += d_local
        if changed:
            unverified |= {int(l) for l in ca.neighbors_idx(m_idx)}
        unverified.discard(m_idx)
        trace.steps.append(
            StepRecord(
                step=step,
                cache=m_idx + 1,
                f_before=f_before,
                f_after=f,
                changed=changed,
                tau=tau,
            )
        )
        step += 1
    rounded_rows = []
    for i in range(n):
        row = np.nonzero(np.rint(dense[i]) > 0.5)[0]
        if row.size != capacity:
            raise RoundingError(
                f"cache {i + 1} rounds to {row.size} files, expected {capacity}; "
                "decrease the final tau"
            )
        rounded_rows.append(row)
    rounded = Placement.binary(rounded_rows, n_files=n_files, capacity=capacity)
    trace.placement = rounded
    trace.reason = reason
    trace.f_final = f
    return trace, rounded

"""Comparison policies: most-popular, probabilistic placement, Multi-LRU-One.

The probabilistic baseline optimizes independent per-file storage
probabilities for caches deployed as a spatial Poisson process: maximize
sum_j a_j (1 - exp(-b_j * lambda * pi * r^2)) subject to sum_j b_j = K
and 0 <= b_j <= 1, a water-filling problem solved by bisection on the
Lagrange multiplier. Realized placements draw exactly-K subsets with the
optimized marginals via systematic sampling.

Multi-LRU-One is request-driven: a covered user checks all covering
caches; on a hit one uniformly chosen holder is refreshed, on a miss the
file is inserted into one uniformly chosen covering cache with LRU
eviction.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .catalog import Popularity
from .errors import PlacementError, TopologyError
from .placement import Placement
from .topology import Topology

_POSITION_BATCH = 4096


def most_popular_placement(n_caches: int, n_files: int, capacity: int) -> Placement:
    """Every cache stores the ``capacity`` most popular files."""
    return Placement.top_k(n_caches, n_files, capacity)


def probabilistic_marginals(
    pop: Popularity, intensity: float, radius: float, capacity: int, tol: float = 1e-10
) -> np.ndarray:
    """Optimal per-file storage probabilities under Poisson coverage.

    ``intensity * pi * radius**2`` is the mean number of caches covering
    a point. Returns a vector summing to ``capacity``, non-increasing
    whenever the popularity is. ``capacity >= n_files`` degenerates to
    all-ones.
    """
    c = intensity * np.pi * radius**2
    if c <= 0:
        raise PlacementError("intensity * pi * r^2 must be > 0")
    a = pop.probs
    n_files = a.size
    if capacity >= n_files:
        return np.ones(n_files)
    if capacity < 1:
        raise PlacementError("capacity must be >= 1")
    positive = a > 0
    if int(positive.sum()) < capacity:
        raise PlacementError("fewer positively requested files than capacity")

    def filled(nu: float) -> np.ndarray:
        b = np.zeros(n_files)
        with np.errstate(divide="ignore"):
            b[positive] = np.log(a[positive] * c / nu) / c
        return np.clip(b, 0.0, 1.0)

    hi = float(a.max()) * c  # all-zero fill
    lo = hi
    while filled(lo).sum() < capacity:
        lo /= 2.0
        if lo < 1e-300:
            raise PlacementError("bisection failed to bracket the water level")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        total = filled(mid).sum()
        if abs(total - capacity) <= tol:
            lo = hi = mid
            break
        if total > capacity:
            lo = mid
        else:
            hi = mid
    b = filled(0.5 * (lo + hi))
    # exact-sum polish: spread the residual over strictly interior entries
    interior = (b > 0) & (b < 1)
    residual = capacity - b.sum()
    if interior.any():
        b[interior] += residual / interior.sum()
        b = np.clip(b, 0.0, 1.0)
    return b


def sample_probabilistic_placement(
    marginals, n_caches: int, capacity: int, seed: int
) -> Placement:
    """Exactly-``capacity`` subsets per cache with prescribed marginals.

    Systematic (cumulative-interval) sampling: one uniform offset per
    cache selects the files whose cumulative-marginal intervals contain
    the points offset, offset+1, ..., offset+capacity-1. Inclusion
    probability of file j is exactly ``marginals[j]``; caches draw
    independently.
    """
    b = np.asarray(marginals, dtype=np.float64)
    if abs(b.sum() - capacity) > 1e-9:
        raise PlacementError(f"marginals sum to {b.sum()!r}, expected {capacity}")
    if np.any(b < 0) or np.any(b > 1 + 1e-12):
        raise PlacementError("marginals must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(b)
    cum[-1] = capacity  # guard against float drift at the top end
    rows = []
    for _ in range(n_caches):
        points = rng.random() + np.arange(capacity)
        row = np.searchsorted(cum, points, side="right")
        row = np.minimum(row, b.size - 1)
        if np.unique(row).size != capacity:
            raise PlacementError("systematic sampling produced a duplicate file")
        rows.append(row)
    return Placement.binary(rows, n_files=b.size, capacity=capacity)


def _covered_position_batches(topology: Topology, rng):
    """Yield arrays of positions uniform on the covered region (rejection)."""
    geom = topology.geometry
    while True:
        xs = rng.random(_POSITION_BATCH) * geom.width
        ys = rng.random(_POSITION_BATCH) * geom.height
        covered = geom.covering_matrix(xs, ys, topology.sites)
        keep = covered.any(axis=1)
        if keep.any():
            yield xs[keep], ys[keep], covered[keep]


def user_position_sampler(topology: Topology, seed: int):
    """Infinite stream of user positions uniform on the covered region."""
    if topology.cell_table is not None and topology.cell_table.covered_fraction == 0:
        raise TopologyError("no covered area to sample from")
    rng = np.random.default_rng(seed)
    for xs, ys, _ in _covered_position_batches(topology, rng):
        for x, y in zip(xs, ys):
            yield float(x), float(y)


def simulate_multi_lru_one(
    topology: Topology,
    pop: Popularity,
    capacity: int,
    n_requests: int,
    warmup_fraction: float = 0.5,
    seed: int = 0,
):
    """Trace-driven Multi-LRU-One simulation from empty caches.

    Returns ``(hit_ratio, cumulative)`` where ``hit_ratio`` counts the
    requests after the warmup window and ``cumulative`` is the running
    hit ratio from the start, one entry per request.
    """
    if n_requests < 1:
        raise ValueError("n_requests must be >= 1")
    if not 0 <= warmup_fraction < 1:
        raise ValueError("warmup_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    a = pop.probs
    cum_pop = np.cumsum(a)
    cum_pop[-1] = 1.0
    caches = [OrderedDict() for _ in range(topology.n_sites)]
    warmup = int(np.floor(n_requests * warmup_fraction))
    hits_total = 0
    hits_measured = 0
    cumulative = np.empty(n_requests)
    done = 0
    batches = _covered_position_batches(topology, rng)
    while done < n_requests:
        _, _, covered = next(batches)
        files = np.searchsorted(cum_pop, rng.random(covered.shape[0]), side="right")
        for row, j in zip(covered, files):
            if done == n_requests:
                break
            covering = np.nonzero(row)[0]
            holders = [c for c in covering if j in caches[c]]
            if holders:
                hits_total += 1
                if done >= warmup:
                    hits_measured += 1
                target = holders[int(rng.integers(len(holders)))]
                caches[target].move_to_end(j)
            else:
                target = covering[int(rng.integers(covering.size))]
                lru = caches[target]
                if len(lru) >= capacity:
                    lru.popitem(last=False)
                lru[j] = None
            done += 1
            cumulative[done - 1] = hits_total / done
    measured = n_requests - warmup
    hit_ratio = hits_measured / measured if measured else 0.0
    return hit_ratio, cumulative


def simulate_static_placement(
    placement: Placement,
    topology: Topology,
    pop: Popularity,
    n_requests: int,
    seed: int = 0,
) -> tuple:
    """Request-level hit-ratio estimate for a fixed placement.

    Cross-validates the analytic objective: the expected hit ratio is
    one minus the evaluated miss probability. Returns
    ``(hit_ratio, standard_error)``.
    """
    rng = np.random.default_rng(seed)
    cum_pop = np.cumsum(pop.probs)
    cum_pop[-1] = 1.0
    stores = [set(int(j) for j in placement.row(m)) for m in range(1, placement.n_caches + 1)]
    hits = 0
    done = 0
    batches = _covered_position_batches(topology, rng)
    while done < n_requests:
        _, _, covered = next(batches)
        files = np.searchsorted(cum_pop, rng.random(covered.shape[0]), side="right")
        for row, j in zip(covered, files):
            if done == n_requests:
                break
            if any(j in stores[c] for c in np.nonzero(row)[0]):
                hits += 1
            done += 1
    ratio = hits / n_requests
    se = float(np.sqrt(max(ratio * (1 - ratio), 1e-12) / n_requests))
    return ratio, se

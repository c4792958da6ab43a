"""Independent reference implementations used only by the test suite.

Everything here is written as plain Python loops straight from the
defining formulas, deliberately sharing no code with the package's
vectorized paths.
"""

import numpy as np

from covercache import CellTable, Placement, Popularity


def naive_miss(placement, cells, pop):
    """Miss probability: iterate cells and files, product over members."""
    dense = placement.dense()
    total = 0.0
    for key, p in sorted(cells.cells.items(), key=lambda kv: tuple(sorted(kv[0]))):
        for j in range(pop.n_files):
            surv = 1.0
            for m in key:
                surv *= 1.0 - dense[m - 1, j]
            total += pop.probs[j] * p * surv
    return total


def naive_exposure(placement, m, cells, j):
    """Exposure of cache m (1-based) at file j, straight from its definition."""
    dense = placement.dense()
    q = 0.0
    for key, p in cells.cells.items():
        if m not in key:
            continue
        surv = 1.0
        for l in key:
            if l != m:
                surv *= 1.0 - dense[l - 1, j]
        q += p * surv
    return q


def naive_local_miss(placement, m, cells, pop):
    dense = placement.dense()
    total = 0.0
    for j in range(pop.n_files):
        total += pop.probs[j] * (1.0 - dense[m - 1, j]) * naive_exposure(placement, m, cells, j)
    return total


def random_cell_table(rng, n_caches, max_cells=12):
    """Random positive-mass table over random non-empty subsets.

    Always includes every singleton so each cache has coverage mass.
    """
    keys = set(frozenset([m]) for m in range(1, n_caches + 1))
    n_extra = int(rng.integers(0, max_cells + 1))
    for _ in range(n_extra):
        size = int(rng.integers(2, n_caches + 1)) if n_caches > 1 else 1
        key = frozenset(int(i) + 1 for i in rng.choice(n_caches, size=size, replace=False))
        keys.add(key)
    masses = rng.random(len(keys)) + 0.05
    masses /= masses.sum()
    return CellTable(
        {key: float(p) for key, p in zip(sorted(keys, key=lambda k: tuple(sorted(k))), masses)},
        covered_fraction=1.0,
    )


def random_popularity(rng, n_files):
    weights = np.sort(rng.random(n_files) + 1e-3)[::-1]
    return Popularity(weights / weights.sum())


def random_binary_placement(rng, n_caches, n_files, capacity):
    rows = [np.sort(rng.choice(n_files, size=capacity, replace=False)) for _ in range(n_caches)]
    return Placement.binary(rows, n_files=n_files, capacity=capacity)

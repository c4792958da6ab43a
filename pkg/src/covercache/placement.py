"""Placement matrices and the miss-probability machinery.

Conventions used across the package:

* cache identifiers ``m`` are 1-based and match ``CacheSite.id`` and the
  cell-table keys; file indices are 0-based (CSV exports are 1-based).
* the network miss probability of a placement ``B`` is

      f(B) = sum_j a_j * sum_s p_s * prod_{l in s} (1 - b_j^(l)),

  iterated over the stored, positive-mass cells only, never over the
  full power set of caches.
* the local miss of cache ``m`` is the miss mass over m's own coverage
  region, f_m(B) = sum_j a_j (1 - b_j^(m)) q_m(j), with the exposure

      q_m(j) = sum_{s containing m} p_s * prod_{l in s, l != m} (1 - b_j^(l)).

  It is kept unnormalized (a mass, not a conditional probability); best
  responses are invariant to positive scaling of it.

Binary placements are evaluated through packed uint64 membership masks,
which keeps the inner products exact, deterministic and fast for large
catalogs. Fractional (relaxed) placements use the multilinear products
directly.
"""

from __future__ import annotations

import csv

import numpy as np

from .catalog import FileSizes, Popularity
from .errors import PlacementError
from .topology import CellTable

#: absolute tolerance for objective comparisons throughout the package
OBJ_TOL = 1e-12

_ROWSUM_TOL = 1e-9


class Placement:
    """Which files each cache stores.

    ``mode="binary"`` rows are file-index sets; when ``capacity`` is an
    int every row must contain exactly that many files (the game's
    slot model). ``capacity=None`` admits free 0/1 rows, used for
    size-constrained fills. ``mode="relaxed"`` rows are dense vectors in
    ``[tau, 1-tau]`` summing to capacity; all-zero rows are admitted for
    caches that have not been updated yet.

    Placements are immutable; :meth:`with_row` returns a new instance.
    """

    __slots__ = ("mode", "n_caches", "n_files", "capacity", "tau", "_rows", "_dense")

    def __init__(self, *, mode, n_caches, n_files, capacity, tau, rows, dense):
        self.mode = mode
        self.n_caches = n_caches
        self.n_files = n_files
        self.capacity = capacity
        self.tau = tau
        self._rows = rows
        self._dense = dense

    # -- constructors ---------------------------------------------------

    @classmethod
    def binary(cls, rows, n_files: int, capacity: int | None):
        """Binary placement from per-cache file-index collections."""
        rows = [np.unique(np.asarray(list(r), dtype=np.int64)) for r in rows]
        if not rows:
            raise PlacementError("placement needs at least one cache row")
        if capacity is not None:
            if capacity < 1:
                raise PlacementError("capacity must be >= 1")
            if capacity > n_files:
                raise PlacementError(
                    f"capacity {capacity} exceeds catalog size {n_files}"
                )
        for i, row in enumerate(rows):
            if row.size and (row[0] < 0 or row[-1] >= n_files):
                raise PlacementError(f"cache {i + 1}: file index out of range")
            if capacity is not None and row.size != capacity:
                raise PlacementError(
                    f"cache {i + 1}: row stores {row.size} files, capacity is {capacity}"
                )
        for row in rows:
            row.setflags(write=False)
        return cls(
            mode="binary",
            n_caches=len(rows),
            n_files=n_files,
            capacity=capacity,
            tau=None,
            rows=tuple(rows),
            dense=None,
        )

    @classmethod
    def top_k(cls, n_caches: int, n_files: int, capacity: int):
        """Every cache stores the ``capacity`` most popular files."""
        return cls.binary(
            [np.arange(capacity)] * n_caches, n_files=n_files, capacity=capacity
        )

    @classmethod
    def relaxed(cls, matrix, capacity: int, tau: float):
        """Relaxed placement with box floor ``tau``; zero rows allowed."""
        dense = np.array(matrix, dtype=np.float64)
        if dense.ndim != 2:
            raise PlacementError("relaxed placement must be a 2-D matrix")
        n_caches, n_files = dense.shape
        if not 0 < tau < 0.5:
            raise PlacementError("tau must lie in (0, 0.5)")
        if capacity < 1 or capacity > n_files:
            raise PlacementError("capacity must lie in [1, n_files]")
        if tau * n_files > capacity + _ROWSUM_TOL or capacity > (1 - tau) * n_files + _ROWSUM_TOL:
            raise PlacementError(
                "box [tau, 1-tau] cannot honour the row-sum capacity: need "
                "tau*n_files <= capacity <= (1-tau)*n_files"
            )
        for i, row in enumerate(dense):
            if np.all(row == 0.0):
                continue
            if np.any(row < tau - 1e-15) or np.any(row > 1 - tau + 1e-15):
                raise PlacementError(f"cache {i + 1}: entries outside [tau, 1-tau]")
            if abs(row.sum() - capacity) > _ROWSUM_TOL:
                raise PlacementError(f"cache {i + 1}: row sum {row.sum()!r} != {capacity}")
        dense.setflags(write=False)
        return cls(
            mode="relaxed",
            n_caches=n_caches,
            n_files=n_files,
            capacity=capacity,
            tau=tau,
            rows=None,
            dense=dense,
        )

    # -- accessors ------------------------------------------------------

    def row(self, m: int) -> np.ndarray:
        """Row of cache id ``m``: file indices (binary) or a dense vector."""
        self._check_id(m)
        if self.mode == "binary":
            return self._rows[m - 1]
        return self._dense[m - 1]

    def rows(self):
        if self.mode != "binary":
            raise PlacementError("rows() is only defined for binary placements")
        return self._rows

    def dense(self) -> np.ndarray:
        """Dense (n_caches, n_files) float matrix (copies for binary mode)."""
        if self.mode == "relaxed":
            return self._dense
        out = np.zeros((self.n_caches, self.n_files))
        for i, row in enumerate(self._rows):
            out[i, row] = 1.0
        return out

    def stores(self, m: int, j: int) -> bool:
        self._check_id(m)
        if self.mode == "binary":
            row = self._rows[m - 1]
            pos = np.searchsorted(row, j)
            return bool(pos < row.size and row[pos] == j)
        return self._dense[m - 1, j] > 0.5

    def with_row(self, m: int, new_row) -> "Placement":
        """New placement with cache ``m``'s row replaced (same validation)."""
        self._check_id(m)
        if self.mode == "binary":
            rows = list(self._rows)
            rows[m - 1] = np.asarray(new_row, dtype=np.int64)
            return Placement.binary(rows, n_files=self.n_files, capacity=self.capacity)
        dense = np.array(self._dense)
        dense[m - 1] = np.asarray(new_row, dtype=np.float64)
        return Placement.relaxed(dense, capacity=self.capacity, tau=self.tau)

    def _check_id(self, m: int) -> None:
        if not 1 <= m <= self.n_caches:
            raise PlacementError(f"unknown cache id {m}")

    def __repr__(self) -> str:
        return (
            f"Placement(mode={self.mode!r}, n_caches={self.n_caches}, "
            f"n_files={self.n_files}, capacity={self.capacity})"
        )


def save_placement_csv(placement: Placement, path) -> None:
    """Export stored (cache, file) pairs, both 1-based, binary mode only."""
    if placement.mode != "binary":
        raise PlacementError("CSV export is defined for binary placements only")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("cacheId,fileId\n")
        for m in range(1, placement.n_caches + 1):
            for j in placement.row(m):
                fh.write(f"{m},{int(j) + 1}\n")


def load_placement_csv(path, n_caches: int, n_files: int, capacity: int | None) -> Placement:
    rows = [[] for _ in range(n_caches)]
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["cacheId", "fileId"]:
            raise PlacementError(f"{path}: header must be cacheId,fileId")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                m, j = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise PlacementError(f"{path}: line {lineno}: malformed pair") from None
            if not 1 <= m <= n_caches:
                raise PlacementError(f"{path}: line {lineno}: unknown cache id {m}")
            rows[m - 1].append(j - 1)
    return Placement.binary(rows, n_files=n_files, capacity=capacity)


# -- compiled cell arrays ----------------------------------------------


class CellArrays:
    """Array view of a cell table for vectorized objective math.

    Cells are ordered deterministically (sorted member tuples). Cache
    memberships are packed into ``words`` uint64 lanes so subset tests
    are single bitwise operations.
    """

    __slots__ = (
        "n_caches",
        "n_cells",
        "words",
        "probs",
        "masks",
        "members",
        "cells_of",
        "q_max",
        "_masks_wo",
        "_neighbors",
    )

    def __init__(self, table: CellTable, n_caches: int):
        items = table.sorted_items()
        self.n_caches = n_caches
        self.n_cells = len(items)
        self.words = (n_caches + 63) // 64
        self.probs = np.array([p for _, p in items], dtype=np.float64)
        self.masks = np.zeros((self.n_cells, self.words), dtype=np.uint64)
        self.members = []
        by_cache = [[] for _ in range(n_caches)]
        for c, (key, _) in enumerate(items):
            idx = np.array(sorted(i - 1 for i in key), dtype=np.int64)
            self.members.append(idx)
            for i in idx:
                self.masks[c, i >> 6] |= np.uint64(1) << np.uint64(i & 63)
                by_cache[i].append(c)
        self.cells_of = [np.array(c, dtype=np.int64) for c in by_cache]
        self.q_max = np.array(
            [float(self.probs[c].sum()) for c in self.cells_of], dtype=np.float64
        )
        self._masks_wo = {}
        self._neighbors = None

    def masks_without(self, m_idx: int) -> tuple:
        """(probs, masks) of the cells containing ``m_idx`` with its bit cleared."""
        cached = self._masks_wo.get(m_idx)
        if cached is None:
            rows = self.cells_of[m_idx]
            masks = self.masks[rows].copy()
            masks[:, m_idx >> 6] &= ~(np.uint64(1) << np.uint64(m_idx & 63))
            cached = (self.probs[rows], masks)
            self._masks_wo[m_idx] = cached
        return cached

    def neighbors_idx(self, m_idx: int) -> np.ndarray:
        """0-based indices of caches sharing a cell with ``m_idx`` (self included)."""
        if self._neighbors is None:
            sets = [set((i,)) for i in range(self.n_caches)]
            for idx in self.members:
                for i in idx:
                    sets[i].update(idx)
            self._neighbors = [np.array(sorted(s), dtype=np.int64) for s in sets]
        return self._neighbors[m_idx]


def holder_masks(rows, n_files: int, words: int) -> np.ndarray:
    """Packed (n_files, words) masks: bit ``l`` set when cache ``l`` stores the file."""
    holders = np.zeros((n_files, words), dtype=np.uint64)
    for idx, row in enumerate(rows):
        holders[row, idx >> 6] |= np.uint64(1) << np.uint64(idx & 63)
    return holders


def _blocked_any(masks: np.ndarray, holders: np.ndarray) -> np.ndarray:
    """(n_cells, n_holder_rows) bool: does the mask intersect the holder set."""
    n_cells = masks.shape[0]
    n_rows = holders.shape[0]
    out = np.empty((n_cells, n_rows), dtype=bool)
    # chunk the holder axis so the (cells, files, words) temporary stays small
    chunk = max(1, (1 << 22) // max(n_cells, 1))
    for lo in range(0, n_rows, chunk):
        hi = min(lo + chunk, n_rows)
        inter = masks[:, None, :] & holders[None, lo:hi, :]
        out[:, lo:hi] = inter.any(axis=2)
    return out


# -- objective evaluation ----------------------------------------------


def _check_dims(placement: Placement, cells: CellTable, pop: Popularity) -> None:
    if placement.n_files != pop.n_files:
        raise PlacementError(
            f"placement has {placement.n_files} files, popularity has {pop.n_files}"
        )
    bad = [i for key in cells.cells for i in key if i > placement.n_caches]
    if bad:
        raise PlacementError(f"cell table references cache ids beyond placement: {sorted(set(bad))}")


def evaluate_miss(placement: Placement, cells: CellTable, pop: Popularity) -> float:
    """Network miss probability of a placement over the given cell table."""
    _check_dims(placement, cells, pop)
    ca = CellArrays(cells, placement.n_caches)
    a = pop.probs
    if placement.mode == "binary":
        stored = np.unique(np.concatenate(placement.rows()))
        if stored.size == 0:
            return float(ca.probs.sum())
        holders = holder_masks(placement.rows(), placement.n_files, ca.words)[stored]
        blocked = _blocked_any(ca.masks, holders)
        # miss per cell: files outside `stored` always miss, plus unblocked stored files
        outside = float(a.sum()) - float(a[stored].sum())
        miss_per_cell = outside + (~blocked) @ a[stored]
        return float(ca.probs @ miss_per_cell)
    dense = placement.dense()
    total = 0.0
    for c in range(ca.n_cells):
        surv = np.ones(placement.n_files)
        for l_idx in ca.members[c]:
            surv *= 1.0 - dense[l_idx]
        total += ca.probs[c] * float(a @ surv)
    return total


def exposure(
    placement: Placement,
    m: int,
    cells: CellTable,
    restrict_to=None,
) -> np.ndarray:
    """Exposure vector of cache ``m``: per file, the mass of m's region
    where no other cache serves that file.

    ``restrict_to`` limits the computation to the given file indices;
    the result is then aligned with that index array.
    """
    placement._check_id(m)
    ca = CellArrays(cells, placement.n_caches)
    return _exposure_arrays(placement, m - 1, ca, restrict_to)


def _exposure_arrays(placement, m_idx, ca: CellArrays, restrict_to=None) -> np.ndarray:
    files = (
        np.arange(placement.n_files, dtype=np.int64)
        if restrict_to is None
        else np.asarray(restrict_to, dtype=np.int64)
    )
    probs_m, masks_wo = ca.masks_without(m_idx)
    if placement.mode == "binary":
        holders = holder_masks(placement.rows(), placement.n_files, ca.words)[files]
        blocked = _blocked_any(masks_wo, holders)
        return probs_m @ (~blocked)
    dense = placement.dense()
    q = np.zeros(files.size)
    rows = ca.cells_of[m_idx]
    for p, c in zip(probs_m, rows):
        surv = np.ones(files.size)
        for l_idx in ca.members[c]:
            if l_idx != m_idx:
                surv *= 1.0 - dense[l_idx][files]
        q += p * surv
    return q


def local_miss(placement: Placement, m: int, cells: CellTable, pop: Popularity) -> float:
    """Miss mass over cache ``m``'s coverage region (unnormalized)."""
    _check_dims(placement, cells, pop)
    q = exposure(placement, m, cells)
    a = pop.probs
    if placement.mode == "binary":
        total = float(a @ q)
        row = placement.row(m)
        return total - float(a[row] @ q[row])
    return float((a * (1.0 - placement.row(m))) @ q)


def potential_delta_check(
    placement: Placement, m: int, new_row, cells: CellTable, pop: Popularity
) -> tuple:
    """(local-miss delta, network-miss delta) for replacing ``m``'s row.

    The two deltas are evaluated through independent formulas; the
    potential-game identity says they must coincide.
    """
    after = placement.with_row(m, new_row)
    d_local = local_miss(after, m, cells, pop) - local_miss(placement, m, cells, pop)
    d_global = evaluate_miss(after, cells, pop) - evaluate_miss(placement, cells, pop)
    return d_local, d_global


def greedy_size_fill(ranking, sizes: FileSizes, capacity: float) -> np.ndarray:
    """Fill a cache greedily along a preference ranking under a size budget.

    Walks ``ranking`` (0-based file indices) in order, includes a file
    when it still fits, skips it otherwise, and keeps scanning to the
    end of the ranking. Returns a 0/1 row over the whole catalog. With
    unit sizes this reduces to taking the first ``capacity`` ranked
    files.
    """
    if capacity <= 0:
        raise PlacementError("capacity must be > 0")
    z = sizes.sizes
    row = np.zeros(z.size, dtype=np.int8)
    used = 0.0
    for j in ranking:
        size = z[j]
        if used + size <= capacity:
            row[j] = 1
            used += size
    return row


# -- incremental engine ----------------------------------------------------


class MissEngine:
    """Incremental miss-probability engine for binary placements.

    Tracks the stored rows, packed per-file holder masks and the
    current objective value; row replacements update the objective
    through the potential identity (the delta equals the local-miss
    delta, which only needs exposures at the files that changed).
    Best responses are cached per cache and invalidated when a
    neighbour's row changes, which makes long annealing chains cheap
    once they settle.
    """

    def __init__(self, cells: CellTable, pop: Popularity, placement: Placement):
        if placement.mode != "binary":
            raise PlacementError("MissEngine drives binary placements only")
        _check_dims(placement, cells, pop)
        self.cells = cells
        self.pop = pop
        self.a = pop.probs
        self.n_caches = placement.n_caches
        self.n_files = placement.n_files
        self.capacity = placement.capacity
        self.ca = CellArrays(cells, placement.n_caches)
        self._rows = [np.array(r) for r in placement.rows()]
        self._holders = holder_masks(self._rows, self.n_files, self.ca.words)
        self._max_stored = [int(r[-1]) if r.size else -1 for r in self._rows]
        self.f = evaluate_miss(placement, cells, pop)
        self._br_cache: dict = {}

    # cache ids are 1-based in the public API; the engine works 0-based

    def placement(self) -> Placement:
        return Placement.binary(
            [np.array(r) for r in self._rows],
            n_files=self.n_files,
            capacity=self.capacity,
        )

    def snapshot_rows(self) -> list:
        return [np.array(r) for r in self._rows]

    def row(self, m_idx: int) -> np.ndarray:
        return self._rows[m_idx]

    def q(self, m_idx: int, files) -> np.ndarray:
        """Exposure of cache ``m_idx`` at the given file indices."""
        files = np.asarray(files, dtype=np.int64)
        probs_m, masks_wo = self.ca.masks_without(m_idx)
        blocked = _blocked_any(masks_wo, self._holders[files])
        return probs_m @ (~blocked)

    def candidate_count(self, m_idx: int) -> int:
        """First ``S + capacity`` files, S = max index stored near ``m_idx``.

        The best response provably lives inside this prefix: beyond the
        largest file index stored by any neighbour, exposures are
        constant and popularity is non-increasing.
        """
        s_max = max(self._max_stored[l] for l in self.ca.neighbors_idx(m_idx))
        return min(s_max + 1 + self.capacity, self.n_files)

    def _scores(self, m_idx: int):
        cached = self._br_cache.get(m_idx)
        n_cand = self.candidate_count(m_idx)
        if cached is not None and cached[0] >= n_cand:
            return cached
        files = np.arange(n_cand, dtype=np.int64)
        q = self.q(m_idx, files)
        scores = self.a[:n_cand] * q
        order = np.argsort(-scores, kind="stable")
        threshold_set = np.sort(order[: self.capacity])
        cached = (n_cand, q, scores, threshold_set)
        self._br_cache[m_idx] = cached
        return cached

    def best_response(self, m_idx: int):
        """(row, improvement, detail) for cache ``m_idx``.

        The returned row is the incumbent whenever it already achieves
        the optimal local miss within :data:`OBJ_TOL` (ties never force
        a change, so converged dynamics stay put); otherwise it is the
        top-capacity set by popularity-times-exposure score with ties
        broken toward lower file indices. ``improvement`` is the
        local-miss decrease of adopting the returned row; ``detail``
        carries the swapped files and their exposures for
        improvement-bound diagnostics.
        """
        n_cand, q, scores, threshold_set = self._scores(m_idx)
        incumbent = self._rows[m_idx]
        extra = incumbent[incumbent >= n_cand]
        if extra.size:
            # incumbent reaches past the cached candidate prefix (its row
            # was overwritten by a random proposal); score those directly
            q_extra = self.q(m_idx, extra)
            inc_score = float(scores[incumbent[incumbent < n_cand]].sum()) + float(
                (self.a[extra] * q_extra).sum()
            )
        else:
            inc_score = float(scores[incumbent].sum())
        thr_score = float(scores[threshold_set].sum())
        improvement = thr_score - inc_score
        if improvement <= OBJ_TOL:
            return incumbent, 0.0, None
        out_files = np.setdiff1d(incumbent, threshold_set, assume_unique=False)
        in_files = np.setdiff1d(threshold_set, incumbent, assume_unique=False)
        q_out = self.q(m_idx, out_files) if extra.size else q[out_files]
        detail = {
            "swapped_out": out_files,
            "swapped_in": in_files,
            "q_out": np.asarray(q_out, dtype=np.float64),
            "q_in": q[in_files],
        }
        return threshold_set, improvement, detail

    def delta_for(self, m_idx: int, new_row) -> float:
        """Objective change if ``m_idx`` adopts ``new_row`` (potential identity)."""
        old = self._rows[m_idx]
        new_row = np.asarray(new_row, dtype=np.int64)
        removed = np.setdiff1d(old, new_row)
        added = np.setdiff1d(new_row, old)
        if removed.size == 0 and added.size == 0:
            return 0.0
        files = np.concatenate([removed, added])
        q = self.q(m_idx, files)
        q_removed = q[: removed.size]
        q_added = q[removed.size :]
        return float((self.a[removed] @ q_removed) - (self.a[added] @ q_added))

    def apply(self, m_idx: int, new_row, delta: float | None = None) -> float:
        """Replace ``m_idx``'s row, update the objective, return the delta."""
        new_row = np.sort(np.asarray(new_row, dtype=np.int64))
        if delta is None:
            delta = self.delta_for(m_idx, new_row)
        old = self._rows[m_idx]
        removed = np.setdiff1d(old, new_row)
        added = np.setdiff1d(new_row, old)
        bit = np.uint64(1) << np.uint64(m_idx & 63)
        word = m_idx >> 6
        self._holders[removed, word] &= ~bit
        self._holders[added, word] |= bit
        self._rows[m_idx] = new_row
        self._max_stored[m_idx] = int(new_row[-1]) if new_row.size else -1
        self.f += delta
        for l_idx in self.ca.neighbors_idx(m_idx):
            if l_idx != m_idx:
                self._br_cache.pop(l_idx, None)
        if removed.size or added.size:
            # the cached threshold set for m stays valid (its own row does
            # not enter its exposures) unless the row reached past the
            # cached candidate prefix
            cached = self._br_cache.get(m_idx)
            if cached is not None and new_row.size and new_row[-1] >= cached[0]:
                self._br_cache.pop(m_idx, None)
        return delta

    def local_miss(self, m_idx: int) -> float:
        files = np.arange(self.n_files, dtype=np.int64)
        q = self.q(m_idx, files)
        total = float(self.a @ q)
        row = self._rows[m_idx]
        return total - float(self.a[row] @ q[row])

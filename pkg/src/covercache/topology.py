"""Cache networks and their coverage-cell probability tables.

A topology is a set of circular-coverage cache sites inside a rectangular
window, either in the plane (coverage clipped at the window boundary) or
on a torus (wrap-around distances). The coverage-cell table maps each
non-empty subset ``s`` of caches to the probability mass of the region
covered by exactly the caches in ``s``, conditional on being covered at
all. It is estimated by seeded Monte Carlo sampling and is the single
source of geometric truth for every objective evaluation downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyTopologyError, TopologyError, UncoveredWindowError

#: samples per Monte Carlo stratum; strata are independently seeded so a
#: parallel evaluation merges to the same integer counts as a sequential one
STRATUM_SIZE = 1 << 16

DEFAULT_CELL_SAMPLES = 1_000_000


@dataclass(frozen=True)
class CacheSite:
    """One cache: 1-based id, position in metres, coverage radius in metres."""

    id: int
    x: float
    y: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise TopologyError(f"site {self.id}: radius must be > 0")


@dataclass(frozen=True)
class Geometry:
    """Bounding window and distance mode.

    ``mode`` is "plane" (coverage clipped at the window boundary) or
    "torus" (the window is a fundamental domain with wrap-around
    distances).
    """

    mode: str
    width: float
    height: float

    def __post_init__(self):
        if self.mode not in ("plane", "torus"):
            raise TopologyError(f"unknown geometry mode {self.mode!r}")
        if self.width <= 0 or self.height <= 0:
            raise TopologyError("window dimensions must be strictly positive")

    @property
    def area(self) -> float:
        return self.width * self.height

    def covering_matrix(self, xs, ys, sites) -> np.ndarray:
        """Boolean (n_points, n_sites) matrix: point i covered by site m."""
        px = np.asarray(xs, dtype=np.float64)[:, None]
        py = np.asarray(ys, dtype=np.float64)[:, None]
        cx = np.array([s.x for s in sites], dtype=np.float64)[None, :]
        cy = np.array([s.y for s in sites], dtype=np.float64)[None, :]
        r2 = np.array([s.radius**2 for s in sites], dtype=np.float64)[None, :]
        dx = np.abs(px - cx)
        dy = np.abs(py - cy)
        if self.mode == "torus":
            dx = np.minimum(dx, self.width - dx)
            dy = np.minimum(dy, self.height - dy)
        return dx * dx + dy * dy <= r2

    def torus_distance(self, ax, ay, bx, by) -> float:
        """Wrap-around distance between two points (torus mode)."""
        dx = abs(ax - bx)
        dy = abs(ay - by)
        dx = min(dx, self.width - dx)
        dy = min(dy, self.height - dy)
        return float(np.hypot(dx, dy))


class CellTable:
    """Coverage-cell probability table.

    ``cells`` maps a frozenset of 1-based cache ids to the probability
    that a covered user sees exactly that subset. Masses sum to 1 over
    the table; points covered by no cache contribute only to
    ``covered_fraction``. Cells whose estimate is 0 (no sample hits) are
    omitted.
    """

    __slots__ = ("cells", "covered_fraction")

    def __init__(self, cells: dict, covered_fraction: float):
        clean = {}
        for key, p in cells.items():
            fs = frozenset(int(i) for i in key)
            if not fs:
                raise TopologyError("cell keys must be non-empty subsets")
            if p < 0:
                raise TopologyError(f"cell {sorted(fs)} has negative mass")
            if p > 0:
                clean[fs] = float(p)
        if not clean:
            raise TopologyError("cell table has no positive-mass cells")
        total = sum(clean.values())
        if abs(total - 1.0) > 1e-9:
            raise TopologyError(f"cell masses must sum to 1 (got {total!r})")
        if not 0.0 <= covered_fraction <= 1.0:
            raise TopologyError("covered_fraction must lie in [0, 1]")
        self.cells = clean
        self.covered_fraction = float(covered_fraction)

    def __len__(self) -> int:
        return len(self.cells)

    def __repr__(self) -> str:
        return (
            f"CellTable(n_cells={len(self.cells)}, "
            f"covered_fraction={self.covered_fraction:.4f})"
        )

    def ids(self) -> frozenset:
        out = frozenset()
        for key in self.cells:
            out |= key
        return out

    def sorted_items(self):
        """Cells in a deterministic order (by sorted member tuple)."""
        return sorted(self.cells.items(), key=lambda kv: tuple(sorted(kv[0])))

    def export_csv(self, path) -> None:
        """Debug export, one `subset;p` row per cell, ids comma-joined."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("subset;p\n")
            for key, p in self.sorted_items():
                fh.write(",".join(str(i) for i in sorted(key)) + f";{p!r}\n")


@dataclass(frozen=True)
class Topology:
    """Cache sites plus geometry, with the cell table attached after sampling."""

    sites: tuple
    geometry: Geometry
    cell_table: CellTable | None = None

    def __post_init__(self):
        if not self.sites:
            raise EmptyTopologyError("topology has no cache sites")
        ids = [s.id for s in self.sites]
        if ids != list(range(1, len(ids) + 1)):
            raise TopologyError("site ids must be unique and contiguous from 1")
        if self.cell_table is not None:
            unknown = self.cell_table.ids() - set(ids)
            if unknown:
                raise TopologyError(f"cell table references unknown ids {sorted(unknown)}")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def require_cells(self) -> CellTable:
        if self.cell_table is None:
            raise TopologyError("cell table not computed; call with_cells() first")
        return self.cell_table

    def with_cells(self, samples: int = DEFAULT_CELL_SAMPLES, seed: int = 0) -> "Topology":
        """Return a copy carrying a freshly sampled cell table."""
        return replace(self, cell_table=compute_cells(self, samples=samples, seed=seed))

    def neighbor_sets(self) -> dict:
        """Per cache id, the ids sharing at least one coverage cell (self included)."""
        table = self.require_cells()
        out = {s.id: {s.id} for s in self.sites}
        for key in table.cells:
            for m in key:
                out[m] |= key
        return out


def generate_poisson(intensity: float, window: tuple, radius: float, seed: int) -> Topology:
    """Homogeneous spatial Poisson process of cache sites in a plane window.

    Site count is Poisson(intensity * area) and positions are i.i.d.
    uniform. Raises :class:`EmptyTopologyError` when zero sites are drawn
    (the miss probability is undefined on an empty network).
    """
    width, height = float(window[0]), float(window[1])
    geometry = Geometry("plane", width, height)
    if intensity <= 0:
        raise TopologyError("intensity must be > 0")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(intensity * geometry.area))
    if n == 0:
        raise EmptyTopologyError("Poisson draw produced zero sites")
    xs = rng.random(n) * width
    ys = rng.random(n) * height
    sites = tuple(
        CacheSite(i + 1, float(xs[i]), float(ys[i]), float(radius)) for i in range(n)
    )
    return Topology(sites, geometry)


def generate_grid_torus(rows: int, cols: int, spacing: float, radius: float) -> Topology:
    """Regular rows x cols grid on a torus of size (cols*spacing) x (rows*spacing).

    Sites are numbered row-major starting at 1; wrap-around distances are
    used by every downstream computation.
    """
    if rows < 1 or cols < 1:
        raise TopologyError("rows and cols must be >= 1")
    if spacing <= 0:
        raise TopologyError("spacing must be > 0")
    geometry = Geometry("torus", cols * spacing, rows * spacing)
    sites = []
    for r in range(rows):
        for c in range(cols):
            sites.append(
                CacheSite(len(sites) + 1, (c + 0.5) * spacing, (r + 0.5) * spacing, radius)
            )
    return Topology(tuple(sites), geometry)


def load_topology(records, geometry: Geometry) -> Topology:
    """Build a topology from (id, x, y, radius) records, order preserved.

    Ids are renumbered 1..N in input order; duplicates in the source ids
    are rejected.
    """
    records = list(records)
    if not records:
        raise TopologyError("no topology records given")
    seen = set()
    sites = []
    for rec in records:
        rid, x, y, radius = rec
        if rid in seen:
            raise TopologyError(f"duplicate site id {rid!r}")
        seen.add(rid)
        sites.append(CacheSite(len(sites) + 1, float(x), float(y), float(radius)))
    return Topology(tuple(sites), geometry)


def load_topology_csv(path, geometry: Geometry) -> Topology:
    """Read a `id,x,y,radius` CSV (UTF-8, header row, metres)."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TopologyError(f"{path}: empty file") from None
        expected = ["id", "x", "y", "radius"]
        if [h.strip().lower() for h in header] != expected:
            raise TopologyError(f"{path}: line 1: header must be {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise TopologyError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                rid = int(row[0])
                x, y, r = float(row[1]), float(row[2]), float(row[3])
            except ValueError as exc:
                raise TopologyError(f"{path}: line {lineno}: malformed record: {exc}") from None
            if r <= 0:
                raise TopologyError(f"{path}: line {lineno}: radius must be > 0")
            records.append((rid, x, y, r))
    try:
        return load_topology(records, geometry)
    except TopologyError as exc:
        raise TopologyError(f"{path}: {exc}") from None


def save_topology_csv(topology: Topology, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,x,y,radius\n")
        for s in topology.sites:
            fh.write(f"{s.id},{s.x!r},{s.y!r},{s.radius!r}\n")


def _stratum_counts(topology: Topology, n: int, seed_seq) -> tuple:
    """Covering-subset hit counts for one independently seeded stratum.

    Returns (counts_by_packed_key, covered_count). Keys are the packed
    boolean coverage rows as bytes, so merging across strata is plain
    integer addition and independent of evaluation order.
    """
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    geom = topology.geometry
    xs = rng.random(n) * geom.width
    ys = rng.random(n) * geom.height
    covered = geom.covering_matrix(xs, ys, topology.sites)
    any_cov = covered.any(axis=1)
    covered = covered[any_cov]
    counts = {}
    if covered.shape[0]:
        packed = np.packbits(covered, axis=1)
        keys, key_counts = np.unique(packed, axis=0, return_counts=True)
        for key_row, c in zip(keys, key_counts):
            counts[key_row.tobytes()] = int(c)
    return counts, int(covered.shape[0])


def _unpack_key(key: bytes, n_sites: int) -> frozenset:
    bits = np.unpackbits(np.frombuffer(key, dtype=np.uint8), count=n_sites)
    return frozenset(int(i) + 1 for i in np.nonzero(bits)[0])


def compute_cells(topology: Topology, samples: int = DEFAULT_CELL_SAMPLES, seed: int = 0) -> CellTable:
    """Monte Carlo estimate of the coverage-cell table.

    The window is sampled uniformly in independently seeded strata of
    :data:`STRATUM_SIZE` points; per-cell masses are hit counts divided
    by the total covered count, so the masses sum to 1 by construction
    and the merged result does not depend on stratum evaluation order.
    """
    if samples < 1:
        raise TopologyError("samples must be >= 1")
    n_strata = (samples + STRATUM_SIZE - 1) // STRATUM_SIZE
    children = np.random.SeedSequence(seed).spawn(n_strata)
    totals: dict = {}
    covered_total = 0
    remaining = samples
    for child in children:
        n = min(STRATUM_SIZE, remaining)
        remaining -= n
        counts, covered = _stratum_counts(topology, n, child)
        covered_total += covered
        for key, c in counts.items():
            totals[key] = totals.get(key, 0) + c
    if covered_total == 0:
        raise UncoveredWindowError("objective undefined on uncovered window")
    cells = {
        _unpack_key(key, topology.n_sites): c / covered_total for key, c in totals.items()
    }
    return CellTable(cells, covered_fraction=covered_total / samples)


def neighbors(topology: Topology, m: int) -> set:
    """All cache ids sharing at least one coverage cell with ``m`` (self included)."""
    if not 1 <= m <= topology.n_sites:
        raise TopologyError(f"unknown cache id {m}")
    return set(topology.neighbor_sets()[m])

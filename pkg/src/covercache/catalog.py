"""Content catalog: request popularity vectors and optional file sizes.

Popularity vectors are indexed 0-based internally; file ``j`` in exported
CSVs is 1-based. Vectors are validated once on construction and treated as
immutable afterwards.
"""

from __future__ import annotations

import numpy as np

from .errors import CatalogError

_SUM_TOL = 1e-12


class Popularity:
    """Per-file request probabilities, sorted non-increasing.

    Parameters
    ----------
    probs : array-like
        Request probabilities. Must be non-negative, sum to 1 within
        1e-12 and be non-increasing. Sorting is the caller's job; the
        placement engine relies on this ordering for its candidate
        truncation.
    """

    __slots__ = ("probs",)

    def __init__(self, probs):
        a = np.asarray(probs, dtype=np.float64)
        if a.ndim != 1 or a.size == 0:
            raise CatalogError("popularity must be a non-empty 1-D vector")
        if np.any(a < 0):
            raise CatalogError("popularity entries must be non-negative")
        total = float(a.sum())
        if abs(total - 1.0) > _SUM_TOL:
            raise CatalogError(f"popularity must sum to 1 (got {total!r})")
        if np.any(np.diff(a) > 0):
            raise CatalogError("popularity must be non-increasing by file index")
        a.setflags(write=False)
        self.probs = a

    @property
    def n_files(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size

    def __repr__(self) -> str:
        return f"Popularity(n_files={self.n_files})"


def zipf_popularity(n_files: int, gamma: float) -> Popularity:
    """Zipf request distribution: prob of file j proportional to (j+1)^-gamma.

    ``gamma=0`` gives the uniform distribution.
    """
    if n_files < 1:
        raise CatalogError("n_files must be >= 1")
    if gamma < 0:
        raise CatalogError("gamma must be >= 0")
    ranks = np.arange(1, n_files + 1, dtype=np.float64)
    weights = ranks ** (-gamma)
    return Popularity(weights / weights.sum())


def tail_mass(pop: Popularity, n: int) -> float:
    """Total request mass of the files ranked strictly below the first ``n``."""
    if n < 0 or n > pop.n_files:
        raise CatalogError(f"n must be in [0, {pop.n_files}], got {n}")
    return float(pop.probs[n:].sum())


class FileSizes:
    """Per-file sizes as dimensionless multiples of one cache slot."""

    __slots__ = ("sizes",)

    def __init__(self, sizes):
        z = np.asarray(sizes, dtype=np.float64)
        if z.ndim != 1 or z.size == 0:
            raise CatalogError("sizes must be a non-empty 1-D vector")
        if np.any(z <= 0):
            raise CatalogError("file sizes must be strictly positive")
        z.setflags(write=False)
        self.sizes = z

    @property
    def n_files(self) -> int:
        return self.sizes.size

    def __len__(self) -> int:
        return self.sizes.size


def lognormal_sizes(n_files: int, sigma2: float, seed: int) -> FileSizes:
    """I.i.d. log-normal file sizes with mean exactly 1.

    ``sigma2`` is the variance of the underlying normal; its mean is set
    to -sigma2/2 so that E[size] = 1 for every sigma2. ``sigma2=0``
    degenerates to all-ones.
    """
    if n_files < 1:
        raise CatalogError("n_files must be >= 1")
    if sigma2 < 0:
        raise CatalogError("sigma2 must be >= 0")
    if sigma2 == 0:
        return FileSizes(np.ones(n_files))
    rng = np.random.default_rng(seed)
    sigma = float(np.sqrt(sigma2))
    return FileSizes(rng.lognormal(mean=-sigma2 / 2.0, sigma=sigma, size=n_files))


def sizes_from_normals(normals, sigma2: float) -> FileSizes:
    """Log-normal sizes with mean 1 driven by caller-supplied standard normals.

    Using one fixed normal vector across a sigma2 sweep couples the draws
    (common random numbers), which keeps sweep comparisons low-noise.
    """
    z = np.asarray(normals, dtype=np.float64)
    if sigma2 < 0:
        raise CatalogError("sigma2 must be >= 0")
    if sigma2 == 0:
        return FileSizes(np.ones(z.size))
    sigma = float(np.sqrt(sigma2))
    return FileSizes(np.exp(sigma * z - sigma2 / 2.0))


def load_popularity_csv(path) -> Popularity:
    """Read a popularity vector, one probability per line. Validates fully."""
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values.append(float(text))
            except ValueError as exc:
                raise CatalogError(f"line {lineno}: not a number: {text!r}") from exc
    if not values:
        raise CatalogError("popularity file is empty")
    return Popularity(values)

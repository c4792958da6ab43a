"""Exception types shared across the package."""


class CoverCacheError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CoverCacheError):
    """An experiment configuration is malformed or references missing inputs."""


class TopologyError(CoverCacheError):
    """A cache network cannot be built or is degenerate."""


class EmptyTopologyError(TopologyError):
    """A generator produced zero cache sites; the objective is undefined."""


class UncoveredWindowError(TopologyError):
    """No sampled point was covered by any cache; the objective is undefined."""


class CatalogError(CoverCacheError):
    """A popularity or file-size vector violates its invariants."""


class PlacementError(CoverCacheError):
    """A placement matrix violates feasibility (shape, capacity, box bounds)."""


class EnumerationCapError(CoverCacheError):
    """A brute-force enumeration would exceed the configured subset cap."""


class RoundingError(CoverCacheError):
    """Rounding a relaxed placement did not yield exactly-capacity rows."""

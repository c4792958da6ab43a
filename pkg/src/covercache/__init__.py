"""Cooperative content placement for geographically overlapping caches.

Computes optimal cache contents for networks of circular-coverage caches
by best-response potential-game dynamics, with stochastic and
deterministic simulated-annealing variants and request-driven baselines,
plus a seeded experiment harness that emits plot-ready CSV series.
"""

from .annealing import (
    CoolingSchedule,
    SsaConfig,
    TauSchedule,
    acceptance_prob,
    dsa_best_response,
    random_k_subset,
    run_dsa,
    run_ssa,
)
from .baselines import (
    most_popular_placement,
    probabilistic_marginals,
    sample_probabilistic_placement,
    simulate_multi_lru_one,
    simulate_static_placement,
    user_position_sampler,
)
from .catalog import (
    FileSizes,
    Popularity,
    lognormal_sizes,
    load_popularity_csv,
    tail_mass,
    zipf_popularity,
)
from .errors import (
    CatalogError,
    ConfigError,
    CoverCacheError,
    EmptyTopologyError,
    EnumerationCapError,
    PlacementError,
    RoundingError,
    TopologyError,
    UncoveredWindowError,
)
from .game import (
    DynamicsTrace,
    ImprovementBound,
    Schedule,
    StepRecord,
    best_response,
    brute_force_best_response,
    check_improvement_bound,
    epsilon_nash_stop,
    is_nash,
    min_improvement_bound,
    run_dynamics,
    save_trace_csv,
)
from .placement import (
    MissEngine,
    Placement,
    evaluate_miss,
    exposure,
    greedy_size_fill,
    load_placement_csv,
    local_miss,
    potential_delta_check,
    save_placement_csv,
)
from .topology import (
    CacheSite,
    CellTable,
    Geometry,
    Topology,
    compute_cells,
    generate_grid_torus,
    generate_poisson,
    load_topology,
    load_topology_csv,
    neighbors,
    save_topology_csv,
)

__version__ = "0.1.0"

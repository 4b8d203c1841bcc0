"""Steady-state solver for a discrete-time batch-service queue.

Arrivals follow a two-matrix Markovian slot process, the server takes
batches between two thresholds, and each batch size carries its own
service-time law.  The package computes the exact joint queue/server
distributions at departure, slot-boundary, pre-arrival, and outside
observer instants, plus the usual performance measures, and ships two
independent cross-checks (a slot simulator and a capped-chain solve).
"""

from .arrival import DMapProcess, stationary, validate
from .cli import (
    AnalyticSolution,
    SolverConfig,
    config_from_dict,
    load_config,
    main,
    run_analytic,
)
from .departure import (
    BoundaryUnknowns,
    DepartureDistribution,
    extract_departure_distribution,
    solve_boundary_unknowns,
)
from .epochs import (
    EpochDistribution,
    arbitrary_epoch,
    mean_departure_spacing,
    outside_observer_epoch,
    pre_arrival_epoch,
)
from .errors import (
    CapTooSmall,
    ConfigError,
    SolverError,
    TruncationFailure,
    Unstable,
)
from .measures import (
    PerformanceMeasures,
    queue_length_marginal,
    scalar_measures,
    served_batch_marginal,
    system_length_marginal,
)
from .oracles import (
    SimulationResult,
    TruncatedChainResult,
    simulate,
    solve_truncated_chain,
)
from .roots import CharacteristicSystem, RootSet, build_characteristic, find_roots
from .services import (
    build_rational_gf,
    make_service,
    mean_service_time,
    stability_ratio,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticSolution",
    "BoundaryUnknowns",
    "CapTooSmall",
    "CharacteristicSystem",
    "ConfigError",
    "DMapProcess",
    "DepartureDistribution",
    "EpochDistribution",
    "PerformanceMeasures",
    "RootSet",
    "SimulationResult",
    "SolverConfig",
    "SolverError",
    "TruncatedChainResult",
    "TruncationFailure",
    "Unstable",
    "arbitrary_epoch",
    "build_characteristic",
    "build_rational_gf",
    "config_from_dict",
    "extract_departure_distribution",
    "find_roots",
    "load_config",
    "main",
    "make_service",
    "mean_departure_spacing",
    "mean_service_time",
    "outside_observer_epoch",
    "pre_arrival_epoch",
    "queue_length_marginal",
    "run_analytic",
    "scalar_measures",
    "served_batch_marginal",
    "simulate",
    "solve_boundary_unknowns",
    "solve_truncated_chain",
    "stability_ratio",
    "stationary",
    "system_length_marginal",
    "validate",
]

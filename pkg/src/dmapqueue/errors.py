"""Exception types raised by the solver.

Every error carries the name of the module that raised it and a short
category tag so front ends can report failures uniformly.
"""

from __future__ import annotations


class SolverError(Exception):
    """Base class for all solver failures."""

    category = "error"

    def __init__(self, message: str, module: str = "dmapqueue"):
        super().__init__(message)
        self.module = module


class NonStochastic(SolverError):
    """Row sums deviate from 1 beyond the repair tolerance."""

    category = "non-stochastic"


class NegativeEntry(SolverError):
    """A probability entry is negative or exceeds 1."""

    category = "negative-entry"


class Reducible(SolverError):
    """The combined transition structure is not irreducible."""

    category = "reducible"


class DegenerateProcess(SolverError):
    """Arrival matrices must each contain at least one positive entry."""

    category = "degenerate-process"


class SingularSolve(SolverError):
    """A linear system that should be nonsingular failed to solve."""

    category = "singular-solve"


class SingularPhaseMatrix(SolverError):
    """I - T is singular, so the phase-type law has no finite mean."""

    category = "singular-phase-matrix"


class DegreeOverflow(SolverError):
    """A polynomial degree exceeded the configured cap."""

    category = "degree-overflow"


class TruncationFailure(SolverError):
    """A series truncation could not reach the requested mass."""

    category = "truncation-failure"


class RootCountMismatch(SolverError):
    """The unit disk does not contain the expected number of roots."""

    category = "root-count-mismatch"


class ClusterDetected(SolverError):
    """Two roots are too close; the method requires distinct roots."""

    category = "cluster-detected"

    def __init__(self, message: str, module: str = "dmapqueue", clusters=None):
        super().__init__(message, module)
        self.clusters = clusters or []


class IllConditioned(SolverError):
    """A solve is too ill conditioned or its residual is too large."""

    category = "ill-conditioned"


class NegativeProbability(SolverError):
    """A probability came out more negative than the clamp window."""

    category = "negative-probability"


class TailTruncationFailure(SolverError):
    """The geometric tail could not be truncated within the cap."""

    category = "tail-truncation-failure"


class ZeroArrivalRate(SolverError):
    """The arrival rate is zero, so conditioning on arrivals is undefined."""

    category = "zero-arrival-rate"


class CapTooSmall(SolverError):
    """A finite-state truncation leaks too much mass at its boundary."""

    category = "cap-too-small"


class Unstable(SolverError):
    """The offered load is at or above capacity; no steady state exists."""

    category = "unstable"


class ConfigError(SolverError):
    """The run configuration is malformed."""

    category = "config"

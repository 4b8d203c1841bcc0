"""Discrete-time Markovian arrival process given by a matrix pair.

The process moves through m phases once per slot.  C holds the phase
transition probabilities for slots without an arrival, D those for slots
carrying one arrival, and C + D must be an irreducible stochastic matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    DegenerateProcess,
    NegativeEntry,
    NonStochastic,
    Reducible,
    SingularSolve,
)

_MODULE = "arrival"


@dataclass(frozen=True)
class DMapProcess:
    """Validated arrival process.

    C: (m, m) slot transition probabilities without an arrival.
    D: (m, m) slot transition probabilities with one arrival.
    """

    C: np.ndarray
    D: np.ndarray

    @property
    def m(self) -> int:
        return self.C.shape[0]


def validate(C, D, row_tol: float = 1e-9) -> DMapProcess:
    """Check and repair the matrix pair, returning an immutable process.

    Row sums of C + D within row_tol of 1 are renormalized; larger
    deviations raise NonStochastic.  The support of C + D must be a
    single strongly connected class.
    """
    C = np.array(C, dtype=float)
    D = np.array(D, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape != D.shape:
        raise NonStochastic("C and D must be square matrices of equal size", _MODULE)
    if np.any(C < 0.0) or np.any(D < 0.0):
        raise NegativeEntry("C and D entries must be nonnegative", _MODULE)
    if np.any(C > 1.0) or np.any(D > 1.0):
        raise NonStochastic("C and D entries must lie in [0, 1]", _MODULE)
    if not np.any(C > 0.0) or not np.any(D > 0.0):
        raise DegenerateProcess(
            "C and D must each contain at least one positive entry", _MODULE
        )
    rows = C.sum(axis=1) + D.sum(axis=1)
    dev = np.max(np.abs(rows - 1.0))
    if dev > row_tol:
        raise NonStochastic(
            f"rows of C + D deviate from 1 by {dev:.3e} (tolerance {row_tol:.1e})",
            _MODULE,
        )
    if dev > 0.0:
        C = C / rows[:, None]
        D = D / rows[:, None]
    support = csr_matrix((C + D) > 0.0)
    ncomp, _ = connected_components(support, directed=True, connection="strong")
    if ncomp != 1:
        raise Reducible(
            f"support of C + D splits into {ncomp} strongly connected classes", _MODULE
        )
    C.setflags(write=False)
    D.setflags(write=False)
    return DMapProcess(C, D)


def stationary(dmap: DMapProcess) -> tuple[np.ndarray, float]:
    """Stationary phase vector of C + D and the arrival rate.

    Returns (pi_bar, lam_star) with pi_bar (C + D) = pi_bar, pi_bar e = 1
    and lam_star = pi_bar D e, the expected arrivals per slot.
    """
    m = dmap.m
    P = dmap.C + dmap.D
    if m == 1:
        pi = np.array([1.0])
    else:
        A = P.T - np.eye(m)
        A[-1, :] = 1.0
        rhs = np.zeros(m)
        rhs[-1] = 1.0
        try:
            pi = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSolve(f"stationary solve failed: {exc}", _MODULE) from exc
        resid = np.max(np.abs(pi @ P - pi))
        if not np.isfinite(resid) or resid > 1e-10:
            raise SingularSolve(
                f"stationary residual {resid:.3e} exceeds 1e-10", _MODULE
            )
    lam_star = float(pi @ dmap.D.sum(axis=1))
    return pi, lam_star


def one_slot_gf(dmap: DMapProcess, x):
    """Arrival-marking transform C + D x of a single slot."""
    return dmap.C + dmap.D * x


def next_arrival_phase_matrix(dmap: DMapProcess) -> np.ndarray:
    """Stochastic matrix (I - C)^-1 D mapping a phase to the phase just
    after the next arrival."""
    m = dmap.m
    try:
        out = np.linalg.solve(np.eye(m) - dmap.C, dmap.D)
    except np.linalg.LinAlgError as exc:
        raise SingularSolve(f"I - C is singular: {exc}", _MODULE) from exc
    return out

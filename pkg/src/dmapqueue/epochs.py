"""Steady-state joint laws at other observation instants.

The departure-epoch law is the anchor: every quantity here is produced from
it by exact slot-level balance, never by re-solving the chain.  Three views
are provided:

* arbitrary instant: the law of (queue length, batch in service, phase) at a
  randomly chosen slot boundary,
* pre-arrival instant: the law seen by an arriving customer,
* outside observer: the law seen between a potential departure and the next
  potential arrival, which coincides with the arbitrary law under the
  late-arrival, departure-first timing used throughout this package.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .arrival import DMapProcess, stationary
from .departure import DepartureDistribution
from .errors import (
    NegativeProbability,
    TruncationFailure,
    ZeroArrivalRate,
)
from .services import mean_service_time

_MODULE = "epochs"


@dataclass(frozen=True)
class EpochDistribution:
    """Joint law of (queue, server content, phase) at one instant kind.

    p_idle[n, i]   : queue holds n (< threshold) jobs, server resting,
                     arrival process in phase i
    pi_busy[n, j, i]: queue holds n jobs, server working on a batch of
                     size threshold + j, phase i
    """

    kind: str
    p_idle: np.ndarray
    pi_busy: np.ndarray
    batch_low: int
    mean_spacing: float
    mass_before_renorm: float
    max_clamp: float

    @property
    def batch_high(self) -> int:
        return self.batch_low + self.pi_busy.shape[1] - 1

    @property
    def n_trunc(self) -> int:
        return self.pi_busy.shape[0] - 1

    def idle_mass(self) -> float:
        return float(self.p_idle.sum())

    def phase_marginal(self) -> np.ndarray:
        """Total probability of each arrival phase, all states combined."""
        return np.asarray(
            self.p_idle.sum(axis=0) + self.pi_busy.sum(axis=(0, 1))
        )


def _idle_weight_rows(
    phi: np.ndarray, dbar: np.ndarray, ic: np.ndarray, a: int
) -> np.ndarray:
    """Unnormalized idle-state rows u_n, n = 0..a-1.

    u_n is the expected number of slots per departure interval spent with n
    jobs waiting and the server resting, split by phase.
    """
    m = phi.shape[1]
    u = np.zeros((a, m))
    w = phi[0].copy()
    u[0] = w @ ic
    for n in range(1, a):
        w = w @ dbar + phi[n]
        u[n] = w @ ic
    return u


def _spacing_parts(
    dep: DepartureDistribution,
    dmap: DMapProcess,
    services_by_r: dict,
    a: int,
) -> tuple[float, np.ndarray]:
    """Mean departure spacing and the idle-weight rows that feed it.

    Split by what the server does after a departure: if the leftover queue
    is below the threshold the server first rests while arrivals accumulate
    (idle weights), then every interval ends with one full service whose
    expected length depends on the batch size actually taken.
    """
    b = a + dep.pi.shape[1] - 1
    phi = dep.phi_marginal
    m = phi.shape[1]
    ic = np.linalg.inv(np.eye(m) - dmap.C)
    dbar = ic @ dmap.D

    means = {r: mean_service_time(services_by_r[r]) for r in range(a, b + 1)}
    row_mass = phi.sum(axis=1)
    served = means[a] * row_mass[: a + 1].sum()
    for n in range(a + 1, b + 1):
        served += means[n] * row_mass[n]
    served += means[b] * max(0.0, 1.0 - row_mass[: b + 1].sum())

    u = _idle_weight_rows(phi, dbar, ic, a)
    return float(served + u.sum()), u


def mean_departure_spacing(
    dep: DepartureDistribution,
    dmap: DMapProcess,
    services_by_r: dict,
    a: int,
) -> float:
    """Mean number of slots separating consecutive batch departures."""
    omega, _ = _spacing_parts(dep, dmap, services_by_r, a)
    return omega


def arbitrary_epoch(
    dep: DepartureDistribution,
    dmap: DMapProcess,
    services_by_r: dict,
    a: int,
    *,
    neg_tol: float = 1e-8,
    mass_tol: float = 1e-6,
) -> EpochDistribution:
    """Joint law at a randomly chosen slot boundary.

    Built from the departure law by forward slot-balance recursions; the
    normalizer is the mean departure spacing, so no renormalization beyond
    a final roundoff correction is required.
    """
    R = dep.pi.shape[1]
    b = a + R - 1
    m = dmap.m
    phi = dep.phi_marginal
    C, D = dmap.C, dmap.D
    ic = np.linalg.inv(np.eye(m) - C)

    omega, u = _spacing_parts(dep, dmap, services_by_r, a)
    p_idle = u / omega

    n_top = dep.n_trunc - b
    if n_top < 1:
        raise TruncationFailure(
            f"departure law truncated at {dep.n_trunc}, too short to carry "
            f"the slot balance past batch size {b}",
            _MODULE,
        )
    pi = np.zeros((n_top + 1, R, m))

    # queue empty of surplus: the batch just started
    pi[0, 0] = (p_idle[a - 1] @ D + (phi[a] - dep.pi[0, 0]) / omega) @ ic
    for j in range(1, R):
        r = a + j
        pi[0, j] = ((phi[r] - dep.pi[0, j]) / omega) @ ic

    for n in range(1, n_top + 1):
        for j in range(R - 1):
            pi[n, j] = (pi[n - 1, j] @ D - dep.pi[n, j] / omega) @ ic
        pi[n, R - 1] = (
            pi[n - 1, R - 1] @ D + (phi[n + b] - dep.pi[n, R - 1]) / omega
        ) @ ic

    low = float(min(pi.min(), p_idle.min()))
    if low < -neg_tol:
        raise NegativeProbability(
            f"slot-balance recursion produced {low:.3e}", _MODULE
        )
    max_clamp = max(0.0, -low)
    np.clip(pi, 0.0, None, out=pi)
    np.clip(p_idle, 0.0, None, out=p_idle)

    mass = float(p_idle.sum() + pi.sum())
    if not np.isfinite(mass) or abs(mass - 1.0) > mass_tol:
        raise TruncationFailure(
            f"arbitrary-instant mass {mass:.12f} is off by "
            f"{abs(mass - 1.0):.3e}, beyond {mass_tol:.1e}",
            _MODULE,
        )
    p_idle /= mass
    pi /= mass

    return EpochDistribution(
        kind="arbitrary",
        p_idle=p_idle,
        pi_busy=pi,
        batch_low=a,
        mean_spacing=omega,
        mass_before_renorm=mass,
        max_clamp=max_clamp,
    )


def pre_arrival_epoch(
    arb: EpochDistribution, dmap: DMapProcess
) -> EpochDistribution:
    """Joint law seen by an arriving customer.

    Condition each arbitrary-instant state on an arrival happening in the
    next slot: weight by the arrival matrix and divide by the arrival rate.
    """
    _, rate = stationary(dmap)
    if rate <= 1e-14:
        raise ZeroArrivalRate(
            f"arrival rate {rate:.3e} cannot condition on arrivals", _MODULE
        )
    p_idle = arb.p_idle @ dmap.D / rate
    pi_busy = arb.pi_busy @ dmap.D / rate
    mass = float(p_idle.sum() + pi_busy.sum())
    return EpochDistribution(
        kind="pre_arrival",
        p_idle=p_idle / mass,
        pi_busy=pi_busy / mass,
        batch_low=arb.batch_low,
        mean_spacing=arb.mean_spacing,
        mass_before_renorm=mass,
        max_clamp=arb.max_clamp,
    )


def outside_observer_epoch(arb: EpochDistribution) -> EpochDistribution:
    """Joint law for an observer looking between departures and arrivals.

    With departures resolved first and arrivals landing late in the slot,
    the observer sees exactly the arbitrary-instant state.
    """
    return dataclasses.replace(arb, kind="outside")

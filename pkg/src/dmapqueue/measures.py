"""Marginal laws and scalar performance summaries.

Everything here is a read-out of the arbitrary-instant joint law: customers
in system (queue plus the batch being served), customers waiting, batch size
in progress, and the usual scalar figures (mean contents, mean delays,
occupancy fractions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrival import DMapProcess, stationary
from .departure import DepartureDistribution
from .epochs import EpochDistribution
from .services import mean_service_time

_MODULE = "measures"


@dataclass(frozen=True)
class PerformanceMeasures:
    mean_system: float
    mean_queue: float
    mean_in_service: float
    mean_sojourn: float
    mean_wait: float
    p_idle: float
    p_busy: float
    load: float
    arrival_rate: float


def system_length_marginal(arb: EpochDistribution) -> np.ndarray:
    """Law of the customer count including the batch in service."""
    a = arb.p_idle.shape[0]
    R = arb.pi_busy.shape[1]
    b = a + R - 1
    n_busy = arb.pi_busy.shape[0]
    out = np.zeros(n_busy + b)
    out[:a] = arb.p_idle.sum(axis=1)
    busy = arb.pi_busy.sum(axis=2)
    for j in range(R):
        r = a + j
        out[r : r + n_busy] += busy[:, j]
    return out


def queue_length_marginal(arb: EpochDistribution) -> np.ndarray:
    """Law of the waiting-line size, idle and busy periods combined."""
    a = arb.p_idle.shape[0]
    out = arb.pi_busy.sum(axis=(1, 2))
    out = out.copy()
    out[:a] += arb.p_idle.sum(axis=1)
    return out


def served_batch_marginal(arb: EpochDistribution) -> np.ndarray:
    """Law of the batch size in progress, conditioned on a busy server."""
    busy = arb.pi_busy.sum(axis=(0, 2))
    total = busy.sum()
    return busy / total


def _tail_first_moment(p_last: float, n_last: int, decay: float) -> float:
    """First-moment mass sitting past the truncation point.

    Models the untracked tail as p_last * decay^k at position n_last + k;
    the truncation threshold makes this a guard digit, not a load-bearing
    term.
    """
    if not (0.0 < decay < 1.0) or p_last <= 0.0:
        return 0.0
    g = decay / (1.0 - decay)
    return p_last * g * (n_last + 1.0 / (1.0 - decay))


def _dominant_decay(dep: DepartureDistribution | None) -> float:
    if dep is None or len(dep.partial_fraction.alphas) == 0:
        return 0.0
    mags = np.abs(dep.partial_fraction.alphas)
    weights = np.abs(dep.partial_fraction.gammas).max(axis=1)
    mags = mags[weights > 1e-12]
    if len(mags) == 0:
        return 0.0
    return float(1.0 / mags.min())


def scalar_measures(
    arb: EpochDistribution,
    dmap: DMapProcess,
    services_by_r: dict,
    dep: DepartureDistribution | None = None,
) -> PerformanceMeasures:
    """Scalar summaries of the arbitrary-instant law.

    Mean counts use a geometric continuation of the truncated tail governed
    by the slowest-decaying mode of the departure law, so the series are
    closed rather than clipped.
    """
    _, rate = stationary(dmap)
    a = arb.p_idle.shape[0]
    b = arb.batch_high

    p_sys = system_length_marginal(arb)
    p_queue = queue_length_marginal(arb)
    decay = _dominant_decay(dep)

    ns_sys = np.arange(len(p_sys))
    mean_system = float((ns_sys * p_sys).sum())
    mean_system += _tail_first_moment(p_sys[-1], len(p_sys) - 1, decay)

    ns_q = np.arange(len(p_queue))
    mean_queue = float((ns_q * p_queue).sum())
    mean_queue += _tail_first_moment(p_queue[-1], len(p_queue) - 1, decay)

    batch = served_batch_marginal(arb)
    mean_in_service = float((np.arange(a, b + 1) * batch).sum())

    p_idle = arb.idle_mass()
    load = rate * mean_service_time(services_by_r[b]) / b

    return PerformanceMeasures(
        mean_system=mean_system,
        mean_queue=mean_queue,
        mean_in_service=mean_in_service,
        mean_sojourn=mean_system / rate,
        mean_wait=mean_queue / rate,
        p_idle=p_idle,
        p_busy=1.0 - p_idle,
        load=load,
        arrival_rate=rate,
    )

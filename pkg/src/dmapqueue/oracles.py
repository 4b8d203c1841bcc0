"""Independent ground-truth generators for cross-validation.

Two routes that share nothing with the analytic pipeline:

* a slot-by-slot stochastic simulator of the physical system (single
  server, threshold batch service, size-dependent service times, late
  arrivals with delayed access),
* an exact stationary solve of the finite Markov chain over
  (queue, batch size, remaining service, phase) with capped queue and
  remaining-time ranges.

Both report the joint laws at the arbitrary, pre-arrival, and departure
instants in the same array layout the analytic modules use, so tests can
compare cell by cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .arrival import DMapProcess, stationary
from .errors import CapTooSmall, TruncationFailure
from .services import pmf_array

_MODULE = "oracles"

_BATCHES = 32


# ---------------------------------------------------------------------------
# explicit portable RNG (xoshiro256++ seeded through splitmix64), so a seed
# fixes the sample path bit for bit on every platform


@njit(cache=True)
def _seed_state(seed):
    s = np.empty(4, dtype=np.uint64)
    z = np.uint64(seed)
    for i in range(4):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        w = z
        w = (w ^ (w >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        w = (w ^ (w >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        s[i] = w ^ (w >> np.uint64(31))
    return s


@njit(cache=True)
def _next_double(s):
    x0 = s[0]
    x3 = s[3]
    t = x0 + x3
    result = ((t << np.uint64(23)) | (t >> np.uint64(41))) + x0
    t1 = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t1
    s[3] = (s[3] << np.uint64(45)) | (s[3] >> np.uint64(19))
    return (result >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _slot_loop(
    trans_cum,
    dur_cum,
    dur_len,
    a,
    b,
    slots,
    warmup,
    n_cap,
    seed,
    arb,
    pre,
    dep,
    q_sum,
    censused,
    arrivals,
    departures,
):
    m = trans_cum.shape[0]
    R = b - a + 1
    state = _seed_state(seed)
    K = arb.shape[0]
    counted = slots - warmup
    phase = 0
    q = 0
    serving = 0
    remaining = 0
    for t in range(slots):
        live = t >= warmup
        k = (t - warmup) * K // counted if live else 0
        if live:
            row = q if q < n_cap else n_cap
            col = 0 if serving == 0 else serving - a + 1
            arb[k, row, col, phase] += 1
            q_sum[k] += q
            censused[k] += 1

        # arrival step: one phase transition, possibly carrying a customer
        v = _next_double(state)
        row_cum = trans_cum[phase]
        idx = 0
        while idx < 2 * m - 1 and row_cum[idx] < v:
            idx += 1
        arrived = idx >= m
        new_phase = idx - m if arrived else idx
        if arrived:
            if live:
                row = q if q < n_cap else n_cap
                col = 0 if serving == 0 else serving - a + 1
                pre[k, row, col, new_phase] += 1
                arrivals[k] += 1
            q += 1
        phase = new_phase

        # service step: departures resolve after the slot's arrival
        if serving > 0:
            if remaining == 1:
                if live:
                    row = q if q < n_cap else n_cap
                    dep[k, row, serving - a, phase] += 1
                    departures[k] += 1
                serving = 0
                remaining = 0
            else:
                remaining -= 1
        if serving == 0 and q >= a:
            size = q if q < b else b
            q -= size
            serving = size
            j = size - a
            v = _next_double(state)
            u = 1
            top = dur_len[j]
            while u < top and dur_cum[j, u] < v:
                u += 1
            remaining = u


@dataclass(frozen=True)
class SimulationResult:
    """Empirical joint laws with per-cell batch-means standard errors.

    Row layout: queue length 0..n_cap, the last row also absorbing any
    longer queues.  Column layout for arbitrary/pre-arrival: 0 is idle,
    1..R is the batch size in service minus the threshold plus one; the
    departure array has only the R batch columns.
    """

    arb: np.ndarray
    arb_se: np.ndarray
    pre: np.ndarray
    pre_se: np.ndarray
    dep: np.ndarray
    dep_se: np.ndarray
    counts_arbitrary: np.ndarray
    counts_pre_arrival: np.ndarray
    counts_departure: np.ndarray
    batch_queue_means: np.ndarray
    slot_count: int
    warmup_slots: int
    censused_slots: int
    arrival_count: int
    departure_count: int
    seed: int


def _batch_stats(counts, denom):
    """Probability table and batch-means standard errors.

    counts: (K, ...) per-segment tallies; denom: (K,) per-segment event
    totals.  Segments are long enough to be treated as independent.
    """
    K = counts.shape[0]
    total = counts.sum(axis=0).astype(float)
    denom_total = float(denom.sum())
    if denom_total <= 0.0:
        zeros = np.zeros(counts.shape[1:])
        return zeros, np.full(counts.shape[1:], np.inf)
    p = total / denom_total
    safe = np.where(denom > 0, denom, 1).astype(float)
    per = counts / safe[(slice(None),) + (None,) * (counts.ndim - 1)]
    live = (denom > 0).sum()
    if live < 2:
        return p, np.full(counts.shape[1:], np.inf)
    dev = (per - p) ** 2
    dev[denom == 0] = 0.0
    se = np.sqrt(dev.sum(axis=0) / (live * (live - 1)))
    return p, se


def simulate(
    dmap: DMapProcess,
    services_by_r: dict,
    a: int,
    b: int,
    slots: int,
    seed: int,
    *,
    n_cap: int = 600,
    warmup_fraction: float = 0.1,
) -> SimulationResult:
    """Run the slot-level system and tally the three census laws.

    Event order inside slot [t, t+1): census at the slot opening, then the
    phase transition with a possible arrival, then a potential departure;
    a batch started by the arrival that completed the threshold begins
    counting down from the next slot, so a customer never leaves in its
    own arrival slot.
    """
    m = dmap.m
    R = b - a + 1
    trans_cum = np.cumsum(
        np.concatenate([dmap.C, dmap.D], axis=1), axis=1
    )
    trans_cum[:, -1] = 1.0

    lens = []
    pmfs = []
    for r in range(a, b + 1):
        s = pmf_array(services_by_r[r], tail_eps=1e-14)
        pmfs.append(s / s.sum())
        lens.append(len(s))
    max_len = max(lens)
    dur_cum = np.ones((R, max_len))
    for j, s in enumerate(pmfs):
        dur_cum[j, : len(s)] = np.cumsum(s)
    dur_len = np.array(lens, dtype=np.int64)

    warmup = int(slots * warmup_fraction)
    K = _BATCHES
    arb = np.zeros((K, n_cap + 1, R + 1, m), dtype=np.int64)
    pre = np.zeros((K, n_cap + 1, R + 1, m), dtype=np.int64)
    dep = np.zeros((K, n_cap + 1, R, m), dtype=np.int64)
    q_sum = np.zeros(K, dtype=np.int64)
    censused = np.zeros(K, dtype=np.int64)
    arrivals = np.zeros(K, dtype=np.int64)
    departures = np.zeros(K, dtype=np.int64)

    if slots > warmup:
        _slot_loop(
            trans_cum,
            dur_cum,
            dur_len,
            a,
            b,
            slots,
            warmup,
            n_cap,
            seed,
            arb,
            pre,
            dep,
            q_sum,
            censused,
            arrivals,
            departures,
        )

    arb_p, arb_se = _batch_stats(arb, censused)
    pre_p, pre_se = _batch_stats(pre, arrivals)
    dep_p, dep_se = _batch_stats(dep, departures)
    with np.errstate(invalid="ignore"):
        q_means = np.where(censused > 0, q_sum / np.maximum(censused, 1), 0.0)

    return SimulationResult(
        arb=arb_p,
        arb_se=arb_se,
        pre=pre_p,
        pre_se=pre_se,
        dep=dep_p,
        dep_se=dep_se,
        counts_arbitrary=arb.sum(axis=0),
        counts_pre_arrival=pre.sum(axis=0),
        counts_departure=dep.sum(axis=0),
        batch_queue_means=q_means,
        slot_count=slots,
        warmup_slots=warmup,
        censused_slots=int(censused.sum()),
        arrival_count=int(arrivals.sum()),
        departure_count=int(departures.sum()),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# exact finite-chain oracle


@dataclass(frozen=True)
class TruncatedChainResult:
    """Stationary law of the capped chain and its derived census laws."""

    p_idle: np.ndarray
    pi_busy: np.ndarray
    dep_pi: np.ndarray
    dep_phi: np.ndarray
    pre_idle: np.ndarray
    pre_busy: np.ndarray
    residual: float
    boundary_mass: float
    row_sum_error: float
    state_count: int


def solve_truncated_chain(
    dmap: DMapProcess,
    services_by_r: dict,
    a: int,
    b: int,
    n_cap: int,
    u_cap: int,
    *,
    leak_tol: float = 1e-9,
    direct_limit: int = 50_000,
) -> TruncatedChainResult:
    """Exact stationary solve of the capped slot chain.

    States are (queue 0..a-1, idle, phase) and (queue 0..n_cap, batch size,
    remaining slots 1..u_cap, phase).  One-slot transitions mirror the
    simulator's event order exactly; queue growth past the cap is parked in
    the top row, and the mass found there afterwards must stay below
    leak_tol or the caps are judged too small.
    """
    m = dmap.m
    R = b - a + 1
    C, D = dmap.C, dmap.D

    pmfs = {}
    for r in range(a, b + 1):
        s = pmf_array(services_by_r[r], tail_eps=1e-15)
        support = len(s) - 1
        if support > u_cap:
            raise CapTooSmall(
                f"service for batch {r} runs to {support} slots, above the "
                f"remaining-time cap {u_cap}",
                _MODULE,
            )
        pmfs[r] = s / s.sum()

    n_idle = a * m
    n_busy = (n_cap + 1) * R * u_cap * m
    S = n_idle + n_busy

    def idle_id(n, i):
        return n * m + i

    def busy_id(n, j, u, i):
        return n_idle + ((n * R + j) * u_cap + (u - 1)) * m + i

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def emit(row_id, col_id, val):
        rows.append(row_id)
        cols.append(col_id)
        vals.append(val)

    def start_targets(q, j_to, weight):
        # arrival or departure left q waiting; open a batch if possible
        out = []
        if q >= a:
            size = min(q, b)
            s = pmfs[size]
            jj = size - a
            for u in range(1, len(s)):
                if s[u] > 0.0:
                    out.append((busy_id(q - size, jj, u, j_to), weight * s[u]))
        else:
            out.append((idle_id(q, j_to), weight))
        return out

    # idle rows
    for n in range(a):
        for i in range(m):
            sid = idle_id(n, i)
            for j in range(m):
                if C[i, j] > 0.0:
                    emit(
                        np.array([sid]),
                        np.array([idle_id(n, j)]),
                        np.array([C[i, j]]),
                    )
                if D[i, j] > 0.0:
                    for tgt, w in start_targets(n + 1, j, D[i, j]):
                        emit(np.array([sid]), np.array([tgt]), np.array([w]))

    # busy rows with at least one more service slot: countdown continues
    if u_cap >= 2:
        ns = np.arange(n_cap + 1)
        js = np.arange(R)
        us = np.arange(2, u_cap + 1)
        N, J, U = np.meshgrid(ns, js, us, indexing="ij")
        N, J, U = N.ravel(), J.ravel(), U.ravel()
        Nn = np.minimum(N + 1, n_cap)
        for i in range(m):
            for j in range(m):
                src = n_idle + ((N * R + J) * u_cap + (U - 1)) * m + i
                if C[i, j] > 0.0:
                    tgt = n_idle + ((N * R + J) * u_cap + (U - 2)) * m + j
                    emit(src, tgt, np.full(len(src), C[i, j]))
                if D[i, j] > 0.0:
                    tgt = n_idle + ((Nn * R + J) * u_cap + (U - 2)) * m + j
                    emit(src, tgt, np.full(len(src), D[i, j]))

    # busy rows in their final service slot: the batch leaves
    for n in range(n_cap + 1):
        for j_col in range(R):
            for i in range(m):
                sid = busy_id(n, j_col, 1, i)
                for j in range(m):
                    if C[i, j] > 0.0:
                        for tgt, w in start_targets(n, j, C[i, j]):
                            emit(np.array([sid]), np.array([tgt]), np.array([w]))
                    if D[i, j] > 0.0:
                        # q - min(q, b) never exceeds n_cap, no clip needed
                        for tgt, w in start_targets(n + 1, j, D[i, j]):
                            emit(np.array([sid]), np.array([tgt]), np.array([w]))

    P = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(S, S),
    ).tocsr()

    row_sums = np.asarray(P.sum(axis=1)).ravel()
    row_sum_error = float(np.abs(row_sums - 1.0).max())
    if row_sum_error > 1e-9:
        raise TruncationFailure(
            f"transition rows sum to 1 within {row_sum_error:.3e}"
            " only; chain assembly is inconsistent",
            _MODULE,
        )

    if S <= direct_limit:
        A = (P.T - sparse.eye(S, format="csr")).tolil()
        A[S - 1, :] = 1.0
        rhs = np.zeros(S)
        rhs[S - 1] = 1.0
        x = spsolve(A.tocsc(), rhs)
    else:
        x = np.full(S, 1.0 / S)
        prev_diff = np.inf
        for it in range(200_000):
            x_new = x @ P
            x_new /= x_new.sum()
            diff = np.abs(x_new - x).sum()
            if it % 16 == 15 and 0 < diff < prev_diff:
                # one Aitken step on the slowest mode
                ratio = diff / prev_diff
                if 0.2 < ratio < 0.9999:
                    x_new = x_new + (x_new - x) * (ratio / (1.0 - ratio))
                    np.clip(x_new, 0.0, None, out=x_new)
                    x_new /= x_new.sum()
            prev_diff = diff
            x = x_new
            if diff < 1e-14:
                break

    np.clip(x, 0.0, None, out=x)
    x /= x.sum()
    residual = float(np.abs(x @ P - x).sum())

    idle = x[:n_idle].reshape(a, m)
    busy = x[n_idle:].reshape(n_cap + 1, R, u_cap, m)
    boundary = float(busy[n_cap].sum())
    if boundary > leak_tol:
        raise CapTooSmall(
            f"stationary mass {boundary:.3e} sits at the queue cap {n_cap}; "
            "enlarge the cap",
            _MODULE,
        )

    pi_busy = busy.sum(axis=2)

    # departure flux: final-slot states, after the slot's arrival step
    final = busy[:, :, 0, :]  # (n_cap + 1, R, m)
    dep = np.zeros((n_cap + 2, R, m))
    dep[: n_cap + 1] += np.einsum("nji,ik->njk", final, C)
    dep[1:] += np.einsum("nji,ik->njk", final, D)
    dep_total = dep.sum()
    dep_pi = dep / dep_total
    dep_phi = dep_pi.sum(axis=1)

    _, rate = stationary(dmap)
    pre_idle = idle @ D / rate
    pre_busy = pi_busy @ D / rate
    pre_mass = pre_idle.sum() + pre_busy.sum()
    pre_idle /= pre_mass
    pre_busy /= pre_mass

    return TruncatedChainResult(
        p_idle=idle,
        pi_busy=pi_busy,
        dep_pi=dep_pi,
        dep_phi=dep_phi,
        pre_idle=pre_idle,
        pre_busy=pre_busy,
        residual=residual,
        boundary_mass=boundary,
        row_sum_error=row_sum_error,
        state_count=S,
    )

"""Batch-size-dependent service time laws and their slot transforms.

Each batch size r in [a, b] gets its own service time distribution on
{1, 2, ...} slots.  Five kinds are supported: discrete phase type,
geometric, negative binomial, deterministic, and a finite pmf.  The two
memoryless-family kinds reduce to phase type; the finite kinds keep
polynomial transforms with denominator 1.

The central construction is the matrix generating function
A_r*(x) = sum_k s_r(k) (C + D x)**k as a ratio X_r(x) / y_r(x) of a
polynomial matrix and a scalar polynomial, plus the matching
coefficient family A_r(n) counting n arrivals over one service period.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _poly
from .arrival import DMapProcess, one_slot_gf, stationary
from .errors import (
    DegreeOverflow,
    NegativeEntry,
    NonStochastic,
    SingularPhaseMatrix,
    TruncationFailure,
)

_MODULE = "services"


@dataclass(frozen=True)
class PhaseService:
    """Discrete phase-type law (beta, T) on {1, 2, ...} slots."""

    beta: np.ndarray
    T: np.ndarray
    kind = "phase"


@dataclass(frozen=True)
class GeometricService:
    """Geometric law: completion probability mu per slot."""

    mu: float
    kind = "geometric"


@dataclass(frozen=True)
class NegBinomialService:
    """Sum of `stages` independent geometric(mu) stage durations."""

    stages: int
    mu: float
    kind = "negative-binomial"


@dataclass(frozen=True)
class DeterministicService:
    """Every service occupies exactly `slots` slots."""

    slots: int
    kind = "deterministic"


@dataclass(frozen=True)
class PmfService:
    """Finite support law; pmf[k] is the probability of k slots, pmf[0] = 0."""

    pmf: np.ndarray
    kind = "pmf"


ServiceModel = Union[
    PhaseService, GeometricService, NegBinomialService, DeterministicService, PmfService
]


@dataclass(frozen=True)
class RationalMatrixGF:
    """Service-period arrival transform X(x) / y(x) for one batch size."""

    X: np.ndarray  # (K + 1, m, m) numerator coefficient matrices
    y: np.ndarray  # (L + 1,) denominator coefficients, y[0] != 0
    r: int

    def eval(self, x):
        return _poly.pm_eval(self.X, x) / _poly.peval(self.y, x)

    def eval_deriv(self, x):
        yx = _poly.peval(self.y, x)
        dy = _poly.peval(_poly.pder(self.y), x)
        Xx = _poly.pm_eval(self.X, x)
        if self.X.shape[0] > 1:
            dX = _poly.pm_eval(
                self.X[1:] * np.arange(1, self.X.shape[0])[:, None, None], x
            )
        else:
            dX = np.zeros_like(Xx)
        return (dX * yx - Xx * dy) / (yx * yx)


@dataclass(frozen=True)
class ArrivalCountMatrices:
    """Coefficients A(n) of the service-period arrival transform.

    A[n][i, j] is the probability that a service leaves n arrivals
    behind and moves the arrival phase from i to j.
    """

    A: np.ndarray  # (n_max + 1, m, m)
    n_max: int
    tail_mass: float


# ---------------------------------------------------------------------------
# construction and checks


def make_service(kind: str, **kw) -> ServiceModel:
    """Build and validate one service model from plain data."""
    if kind == "phase":
        beta = np.array(kw["beta"], dtype=float)
        T = np.array(kw["T"], dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1] or len(beta) != T.shape[0]:
            raise NonStochastic("phase law needs beta of length matching T", _MODULE)
        if np.any(beta < 0.0) or np.any(T < 0.0):
            raise NegativeEntry("phase law entries must be nonnegative", _MODULE)
        s = beta.sum()
        if abs(s - 1.0) > 1e-9:
            raise NonStochastic(f"beta sums to {s:.12f}, not 1", _MODULE)
        beta = beta / s
        if np.any(T.sum(axis=1) > 1.0 + 1e-12):
            raise NonStochastic("rows of T must sum to at most 1", _MODULE)
        if np.max(np.abs(np.linalg.eigvals(T))) >= 1.0 - 1e-12:
            raise SingularPhaseMatrix(
                "T has spectral radius 1; service would never finish", _MODULE
            )
        beta.setflags(write=False)
        T.setflags(write=False)
        return PhaseService(beta, T)
    if kind == "geometric":
        mu = float(kw["mu"])
        if not 0.0 < mu <= 1.0:
            raise NonStochastic("geometric mu must lie in (0, 1]", _MODULE)
        return GeometricService(mu)
    if kind == "negative-binomial":
        stages = int(kw["stages"])
        mu = float(kw["mu"])
        if stages < 1:
            raise NonStochastic("negative binomial needs at least one stage", _MODULE)
        if not 0.0 < mu <= 1.0:
            raise NonStochastic("negative binomial mu must lie in (0, 1]", _MODULE)
        return NegBinomialService(stages, mu)
    if kind == "deterministic":
        slots = int(kw["slots"])
        if slots < 1:
            raise NonStochastic("deterministic service needs at least 1 slot", _MODULE)
        return DeterministicService(slots)
    if kind == "pmf":
        values = np.array(kw["values"], dtype=float)
        if values.ndim != 1 or len(values) == 0:
            raise NonStochastic("pmf needs a nonempty value list", _MODULE)
        if np.any(values < 0.0):
            raise NegativeEntry("pmf values must be nonnegative", _MODULE)
        s = values.sum()
        if abs(s - 1.0) > 1e-9:
            raise NonStochastic(f"pmf sums to {s:.12f}, not 1", _MODULE)
        pmf = np.concatenate([[0.0], values / s])
        pmf.setflags(write=False)
        return PmfService(pmf)
    raise NonStochastic(f"unknown service kind {kind!r}", _MODULE)


def as_phase(svc: ServiceModel) -> PhaseService | None:
    """Phase-type representation, or None for the finite-support kinds."""
    if isinstance(svc, PhaseService):
        return svc
    if isinstance(svc, GeometricService):
        return PhaseService(np.array([1.0]), np.array([[1.0 - svc.mu]]))
    if isinstance(svc, NegBinomialService):
        k, mu = svc.stages, svc.mu
        T = np.diag(np.full(k, 1.0 - mu)) + np.diag(np.full(k - 1, mu), 1)
        beta = np.zeros(k)
        beta[0] = 1.0
        return PhaseService(beta, T)
    return None


def mean_service_time(svc: ServiceModel) -> float:
    """Expected number of slots one service occupies."""
    if isinstance(svc, GeometricService):
        return 1.0 / svc.mu
    if isinstance(svc, NegBinomialService):
        return svc.stages / svc.mu
    if isinstance(svc, DeterministicService):
        return float(svc.slots)
    if isinstance(svc, PmfService):
        return float(np.arange(len(svc.pmf)) @ svc.pmf)
    nu = len(svc.beta)
    try:
        v = np.linalg.solve(np.eye(nu) - svc.T, np.ones(nu))
    except np.linalg.LinAlgError as exc:
        raise SingularPhaseMatrix(f"I - T is singular: {exc}", _MODULE) from exc
    return float(svc.beta @ v)


def pmf_array(svc: ServiceModel, tail_eps: float = 1e-15, cap: int = 200_000) -> np.ndarray:
    """Probabilities s[k] of a k-slot service, truncated at tail <= tail_eps.

    Finite kinds return their exact support.  s[0] is always 0.
    """
    if isinstance(svc, DeterministicService):
        s = np.zeros(svc.slots + 1)
        s[svc.slots] = 1.0
        return s
    if isinstance(svc, PmfService):
        return np.asarray(svc.pmf)
    ph = as_phase(svc)
    t0 = (np.eye(len(ph.beta)) - ph.T) @ np.ones(len(ph.beta))
    out = [0.0]
    front = ph.beta.copy()
    for _ in range(cap):
        out.append(float(front @ t0))
        front = front @ ph.T
        if front.sum() <= tail_eps:
            return np.array(out)
    raise TruncationFailure(
        f"service tail above {tail_eps:.1e} after {cap} slots", _MODULE
    )


def stability_ratio(dmap: DMapProcess, svc_b: ServiceModel, b: int) -> float:
    """Offered load: arrivals per slot times the full-batch service time
    over the batch capacity.  Steady state needs a value below 1."""
    _, lam = stationary(dmap)
    return lam * mean_service_time(svc_b) / b


# ---------------------------------------------------------------------------
# transforms


def build_rational_gf(
    dmap: DMapProcess, svc: ServiceModel, r: int, degree_cap: int = 2000
) -> RationalMatrixGF:
    """Service-period arrival transform as a rational matrix in x.

    Phase-family kinds use the Kronecker resolvent form: the denominator
    is the determinant of I - (C + D x) (x) T and the numerator combines
    its adjugate with the start and exit vectors.  Finite kinds produce a
    plain polynomial with denominator 1.
    """
    m = dmap.m
    ph = as_phase(svc)
    if ph is None:
        s = pmf_array(svc)
        if len(s) - 1 > degree_cap:
            raise DegreeOverflow(
                f"support {len(s) - 1} exceeds degree cap {degree_cap}", _MODULE
            )
        X = np.zeros((len(s), m, m))
        power = _poly.pm_eye(m)
        slot = np.stack([dmap.C, dmap.D])
        for k in range(1, len(s)):
            power = _poly.pm_mul(power, slot)
            if s[k] != 0.0:
                X[: k + 1] += s[k] * power
        return RationalMatrixGF(X, np.array([1.0]), r)
    nu = len(ph.beta)
    if m * nu > degree_cap:
        raise DegreeOverflow(
            f"phase product size {m * nu} exceeds degree cap {degree_cap}", _MODULE
        )
    t0 = (np.eye(nu) - ph.T) @ np.ones(nu)
    # M(x) = I - (C + D x) (x) T, affine in x
    M = np.stack([np.eye(m * nu) - np.kron(dmap.C, ph.T), -np.kron(dmap.D, ph.T)])
    y, adj = _poly.pm_det_adj(M)
    start = np.kron(np.eye(m), ph.beta[None, :])  # m x (m nu)
    exit_ = np.stack([np.kron(dmap.C, t0[:, None]), np.kron(dmap.D, t0[:, None])])
    X = _poly.pm_mul(_poly.pm_const(start), _poly.pm_mul(adj, exit_))
    return RationalMatrixGF(_poly.pm_trim(X, 1e-14), _poly.trim(y, 1e-14), r)


def arrival_count_matrices(
    dmap: DMapProcess,
    svc: ServiceModel,
    eps: float = 1e-12,
    n_cap: int = 10_000,
) -> ArrivalCountMatrices:
    """Arrival-count coefficient family A(n) for one service period.

    Rolls the per-slot joint recursion over the service length and
    accumulates under the service pmf.  n_max is the smallest n whose
    cumulative mass is within eps of 1 in every row.
    """
    m = dmap.m
    s = pmf_array(svc, tail_eps=min(eps * 1e-3, 1e-15))
    kmax = len(s) - 1
    ncap = min(kmax, n_cap)
    acc = np.zeros((ncap + 1, m, m))
    layer = np.eye(m)[None, :, :]  # A(n, k) for the current k
    for k in range(1, kmax + 1):
        hi = min(k, ncap)
        new = np.zeros((hi + 1, m, m))
        new[: layer.shape[0]] = np.einsum("ij,njk->nik", dmap.C, layer)
        new[1 : layer.shape[0] + 1][: hi] += np.einsum(
            "ij,njk->nik", dmap.D, layer[: hi]
        )
        layer = new
        if s[k] != 0.0:
            acc[: hi + 1] += s[k] * layer
    dev = np.abs(1.0 - np.cumsum(acc.sum(axis=2), axis=0))
    ok = np.nonzero(dev.max(axis=1) <= eps)[0]
    if len(ok) == 0:
        raise TruncationFailure(
            f"arrival-count mass misses 1 by {dev[-1].max():.3e} within cap {ncap}",
            _MODULE,
        )
    n_max = int(ok[0])
    out = acc[: n_max + 1].copy()
    out.setflags(write=False)
    return ArrivalCountMatrices(out, n_max, float(dev[n_max].max()))

"""Characteristic polynomial of the full-batch operator and its roots.

The steady-state transform at departures is determined by the matrix
x**b I - A_b*(x).  Clearing the service denominator turns its
determinant into a polynomial; under stability that polynomial has
exactly m*b zeros in the closed unit disk, one of them at x = 1, and
the zeros outside the disk drive the geometric tail of the queue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npp

from . import _poly
from .errors import ClusterDetected, DegreeOverflow, RootCountMismatch, SingularSolve
from .services import RationalMatrixGF

_MODULE = "roots"


@dataclass(frozen=True)
class CharacteristicSystem:
    """Cleared balance operator W(x) and its determinant."""

    W: np.ndarray  # (K, m, m) polynomial matrix x**b y_b(x) I - X_b(x)
    upsilon: np.ndarray  # determinant coefficients
    M1: int  # determinant degree after trimming
    y_b: np.ndarray  # denominator of the full-batch transform
    gf_b: RationalMatrixGF
    b: int
    upsilon_raw: np.ndarray = None  # untrimmed determinant, kept for factoring

    @property
    def m(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class RootSet:
    """Classified zeros of the characteristic polynomial."""

    inside: np.ndarray  # m * b zeros with |x| <= 1, includes x = 1
    outside: np.ndarray
    residuals_inside: np.ndarray
    residuals_outside: np.ndarray
    boundary_tol: float


def build_characteristic(
    gf_b: RationalMatrixGF,
    b: int,
    trim_rel: float = 1e-12,
    degree_cap: int = 2000,
) -> CharacteristicSystem:
    """Assemble W(x) = x**b y_b(x) I - X_b(x) and its determinant."""
    X, y = gf_b.X, gf_b.y
    m = X.shape[1]
    diag = _poly.pshift(y, b)
    K = max(len(diag), X.shape[0])
    if m * (K - 1) > degree_cap:
        raise DegreeOverflow(
            f"characteristic degree bound {m * (K - 1)} exceeds cap {degree_cap}",
            _MODULE,
        )
    W = np.zeros((K, m, m))
    W[: X.shape[0]] = -X
    W[: len(diag), range(m), range(m)] += diag[:, None]
    ups_raw, _ = _poly.pm_det_adj(W)
    ups = _poly.trim(ups_raw, trim_rel)
    scale = float(np.abs(ups).sum())
    at_one = abs(_poly.peval(ups, 1.0))
    if not at_one <= 1e-8 * scale:
        raise SingularSolve(
            f"characteristic value at x=1 is {at_one:.3e}, expected 0 "
            f"(scale {scale:.3e})",
            _MODULE,
        )
    return CharacteristicSystem(
        W, ups, len(ups) - 1, y, gf_b, b, np.asarray(ups_raw, dtype=float)
    )


def _polish(q: np.ndarray, dq: np.ndarray, roots: np.ndarray, steps: int = 3):
    """Newton-polish each root of q, keeping only improving steps."""
    out = roots.astype(complex).copy()
    for i, z in enumerate(out):
        best = z
        fbest = abs(npp.polyval(z, q))
        for _ in range(steps):
            d = npp.polyval(z, dq)
            if d == 0.0:
                break
            z = z - npp.polyval(z, q) / d
            f = abs(npp.polyval(z, q))
            if f < fbest:
                best, fbest = z, f
            else:
                break
        out[i] = best
    return out


def _pair_conjugates(roots: np.ndarray, im_tol: float) -> np.ndarray:
    """Snap near-real roots to the axis and exact-pair the complex ones."""
    out = roots.copy()
    scale = 1.0 + np.abs(out)
    real_mask = np.abs(out.imag) <= im_tol * scale
    out[real_mask] = out[real_mask].real
    used = real_mask.copy()
    for i in range(len(out)):
        if used[i] or out[i].imag < 0:
            continue
        rest = np.nonzero(~used & (np.arange(len(out)) != i) & (out.imag < 0))[0]
        if len(rest) == 0:
            continue
        j = rest[np.argmin(np.abs(out[rest] - np.conj(out[i])))]
        z = 0.5 * (out[i] + np.conj(out[j]))
        out[i], out[j] = z, np.conj(z)
        used[i] = used[j] = True
    return out


def find_roots(
    cs: CharacteristicSystem,
    boundary_tol: float = 1e-9,
    cluster_tol: float = 1e-7,
    im_tol: float = 1e-9,
) -> RootSet:
    """Locate, polish, and classify all zeros of the characteristic polynomial.

    x = 1 is removed by exact synthetic division before the companion
    solve and re-inserted into the inside set afterwards.  If the unit
    disk does not hold exactly m*b zeros under the default boundary
    tolerance, nearby tolerances are swept before giving up.
    """
    m, b = cs.m, cs.b
    mb = m * b
    c = cs.upsilon
    if len(c) - 1 < mb:
        raise RootCountMismatch(
            f"degree {len(c) - 1} cannot hold {mb} unit-disk zeros", _MODULE
        )
    q, _ = _poly.deflate_at_one(c)
    q = q / np.max(np.abs(q))
    raw = npp.polyroots(q)
    polished = _polish(q, npp.polyder(q), raw)
    polished = _pair_conjugates(polished, im_tol)

    tols = [boundary_tol] + [t for t in np.power(10.0, np.arange(-12, -5))]
    chosen = None
    for tol in tols:
        if np.count_nonzero(np.abs(polished) <= 1.0 + tol) == mb - 1:
            chosen = float(tol)
            break
    if chosen is None:
        n_in = np.count_nonzero(np.abs(polished) <= 1.0 + boundary_tol)
        raise RootCountMismatch(
            f"found {n_in + 1} unit-disk zeros, expected {mb}", _MODULE
        )
    mask = np.abs(polished) <= 1.0 + chosen
    inside = np.concatenate([polished[mask], [1.0 + 0.0j]])
    outside = polished[~mask]

    order = np.argsort(np.abs(outside))
    outside = outside[order]

    # distinctness is required only of the unit-disk roots that feed the
    # boundary system; exterior near-pairs are normal for batch-dependent
    # service (shared denominator factors) and are re-resolved downstream
    dist = np.abs(inside[:, None] - inside[None, :])
    np.fill_diagonal(dist, np.inf)
    lim = cluster_tol * np.maximum(1.0, np.abs(inside))[:, None]
    bad = np.argwhere(dist < lim)
    if len(bad):
        pairs = sorted({tuple(sorted(p)) for p in bad})
        raise ClusterDetected(
            f"{len(pairs)} unit-disk root pair(s) closer than {cluster_tol:g}; "
            "the expansion requires distinct roots",
            _MODULE,
            clusters=[(inside[i], inside[j]) for i, j in pairs],
        )

    scale = float(np.abs(c).sum())
    res_in = np.abs(npp.polyval(inside, c)) / scale
    res_out = np.array(
        [abs(npp.polyval(z, c)) / _poly.eval_scale(c, z) for z in outside]
    )
    return RootSet(inside, outside, res_in, res_out, chosen)

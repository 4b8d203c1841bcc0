"""Joint queue and batch-size distribution at departure epochs.

The transform of the departure-epoch state satisfies a matrix identity
whose left factor x**b I - A_b*(x) is singular at each unit-disk zero
of the characteristic polynomial.  Analyticity of the transform forces
one linear condition on the m*b boundary probabilities per interior
zero; together with the balance identity at x = 1, its derivative, and
the normalization they determine the boundary vector uniquely.

Extraction then works per batch size.  Sizes below b combine boundary
vectors with arrival-count coefficient matrices.  The full-batch block
is a rational transform whose poles live strictly outside the unit
disk; they are enumerated directly (service-denominator zeros plus the
genuine factor of the characteristic determinant) and measured by
small contour integrals around each site, which handles double poles
from shared service-phase eigenvalues without special cases.  A
fine-grained circle transform cross-checks the low-order coefficients
and supplies the polynomial quotient when the transform is improper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npp

from . import _poly
from .arrival import DMapProcess, next_arrival_phase_matrix
from .errors import (
    ClusterDetected,
    IllConditioned,
    NegativeProbability,
    TailTruncationFailure,
)
from .roots import CharacteristicSystem, RootSet
from .services import (
    ArrivalCountMatrices,
    RationalMatrixGF,
    ServiceModel,
    arrival_count_matrices,
)

_MODULE = "departure"


@dataclass(frozen=True)
class BoundaryUnknowns:
    """Departure-epoch masses phi[n] for queue lengths 0..b-1.

    phi[n][i] is the steady-state probability that a departure leaves n
    waiting customers with the arrival process in phase i.  phi_total
    is the phase mass over all queue lengths (the transform at x = 1).
    """

    phi: np.ndarray  # (b, m)
    phi_total: np.ndarray  # (m,)
    dbar_powers: np.ndarray  # (a + 1, m, m), dbar_powers[k] = ((I-C)^-1 D)**k
    condition: float
    max_residual: float
    max_clamp: float


@dataclass(frozen=True)
class PartialFraction:
    """Pole representation of the full-batch transform tail.

    First-order terms contribute gammas[k] / alphas[k]**(n+1) to the
    coefficient of x**n; second-order terms (double poles) contribute
    gammas2[k] * (n+1) / alphas2[k]**(n+2); tau is the polynomial part.
    Deeper poles live in ``higher``: an entry (d, alphas_d, gammas_d)
    adds gammas_d[k] / (alphas_d[k] - x)**d to the function, which is
    gammas_d[k] * C(n+d-1, d-1) / alphas_d[k]**(n+d) at coefficient n.
    """

    alphas: np.ndarray  # (K,) simple-pole sites
    gammas: np.ndarray  # (K, m) rows, coefficient of 1 / (alpha - x)
    tau: np.ndarray | None  # (q + 1, m) quotient polynomial, or None
    alphas2: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    gammas2: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=complex))
    higher: tuple = ()  # ((order, alphas_d, gammas_d), ...) for order >= 3


def _pf_blocks(pf: PartialFraction):
    """Yield (order, alphas, gammas) over every stored pole block."""
    yield 1, pf.alphas, pf.gammas
    yield 2, pf.alphas2, pf.gammas2
    for order, al, ga in pf.higher:
        yield order, al, ga


@dataclass(frozen=True)
class DepartureDistribution:
    """Joint departure-epoch distribution up to a mass-complete cutoff."""

    pi: np.ndarray  # (n_trunc + 1, b - a + 1, m), batch axis is r - a
    phi_marginal: np.ndarray  # (n_trunc + 1, m)
    n_trunc: int
    partial_fraction: PartialFraction
    tail_mass: float
    max_clamp: float
    mass_before_renorm: float
    series_deviation: float  # coefficient check against the circle transform


def _dbar_powers(dmap: DMapProcess, a: int) -> np.ndarray:
    dbar = next_arrival_phase_matrix(dmap)
    out = np.empty((a + 1, dmap.m, dmap.m))
    out[0] = np.eye(dmap.m)
    for k in range(1, a + 1):
        out[k] = out[k - 1] @ dbar
    return out


def _balance_at(cs: CharacteristicSystem, x: complex) -> np.ndarray:
    """x**b I - A_b*(x)."""
    return x**cs.b * np.eye(cs.m) - cs.gf_b.eval(x)


def _right_null_vector(B: np.ndarray) -> np.ndarray:
    _, _, Vh = np.linalg.svd(B)
    return Vh[-1].conj()


def _blocks_at_one(
    gfs: dict[int, RationalMatrixGF], dbar_powers: np.ndarray, a: int, b: int
):
    """Balance-identity coefficient matrices of phi[n] evaluated at x = 1."""
    m = dbar_powers.shape[1]
    Ab1 = gfs[b].eval(1.0)
    Aa1 = gfs[a].eval(1.0)
    out = np.empty((b, m, m))
    for n in range(a):
        out[n] = dbar_powers[a - n] @ Aa1 - Ab1
    for n in range(a, b):
        out[n] = gfs[n].eval(1.0) - Ab1
    return out


def _deriv_blocks_at_one(
    gfs: dict[int, RationalMatrixGF], dbar_powers: np.ndarray, a: int, b: int
):
    """Derivative of the balance-identity coefficients at x = 1."""
    Ab1 = gfs[b].eval(1.0)
    dAb1 = gfs[b].eval_deriv(1.0)
    Aa1 = gfs[a].eval(1.0)
    dAa1 = gfs[a].eval_deriv(1.0)
    m = dbar_powers.shape[1]
    out = np.empty((b, m, m))
    for n in range(a):
        out[n] = dbar_powers[a - n] @ (b * Aa1 + dAa1) - (n * Ab1 + dAb1)
    for n in range(a, b):
        An1 = gfs[n].eval(1.0)
        dAn1 = gfs[n].eval_deriv(1.0)
        out[n] = (b * An1 + dAn1) - (n * Ab1 + dAb1)
    return out


def solve_boundary_unknowns(
    cs: CharacteristicSystem,
    roots: RootSet,
    gfs: dict[int, RationalMatrixGF],
    dmap: DMapProcess,
    a: int,
    neg_tol: float = 1e-8,
    cond_max: float = 1e12,
    res_tol: float = 1e-8,
) -> BoundaryUnknowns:
    """Solve the m*b boundary masses from root conditions and normalization.

    Each interior root z contributes the condition that the numerator of
    the full-batch transform vanish along the null direction eta of
    x**b I - A_b*(x) there; conjugate pairs yield a real and an
    imaginary equation.  The balance identity at x = 1, its derivative
    against the all-ones vector, and total mass 1 close the system, with
    the transform value at x = 1 carried as m auxiliary unknowns.
    """
    m, b = cs.m, cs.b
    mb = m * b
    dbp = _dbar_powers(dmap, a)

    interior = [z for z in roots.inside if abs(z - 1.0) > 1e-9]
    if len(interior) != mb - 1:
        raise IllConditioned(
            f"expected {mb - 1} interior roots besides x=1, got {len(interior)}",
            _MODULE,
        )
    eye = np.eye(m)
    rows: list[np.ndarray] = []
    for z in interior:
        if abs(z) < 1e-6:
            raise IllConditioned(
                "interior root at the origin, boundary system degenerates", _MODULE
            )
        if z.imag < 0:
            continue
        eta = _right_null_vector(_balance_at(cs, z))
        Aa = gfs[a].eval(z)
        coef = np.empty((b, m), dtype=complex)
        for n in range(a):
            coef[n] = (dbp[a - n] @ Aa - z**n * eye) @ eta
        for n in range(a, b):
            coef[n] = (gfs[n].eval(z) - z**n * eye) @ eta
        row = np.concatenate([coef.reshape(mb), np.zeros(m, dtype=complex)])
        rows.append(row.real)
        if abs(z.imag) > 0:
            rows.append(row.imag)

    B1 = np.real(_balance_at(cs, 1.0 + 0.0j))
    blocks1 = _blocks_at_one(gfs, dbp, a, b)
    for j in range(m - 1):
        rows.append(np.concatenate([-blocks1[:, :, j].reshape(mb), B1[:, j]]))

    e = np.ones(m)
    dB1e = b * e - gfs[b].eval_deriv(1.0) @ e
    dblocks1e = _deriv_blocks_at_one(gfs, dbp, a, b) @ e
    rows.append(np.concatenate([-dblocks1e.reshape(mb), dB1e]))

    norms = np.array([np.linalg.norm(r) for r in rows])
    if norms.min() < 1e-12:
        raise IllConditioned("degenerate boundary condition row", _MODULE)
    Z = np.vstack([r / s for r, s in zip(rows, norms)])
    Z = np.vstack([Z, np.concatenate([np.zeros(mb), e])])
    rhs = np.zeros(mb + m)
    rhs[-1] = 1.0
    if Z.shape != (mb + m, mb + m):
        raise IllConditioned(
            f"boundary system is {Z.shape}, expected {(mb + m, mb + m)}", _MODULE
        )
    cond = float(np.linalg.cond(Z))
    if not np.isfinite(cond) or cond > cond_max:
        raise IllConditioned(
            f"boundary system condition {cond:.3e} exceeds {cond_max:.1e}", _MODULE
        )
    sol = np.linalg.solve(Z, rhs)

    max_res = float(np.max(np.abs(Z @ sol - rhs))) / (
        float(np.linalg.norm(sol)) + 1e-30
    )
    if max_res > res_tol:
        raise IllConditioned(
            f"boundary residual {max_res:.3e} exceeds {res_tol:.1e}", _MODULE
        )

    phi = sol[:mb].reshape(b, m)
    total = sol[mb:]
    low = float(min(phi.min(), total.min()))
    if low < -neg_tol:
        raise NegativeProbability(
            f"boundary mass {low:.3e} below clamp window -{neg_tol:.1e}", _MODULE
        )
    max_clamp = float(max(0.0, -low))
    phi = np.maximum(phi, 0.0)
    total = np.maximum(total, 0.0)
    return BoundaryUnknowns(phi, total, dbp, cond, max_res, max_clamp)


def _batch_gf_eval(gf: RationalMatrixGF, xs: np.ndarray) -> np.ndarray:
    """Evaluate a rational matrix transform at many points, (N, m, m)."""
    K = gf.X.shape[0]
    P = xs[:, None] ** np.arange(K)
    num = np.tensordot(P, gf.X, axes=(1, 0))
    den = npp.polyval(xs, gf.y)
    return num / den[:, None, None]


def _full_batch_values(
    xs: np.ndarray,
    bu: BoundaryUnknowns,
    gfs: dict[int, RationalMatrixGF],
    a: int,
    b: int,
) -> np.ndarray:
    """Rows of the full-batch transform at many points, (N, m).

    Solves psi(x) (x**b I - A_b*(x)) = F(x) pointwise, with F built from
    the boundary masses; stable even close to transform poles because
    the blow-up sits in the solved factor.
    """
    xs = np.asarray(xs, dtype=complex)
    m = bu.phi.shape[1]
    eye = np.eye(m)
    acc = np.zeros((len(xs), m), dtype=complex)
    Aa = _batch_gf_eval(gfs[a], xs)
    for n in range(a):
        acc += np.einsum(
            "i,nij->nj", bu.phi[n] @ bu.dbar_powers[a - n], Aa
        ) - np.outer(xs**n, bu.phi[n])
    for n in range(a, b):
        An = _batch_gf_eval(gfs[n], xs)
        acc += np.einsum("i,nij->nj", bu.phi[n], An) - np.outer(xs**n, bu.phi[n])
    Ab = _batch_gf_eval(gfs[b], xs)
    F = np.einsum("ni,nij->nj", acc, Ab)
    B = (xs**b)[:, None, None] * eye - Ab
    return np.linalg.solve(np.transpose(B, (0, 2, 1)), F[:, :, None])[:, :, 0]


def _service_pole_sites(
    gfs: dict[int, RationalMatrixGF], a: int, b: int
) -> np.ndarray:
    """Zeros of the service denominators y_r, r = a..b, polished per r."""
    sites: list[complex] = []
    for r in range(a, b + 1):
        y = gfs[r].y
        if len(y) < 2:
            continue
        zs = npp.polyroots(y)
        dy = _poly.pder(y)
        for z in zs:
            for _ in range(2):
                d = npp.polyval(z, dy)
                if d == 0.0:
                    break
                z = z - npp.polyval(z, y) / d
            if abs(z) <= 1.0 + 1e-9:
                raise IllConditioned(
                    f"service denominator zero at |x| = {abs(z):.6f} inside the "
                    "unit disk",
                    _MODULE,
                )
            sites.append(complex(z))
    return np.array(sites, dtype=complex)


def _genuine_characteristic_sites(cs: CharacteristicSystem) -> np.ndarray:
    """Outside zeros of the characteristic determinant's genuine factor.

    For phase-type full-batch service the determinant carries the factor
    y_b**(m-1) whose zeros are not transform poles; dividing it out
    exactly leaves the factor whose outside zeros are the true sites.
    """
    ups = np.asarray(cs.upsilon_raw, dtype=float)
    y = np.asarray(cs.y_b, dtype=float)
    m = cs.m
    div = np.array([1.0])
    for _ in range(m - 1):
        div = np.convolve(div, y)
    if len(div) > 1:
        nq = len(ups) - len(div) + 1
        if nq < 1:
            raise IllConditioned(
                "characteristic degree below its structural service factor",
                _MODULE,
            )
        q = np.zeros(nq)
        work = ups.copy()
        for k in range(nq):
            q[k] = work[k] / div[0]
            work[k : k + len(div)] -= q[k] * div
        scale = float(np.abs(ups).max())
        if float(np.abs(work).max()) > 1e-7 * scale:
            raise IllConditioned(
                "characteristic determinant does not carry the expected "
                f"service factor (remainder {np.abs(work).max() / scale:.2e})",
                _MODULE,
            )
        xi = _poly.trim(q, 1e-13)
    else:
        xi = _poly.trim(ups, 1e-13)
    zs = npp.polyroots(xi)
    dxi = _poly.pder(xi)
    for i, z in enumerate(zs):
        for _ in range(3):
            d = npp.polyval(z, dxi)
            if d == 0.0:
                break
            znew = z - npp.polyval(z, xi) / d
            if abs(npp.polyval(znew, xi)) < abs(npp.polyval(z, xi)):
                z = znew
            else:
                break
        zs[i] = z
    inside = int(np.sum(np.abs(zs) <= 1.0 + 1e-9))
    if inside != m * cs.b:
        raise IllConditioned(
            f"genuine characteristic factor has {inside} unit-disk zeros, "
            f"expected {m * cs.b}",
            _MODULE,
        )
    return zs[np.abs(zs) > 1.0 + 1e-9]


def _merge_sites(raw: np.ndarray, tol_rel: float = 1e-6) -> np.ndarray:
    """Cluster candidate pole locations, averaging near-coincident ones."""
    if len(raw) == 0:
        return raw
    order = np.argsort(np.abs(raw), kind="stable")
    merged: list[complex] = []
    counts: list[int] = []
    for z in raw[order]:
        scale = 1.0 + abs(z)
        placed = False
        for i, w in enumerate(merged):
            if abs(z - w) <= tol_rel * scale:
                merged[i] = (w * counts[i] + z) / (counts[i] + 1)
                counts[i] += 1
                placed = True
                break
        if not placed:
            merged.append(complex(z))
            counts.append(1)
    out = np.array(merged, dtype=complex)
    im_small = np.abs(out.imag) <= 1e-9 * (1.0 + np.abs(out))
    out[im_small] = out[im_small].real
    return out


def _laurent_at_sites(
    sites: np.ndarray,
    bu: BoundaryUnknowns,
    gfs: dict[int, RationalMatrixGF],
    a: int,
    b: int,
    order_tol: float = 1e-5,
    n_points: int = 32,
    max_order: int = 8,
):
    """Contour-measure the principal part of the transform at each site.

    Returns one (site, phase) coefficient array per pole order 1..max_order
    in the 1 / (alpha - x)**order convention; raises if any site still
    shows singular content beyond max_order.
    """
    m = bu.phi.shape[1]
    K = len(sites)
    coeffs = [np.zeros((K, m), dtype=complex) for _ in range(max_order)]
    omega = np.exp(2j * np.pi * np.arange(n_points) / n_points)
    for k, z in enumerate(sites):
        gap = np.inf
        if K > 1:
            others = np.abs(sites - z)
            gap = float(np.min(others[others > 0]))
        delta = min(1e-3 * (1.0 + abs(z)), 0.25 * gap, 0.45 * (abs(z) - 1.0))
        pts = z + delta * omega
        vals = _full_batch_values(pts, bu, gfs, a, b)
        vmax = float(np.abs(vals).max()) + 1e-300
        guard = np.abs(np.mean(vals * omega[:, None] ** (max_order + 1), axis=0))
        if float(guard.max()) / vmax > order_tol:
            raise ClusterDetected(
                f"transform pole of order beyond {max_order} near {z:.6g}",
                _MODULE,
                clusters=[complex(z)],
            )
        for d in range(1, max_order + 1):
            # mean(vals * (x - z)**d) picks the order-d Laurent coefficient;
            # the delta powers cancel when weights stay on the unit circle
            md = np.mean(vals * omega[:, None] ** d, axis=0)
            if d >= 3 and float(np.abs(md).max()) / vmax <= order_tol:
                continue  # below the measurement floor, quadrature dust
            coeffs[d - 1][k] = (-1.0) ** d * md * delta**d
    return coeffs


def _pole_series(pf: PartialFraction, n_lo: int, n_hi: int) -> np.ndarray:
    """Coefficients n_lo..n_hi-1 of the pole part, (n_hi - n_lo, m)."""
    m = pf.gammas.shape[1] if len(pf.gammas) else pf.gammas2.shape[1]
    ns = np.arange(n_lo, n_hi, dtype=float)
    out = np.zeros((len(ns), m))
    for order, al, ga in _pf_blocks(pf):
        if not len(al):
            continue
        # exp of the log power underflows cleanly where alpha**(n+order)
        # would overflow and poison the row with inf / nan
        powers = np.exp(-np.outer(ns + order, np.log(al)))
        wts = np.ones(len(ns))
        for j in range(1, order):
            wts = wts * (ns + j) / j
        out += np.real((wts[:, None] * powers) @ ga)
    return out


def _circle_series(
    bu: BoundaryUnknowns,
    gfs: dict[int, RationalMatrixGF],
    a: int,
    b: int,
    radius: float,
    n_fft: int,
    k_fft: int = 8192,
):
    """Low-order transform coefficients via an FFT over a circle in the
    pole-free region.

    Evaluation noise on the circle is amplified by radius**-n when read
    off as coefficients, so the usable window shrinks as the radius
    moves away from 1; the returned noise floor array tracks that.
    """
    m = bu.phi.shape[1]
    half = k_fft // 2
    ang = np.exp(2j * np.pi * np.arange(half + 1) / k_fft)
    vals_half = _full_batch_values(radius * ang, bu, gfs, a, b)
    vals = np.empty((k_fft, m), dtype=complex)
    vals[: half + 1] = vals_half
    vals[half + 1 :] = np.conj(vals_half[1:half][::-1])
    vmax = float(np.abs(vals).max())
    coef = np.fft.fft(vals, axis=0)[:n_fft].real / k_fft
    amp = float(radius) ** -np.arange(n_fft)
    noise = 10.0 * np.finfo(float).eps * vmax * amp
    n_use = int(np.searchsorted(noise, 1e-12))
    n_use = max(min(n_use, n_fft), 8)
    return coef[:n_use] * amp[:n_use, None], noise[:n_use]


def extract_departure_distribution(
    bu: BoundaryUnknowns,
    cs: CharacteristicSystem,
    roots: RootSet,
    dmap: DMapProcess,
    services_by_r: dict[int, ServiceModel],
    gfs: dict[int, RationalMatrixGF],
    a: int,
    eps: float = 1e-10,
    n_cap: int = 50_000,
    neg_tol: float = 1e-8,
    mass_tol: float = 1e-9,
    count_matrices: dict[int, ArrivalCountMatrices] | None = None,
) -> DepartureDistribution:
    """Assemble the joint departure distribution over (n, r, phase).

    Batch sizes a..b-1 pair boundary masses with arrival-count matrices;
    the full-batch block combines the measured pole series with a
    polynomial quotient recovered from the circle transform, which also
    certifies that the pole set is complete.
    """
    b, m = cs.b, cs.m
    del roots  # boundary roots enter via bu; pole sites are rebuilt exactly

    sites = _merge_sites(
        np.concatenate(
            [_service_pole_sites(gfs, a, b), _genuine_characteristic_sites(cs)]
        )
    )
    laurent = _laurent_at_sites(sites, bu, gfs, a, b)

    minmod = float(np.abs(sites).min()) if len(sites) else np.inf
    radius = min(0.99, 0.985 * minmod)
    psi_low, noise = _circle_series(bu, gfs, a, b, radius, n_fft=2048)
    n_low = len(psi_low)

    # a far site with an outsized residue contributes huge low-order terms
    # that the remainder polynomial must cancel, and reconstructing O(1)
    # coefficients as differences of such terms loses their float rounding;
    # when the site's whole footprint dies inside the low-order window it
    # is numerically a polynomial, so fold it into the remainder instead
    span_cap = min(40, max(8, n_low - 64))
    log_site = np.log(np.maximum(np.abs(sites), 1.0 + 1e-12))
    span = np.full(len(sites), -np.inf)
    peak = np.zeros(len(sites))
    lead_term = np.zeros(len(sites))
    for order, rows in enumerate(laurent, start=1):
        gmax = np.abs(rows).max(axis=1)
        peak = np.maximum(peak, gmax)
        lead_term = np.maximum(lead_term, gmax * np.exp(-order * log_site))
        with np.errstate(divide="ignore"):
            span = np.maximum(span, (np.log(gmax) + 46.0) / log_site - order)
    keep_site = (peak > 1e-15) & ~((span <= span_cap) & (lead_term > 1e3))

    blocks = []
    for order, rows in enumerate(laurent, start=1):
        mask = keep_site & (np.abs(rows).max(axis=1) > 1e-15)
        blocks.append((order, sites[mask], rows[mask]))
    pf = PartialFraction(
        blocks[0][1],
        blocks[0][2],
        None,
        blocks[1][1],
        blocks[1][2],
        tuple((d, al, ga) for d, al, ga in blocks[2:] if len(al)),
    )

    rem = psi_low - _pole_series(pf, 0, n_low)
    rem_scale = max(1.0, float(np.abs(psi_low).max()))
    thr = np.maximum(1e-12 * rem_scale, 10.0 * noise)
    sig = np.abs(rem).max(axis=1) > thr
    tau_deg = int(np.nonzero(sig)[0].max()) if sig.any() else -1
    if tau_deg > n_low - 32:
        raise IllConditioned(
            "pole part fails to close the transform; residual persists at "
            f"coefficient {tau_deg} of {n_low}",
            _MODULE,
        )
    tau = rem[: tau_deg + 1].copy() if tau_deg >= 0 else None
    series_dev = (
        float(np.abs(rem[tau_deg + 1 :]).max()) if tau_deg + 1 < n_low else 0.0
    )
    pf = PartialFraction(pf.alphas, pf.gammas, tau, pf.alphas2, pf.gammas2, pf.higher)

    if count_matrices is None:
        count_matrices = {
            r: arrival_count_matrices(
                dmap, services_by_r[r], eps=min(eps * 1e-2, 1e-12)
            )
            for r in sorted(set(range(a, b)) | {a})
        }

    def tail_bound(N: int) -> float:
        # per order d: sum_{n>N} C(n+d-1, d-1) |gamma| / |alpha|**(n+d),
        # bounded by the first term over one minus the worst step ratio
        t = 0.0
        for order, al, ga in _pf_blocks(pf):
            if not len(al):
                continue
            am = np.abs(al)
            ratio = (1.0 + (order - 1.0) / (N + 2.0)) / am
            if np.any(ratio >= 1.0):
                return np.inf
            lead = np.exp(-(N + order + 1.0) * np.log(am))
            for j in range(1, order):
                lead = lead * (N + j + 1.0) / j
            t += float(np.sum(np.abs(ga).sum(axis=1) * lead / (1.0 - ratio)))
        return t

    n_fin = max([cm.n_max for cm in count_matrices.values()], default=0)
    # floor keeps enough rows for the slot-balance conversion downstream,
    # which consumes b rows of headroom, even when the tail dies immediately
    n_tr = max(n_fin, b, tau_deg, 2 * b + 48)
    while True:
        tail = tail_bound(n_tr)
        if tail <= eps:
            break
        n_tr += max(16, n_tr // 4)
        if n_tr > n_cap:
            raise TailTruncationFailure(
                f"tail still {tail:.3e} at cap {n_cap}", _MODULE
            )

    R = b - a + 1
    pi = np.zeros((n_tr + 1, R, m))

    # head channels: batches opened below full size.  The threshold batch r=a
    # collects every departure state that left at most a waiting (phases that
    # accumulated to exactly a start immediately), the middle sizes a<r<b take
    # their own boundary vector.  When a == b the single block receives this
    # head mass on top of the pole-series tail, hence the accumulating writes.
    g_a = np.zeros(m)
    for j in range(min(a, b - 1) + 1):
        g_a += bu.phi[j] @ bu.dbar_powers[a - j]
    cm = count_matrices[a]
    pi[: cm.n_max + 1, 0] += np.einsum("i,nij->nj", g_a, cm.A)
    for r in range(a + 1, b):
        cm = count_matrices[r]
        pi[: cm.n_max + 1, r - a] += np.einsum("i,nij->nj", bu.phi[r], cm.A)

    for lo in range(0, n_tr + 1, 8192):
        hi = min(lo + 8192, n_tr + 1)
        pi[lo:hi, R - 1] += _pole_series(pf, lo, hi)
    if tau is not None:
        pi[: tau_deg + 1, R - 1] += tau

    low = float(pi.min())
    if low < -neg_tol:
        raise NegativeProbability(
            f"departure mass {low:.3e} below clamp window -{neg_tol:.1e}", _MODULE
        )
    np.maximum(pi, 0.0, out=pi)
    total = float(pi.sum())
    if abs(total - 1.0) > mass_tol + tail + b * eps:
        raise IllConditioned(
            f"departure mass sums to {total:.12f}, off by {abs(total - 1.0):.3e}",
            _MODULE,
        )
    pi /= total
    phi_marginal = pi.sum(axis=1)
    return DepartureDistribution(
        pi,
        phi_marginal,
        n_tr,
        pf,
        tail,
        float(max(0.0, -low)),
        total,
        series_dev,
    )

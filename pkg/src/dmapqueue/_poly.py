"""Dense polynomial helpers used across the solver.

Scalar polynomials are 1-D coefficient arrays in ascending degree order
(numpy.polynomial convention).  Polynomial matrices are 3-D arrays of
shape (K, m, m) whose slice [k] holds the coefficient matrix of x**k.
Degrees in this solver stay in the low hundreds, so dense coefficient
arithmetic in float64 is both fast and accurate.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import polynomial as npp


def trim(c: np.ndarray, rel: float = 1e-12) -> np.ndarray:
    """Drop trailing coefficients below rel * max |coefficient|."""
    c = np.atleast_1d(np.asarray(c))
    scale = np.max(np.abs(c))
    if scale == 0.0:
        return np.zeros(1, dtype=c.dtype)
    keep = np.nonzero(np.abs(c) > rel * scale)[0]
    return c[: keep[-1] + 1].copy()


def padd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = max(len(a), len(b))
    out = np.zeros(n, dtype=np.result_type(a, b))
    out[: len(a)] += a
    out[: len(b)] += b
    return out


def pmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)


def pshift(a: np.ndarray, k: int) -> np.ndarray:
    """Multiply by x**k."""
    return np.concatenate([np.zeros(k, dtype=a.dtype), a])


def peval(c: np.ndarray, x):
    return npp.polyval(x, c)


def pder(c: np.ndarray) -> np.ndarray:
    if len(c) <= 1:
        return np.zeros(1, dtype=c.dtype)
    return npp.polyder(c)


def eval_scale(c: np.ndarray, x) -> float:
    """Natural magnitude of a polynomial evaluation at x, for residual tests."""
    ax = abs(x)
    return float(npp.polyval(ax, np.abs(c))) + 1e-300


# ---------------------------------------------------------------------------
# polynomial matrices


def pm_const(M: np.ndarray) -> np.ndarray:
    return np.asarray(M, dtype=float)[None, :, :]


def pm_eye(m: int) -> np.ndarray:
    return np.eye(m)[None, :, :]


def pm_trim(A: np.ndarray, rel: float = 0.0) -> np.ndarray:
    """Drop trailing all-zero (or negligible) coefficient slices."""
    mags = np.abs(A).reshape(A.shape[0], -1).max(axis=1)
    scale = mags.max()
    if scale == 0.0:
        return A[:1]
    keep = np.nonzero(mags > rel * scale)[0]
    return A[: keep[-1] + 1]


def pm_add(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    k = max(A.shape[0], B.shape[0])
    out = np.zeros((k,) + A.shape[1:], dtype=np.result_type(A, B))
    out[: A.shape[0]] += A
    out[: B.shape[0]] += B
    return out


def pm_mul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Product of two polynomial matrices (convolution over degree)."""
    ka, kb = A.shape[0], B.shape[0]
    m = A.shape[1]
    n = B.shape[2]
    out = np.zeros((ka + kb - 1, m, n), dtype=np.result_type(A, B))
    for i in range(ka):
        out[i : i + kb] += A[i] @ B
    return out


def pm_scale(A: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Multiply a polynomial matrix by a scalar polynomial."""
    c = np.atleast_1d(c)
    out = np.zeros((A.shape[0] + len(c) - 1,) + A.shape[1:], dtype=np.result_type(A, c))
    for i, ci in enumerate(c):
        if ci != 0.0:
            out[i : i + A.shape[0]] += ci * A
    return out


def pm_eval(A: np.ndarray, x):
    """Evaluate a polynomial matrix at a (possibly complex) point."""
    powers = x ** np.arange(A.shape[0])
    return np.tensordot(powers, A, axes=(0, 0))


def pm_trace(A: np.ndarray) -> np.ndarray:
    return np.einsum("kii->k", A)


def pm_det_adj(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Determinant and adjugate of a polynomial matrix.

    Uses the Faddeev-LeVerrier recursion, which needs only polynomial
    matrix products and divisions by integers, so no polynomial division
    error enters the coefficients.
    """
    n = A.shape[1]
    if n == 1:
        return A[:, 0, 0].copy(), pm_eye(1)
    M = pm_eye(n)
    c = np.array([1.0])
    for k in range(1, n + 1):
        AM = pm_mul(A, M)
        c = -pm_trace(AM) / k
        if k == n:
            det = c if n % 2 == 0 else -c
            adj = M if (n - 1) % 2 == 0 else -M
            return det, adj
        M = AM
        M[: len(c), range(n), range(n)] += c[:, None]
    raise AssertionError("unreachable")


def series_from_rational(X: np.ndarray, y: np.ndarray, nmax: int) -> np.ndarray:
    """Power-series coefficient matrices of X(x) / y(x) around 0.

    Requires y[0] != 0.  Returns an array of shape (nmax + 1, m, m).
    """
    y = np.atleast_1d(y)
    if y[0] == 0.0:
        raise ZeroDivisionError("rational series needs a nonzero constant term")
    kx, m = X.shape[0], X.shape[1]
    out = np.zeros((nmax + 1, m, m))
    for n in range(nmax + 1):
        acc = X[n].copy() if n < kx else np.zeros((m, m))
        top = min(n, len(y) - 1)
        for i in range(1, top + 1):
            acc -= y[i] * out[n - i]
        out[n] = acc / y[0]
    return out


def deflate_at_one(c: np.ndarray) -> tuple[np.ndarray, float]:
    """Divide c(x) by (x - 1) synthetically; return quotient and remainder."""
    n = len(c) - 1
    q = np.zeros(n, dtype=c.dtype)
    acc = c[n]
    for k in range(n - 1, -1, -1):
        q[k] = acc
        acc = c[k] + acc
    return q, float(np.real_if_close(acc))

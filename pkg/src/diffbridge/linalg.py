"""Small dense Gaussian linear algebra.

Everything here accepts arrays with arbitrary leading batch dimensions,
``(..., d)`` for vectors and ``(..., d, d)`` for matrices. State dimensions
in this package are tiny (d <= 3 in every benchmark) while batches hold
thousands of proposals, so the batched routines loop over matrix entries in
Python and vectorise over the batch. That is several times faster than
``np.linalg`` on stacks of 2x2 matrices.
"""

import math

import numpy as np

from .errors import NotPositiveDefinite, SingularObservationBlock

#: Pivots and eigenvalues above ``-PSD_TOL`` are clamped to zero.
PSD_TOL = 1e-10

LOG_2PI = math.log(2.0 * math.pi)


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def mat_mul(a, b):
    """Batched ``a @ b`` for small matrices."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, k = a.shape[-2:]
    p = b.shape[-1]
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = np.empty(batch + (n, p))
    for i in range(n):
        for j in range(p):
            s = a[..., i, 0] * b[..., 0, j]
            for l in range(1, k):
                s = s + a[..., i, l] * b[..., l, j]
            out[..., i, j] = s
    return out


def mat_vec(a, v):
    """Batched ``a @ v`` with ``a`` of shape (..., n, k) and ``v`` (..., k)."""
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    n, k = a.shape[-2:]
    batch = np.broadcast_shapes(a.shape[:-2], v.shape[:-1])
    out = np.empty(batch + (n,))
    for i in range(n):
        s = a[..., i, 0] * v[..., 0]
        for l in range(1, k):
            s = s + a[..., i, l] * v[..., l]
        out[..., i] = s
    return out


def cholesky_psd(a, tol=PSD_TOL):
    """Lower Cholesky factor of symmetric PSD matrices, without raising.

    Returns ``(L, ok)``. Pivots in ``(-tol, 0]`` are treated as zero, which
    gives a valid triangular factor for singular PSD input. ``ok`` is False
    for batch members with a pivot below ``-tol`` or an inconsistent zero
    pivot (an indefinite matrix).
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[-1]
    batch = a.shape[:-2]
    L = np.zeros(a.shape)
    ok = np.ones(batch, dtype=bool)
    for j in range(d):
        s = a[..., j, j].copy()
        for l in range(j):
            s -= L[..., j, l] ** 2
        ok &= s > -tol
        ljj = np.sqrt(np.maximum(s, 0.0))
        ljj = np.where(s > tol * 1e-6, ljj, 0.0)
        L[..., j, j] = ljj
        zero = ljj == 0.0
        for i in range(j + 1, d):
            t = a[..., i, j].copy()
            for l in range(j):
                t -= L[..., i, l] * L[..., j, l]
            ok &= ~(zero & (np.abs(t) > math.sqrt(tol)))
            L[..., i, j] = np.divide(t, ljj, out=np.zeros_like(t), where=~zero)
    ok &= np.isfinite(L).all(axis=(-1, -2))
    return L, ok


def solve_lower(L, b):
    """Forward substitution ``L x = b``; ``b`` is (..., d) or (..., d, p)."""
    L = np.asarray(L, dtype=float)
    b = np.asarray(b, dtype=float)
    vec = b.ndim == L.ndim - 1
    if vec:
        b = b[..., None]
    d = L.shape[-1]
    out = np.empty(np.broadcast_shapes(L.shape[:-2], b.shape[:-2]) + b.shape[-2:])
    for i in range(d):
        s = b[..., i, :].copy()
        for l in range(i):
            s -= L[..., i, l, None] * out[..., l, :]
        out[..., i, :] = s / L[..., i, i, None]
    return out[..., 0] if vec else out


def solve_lower_t(L, b):
    """Back substitution ``L' x = b``."""
    L = np.asarray(L, dtype=float)
    b = np.asarray(b, dtype=float)
    vec = b.ndim == L.ndim - 1
    if vec:
        b = b[..., None]
    d = L.shape[-1]
    out = np.empty(np.broadcast_shapes(L.shape[:-2], b.shape[:-2]) + b.shape[-2:])
    for i in reversed(range(d)):
        s = b[..., i, :].copy()
        for l in range(i + 1, d):
            s -= L[..., l, i, None] * out[..., l, :]
        out[..., i, :] = s / L[..., i, i, None]
    return out[..., 0] if vec else out


def spd_solve(S, b):
    """Solve ``S x = b`` for symmetric positive definite ``S``.

    Returns ``(x, ok)``; batch members whose ``S`` is not PD get NaN.
    """
    L, ok = cholesky_psd(S)
    ok &= (np.diagonal(L, axis1=-2, axis2=-1) > 0).all(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = solve_lower_t(L, solve_lower(L, b))
    bad = ~ok
    if bad.any():
        x = np.array(x)
        x[bad] = np.nan
    return x, ok


def matrix_sqrt(V):
    """Lower-triangular ``L`` with ``L @ L.T == V``.

    Positive semidefinite input is accepted: zero pivots give zero columns.

    Raises
    ------
    NotPositiveDefinite
        If any pivot falls below ``-PSD_TOL``.
    """
    V = np.asarray(V, dtype=float)
    try:
        return np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        pass
    L, ok = cholesky_psd(sym(V))
    if not np.all(ok):
        raise NotPositiveDefinite("matrix is not positive semidefinite")
    return L


def logpdf_from_chol(r, L):
    """Gaussian log-density of residual ``r`` given the covariance factor ``L``."""
    d = L.shape[-1]
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        # explicit column so an unbatched L never reads r as a matrix
        w = solve_lower(L, np.asarray(r, dtype=float)[..., None])[..., 0]
        out = -0.5 * np.sum(w * w, axis=-1) - np.sum(np.log(diag), axis=-1) - 0.5 * d * LOG_2PI
    return out


def gaussian_logpdf(x, mean, cov):
    """log N(x; mean, cov) with the normalising constant.

    Batched over leading dimensions.

    Raises
    ------
    NotPositiveDefinite
        If any covariance is not strictly positive definite.
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    L, ok = cholesky_psd(cov)
    ok &= (np.diagonal(L, axis1=-2, axis2=-1) > 0).all(axis=-1)
    if not np.all(ok):
        raise NotPositiveDefinite("covariance is not positive definite")
    out = logpdf_from_chol(x - mean, L)
    return out if out.ndim else float(out)


def gaussian_condition(joint_mean, joint_cov, observed, cond_tol=1e12):
    """Condition a joint Gaussian on its trailing block.

    The joint vector is split as (first, second) where ``second`` has the
    length of ``observed``. Returns the conditional ``GaussianStep`` of the
    first block.

    This is the textbook formula evaluated with ``np.linalg`` and serves as
    an independent check on the hand-derived bridge moments.
    """
    from .core import GaussianStep

    joint_mean = np.asarray(joint_mean, dtype=float)
    joint_cov = np.asarray(joint_cov, dtype=float)
    observed = np.atleast_1d(np.asarray(observed, dtype=float))
    b = observed.shape[0]
    a = joint_mean.shape[0] - b
    m1, m2 = joint_mean[:a], joint_mean[a:]
    s11 = joint_cov[:a, :a]
    s12 = joint_cov[:a, a:]
    s22 = joint_cov[a:, a:]
    if np.linalg.cond(s22) > cond_tol:
        raise SingularObservationBlock("observed block is singular")
    gain = np.linalg.solve(s22, s12.T).T
    mean = m1 + gain @ (observed - m2)
    cov = s11 - gain @ s12.T
    return GaussianStep(mean, cov)


def clamp_psd(cov, tol=PSD_TOL):
    """Symmetrise and clamp small negative eigenvalues of a single matrix."""
    cov = sym(np.asarray(cov, dtype=float))
    if cov.size == 0:
        return cov
    w, v = np.linalg.eigh(cov)
    if w.min() < -tol:
        raise NotPositiveDefinite(f"covariance has eigenvalue {w.min():.3e}")
    if w.min() < 0:
        cov = (v * np.maximum(w, 0.0)) @ v.T
    return cov

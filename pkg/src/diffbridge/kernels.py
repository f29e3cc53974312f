"""Compiled RK4 kernels for restarting the LNA from many states at once.

The per-interval guided proposal re-integrates the LNA from every proposed
state on every interval, which dominates its cost. These kernels integrate
the packed system ``(eta, P, V)`` with ``V = P psi P'`` row by row in
compiled code. Each model supplies a scalar right-hand side with signature
``rhs(y, theta, out)`` over the packed vector of length ``d + 2 d^2``
(``eta``, then ``P`` and ``V`` row-major).
"""

import numba
import numpy as np


def make_propagator(rhs, d):
    """Build ``propagate(xs, theta, duration, n_steps) -> (N, d + 2 d^2)``."""
    size = d + 2 * d * d

    @numba.njit(cache=False)
    def propagate(xs, theta, duration, n_steps):
        n_rows = xs.shape[0]
        out = np.empty((n_rows, size))
        h = duration / n_steps
        y = np.empty(size)
        k1 = np.empty(size)
        k2 = np.empty(size)
        k3 = np.empty(size)
        k4 = np.empty(size)
        tmp = np.empty(size)
        for r in range(n_rows):
            y[:] = 0.0
            for i in range(d):
                y[i] = xs[r, i]
                y[d + i * d + i] = 1.0
            for _ in range(n_steps):
                rhs(y, theta, k1)
                for i in range(size):
                    tmp[i] = y[i] + 0.5 * h * k1[i]
                rhs(tmp, theta, k2)
                for i in range(size):
                    tmp[i] = y[i] + 0.5 * h * k2[i]
                rhs(tmp, theta, k3)
                for i in range(size):
                    tmp[i] = y[i] + h * k3[i]
                rhs(tmp, theta, k4)
                for i in range(size):
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            out[r] = y
        return out

    def run(x, theta, duration, n_steps):
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        flat = np.ascontiguousarray(x.reshape(-1, d))
        y = propagate(flat, np.asarray(theta, dtype=float), float(duration), int(n_steps))
        eta = y[:, :d].reshape(batch + (d,))
        P = y[:, d:d + d * d].reshape(batch + (d, d))
        V = y[:, d + d * d:].reshape(batch + (d, d))
        return eta, P, 0.5 * (V + np.swapaxes(V, -1, -2))

    return run


@numba.njit(cache=False)
def _cov_block(h00, h01, h10, h11, y, out):
    # dP = H P and dV = H V + V H' + beta; beta already stored in out[6:10]
    p0, p1, p2, p3 = y[2], y[3], y[4], y[5]
    v0, v1, v2, v3 = y[6], y[7], y[8], y[9]
    out[2] = h00 * p0 + h01 * p2
    out[3] = h00 * p1 + h01 * p3
    out[4] = h10 * p0 + h11 * p2
    out[5] = h10 * p1 + h11 * p3
    hv00 = h00 * v0 + h01 * v2
    hv01 = h00 * v1 + h01 * v3
    hv10 = h10 * v0 + h11 * v2
    hv11 = h10 * v1 + h11 * v3
    out[6] += 2.0 * hv00
    cross = hv01 + hv10
    out[7] += cross
    out[8] += cross
    out[9] += 2.0 * hv11


@numba.njit(cache=False)
def lotka_volterra_rhs(y, th, out):
    x1, x2 = y[0], y[1]
    inter = th[1] * x1 * x2
    out[0] = th[0] * x1 - inter
    out[1] = inter - th[2] * x2
    out[6] = th[0] * x1 + inter
    out[7] = -inter
    out[8] = -inter
    out[9] = th[2] * x2 + inter
    _cov_block(th[0] - th[1] * x2, -th[1] * x1, th[1] * x2, th[1] * x1 - th[2], y, out)


@numba.njit(cache=False)
def aphid_rhs(y, th, out):
    n, c = y[0], y[1]
    birth = th[0] * n
    out[0] = birth - th[1] * n * c
    out[1] = birth
    out[6] = birth + th[1] * n * c
    out[7] = birth
    out[8] = birth
    out[9] = birth
    _cov_block(th[0] - th[1] * c, -th[1] * n, th[0], 0.0, y, out)

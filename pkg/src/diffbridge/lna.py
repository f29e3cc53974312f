"""Drift ODE, linear noise approximation, and the conditioned residual mean.

The LNA linearises the residual ``X_t - eta_t`` about the drift ODE
solution ``d eta = alpha(eta) dt``::

    dP/dt   = H(eta) P,                      P(t0) = I
    dpsi/dt = P^{-1} beta(eta) P^{-T},       psi(t0) = 0

so that the residual at time t has covariance ``P psi P'``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import NonFiniteState, SingularFundamentalMatrix, SingularObservationBlock

#: Default upper bound on the RK4 internal step (time units).
DEFAULT_MAX_STEP = 0.01

#: Condition number beyond which P is declared singular.
P_COND_LIMIT = 1e12


def substeps_for(interval, max_step=DEFAULT_MAX_STEP):
    """Number of equal RK4 substeps so that each is at most ``max_step``."""
    return max(1, math.ceil(interval / max_step - 1e-9))


def rk4(rhs, t, y, h, n):
    """``n`` classical RK4 steps of size ``h`` from ``(t, y)``."""
    for _ in range(n):
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t + h
    return y


def solve_ode(rhs, t0, y0, times, max_step=DEFAULT_MAX_STEP):
    """Integrate ``dy/dt = rhs(t, y)`` and report the state at each of ``times``.

    Uses fixed-step RK4 with equal substeps between consecutive output
    times, each no larger than ``max_step``. ``y0`` may be any array shape.

    Returns an array of shape ``(len(times),) + y0.shape``.

    Raises
    ------
    NonFiniteState
        If the state becomes NaN or Inf.
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(y0, dtype=float)
    out = np.empty((times.shape[0],) + y.shape)
    t = float(t0)
    for i, target in enumerate(times):
        span = target - t
        if span < 0:
            raise ValueError("output times must be non-decreasing and start at t0")
        if span > 0:
            n = substeps_for(span, max_step)
            y = rk4(rhs, t, y, span / n, n)
            if not np.all(np.isfinite(y)):
                raise NonFiniteState(f"non-finite ODE state at t={target}", t=target)
        t = float(target)
        out[i] = y
    return out


@dataclass(frozen=True, eq=False)
class LnaSolution:
    """Grid-aligned ``eta``, ``P`` and ``psi`` started at ``origin_time``."""

    times: np.ndarray
    eta: np.ndarray
    P: np.ndarray
    psi: np.ndarray
    origin_time: float
    origin_state: np.ndarray

    def index_of(self, t):
        idx = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[idx], t, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"time {t} is not on the LNA grid")
        return idx

    def residual_cov(self, k=-1):
        """``P_t psi_t P_t'``, the LNA covariance of the residual at index ``k``."""
        P = self.P[k]
        return linalg.sym(P @ self.psi[k] @ P.T)


def _pack(eta, P, psi):
    d = eta.shape[-1]
    return np.concatenate([eta, P.reshape(eta.shape[:-1] + (d * d,)), psi.reshape(eta.shape[:-1] + (d * d,))], -1)


def _unpack(y, d):
    eta = y[..., :d]
    P = y[..., d:d + d * d].reshape(y.shape[:-1] + (d, d))
    psi = y[..., d + d * d:].reshape(y.shape[:-1] + (d, d))
    return eta, P, psi


def _lna_rhs(model):
    d = model.d

    def rhs(t, y):
        eta, P, psi = _unpack(y, d)
        H = model.jacobian(eta)
        beta = model.diffusion(eta)
        Pinv_beta = np.linalg.solve(P, beta)
        dpsi = np.swapaxes(np.linalg.solve(P, np.swapaxes(Pinv_beta, -1, -2)), -1, -2)
        return _pack(model.drift(eta), H @ P, linalg.sym(dpsi))

    return rhs


def solve_lna(model, origin, t0, times, max_step=DEFAULT_MAX_STEP, numeric=False):
    """Solve the drift ODE and the LNA system from ``(t0, origin)``.

    Uses the model's closed form when one is registered, unless ``numeric``
    is set.

    Raises
    ------
    SingularFundamentalMatrix
        If ``P`` becomes numerically singular on the output grid.
    """
    origin = np.asarray(origin, dtype=float)
    times = np.asarray(times, dtype=float)
    d = model.d
    if model.lna_closed_form is not None and not numeric:
        eta, P, psi = model.lna_closed_form(origin, times - t0, model.theta)
    else:
        y0 = _pack(origin, np.eye(d), np.zeros((d, d)))
        try:
            ys = solve_ode(_lna_rhs(model), t0, y0, times, max_step)
        except np.linalg.LinAlgError:
            raise SingularFundamentalMatrix("fundamental matrix became singular") from None
        eta, P, psi = _unpack(ys, d)
    if np.any(np.linalg.cond(P) > P_COND_LIMIT):
        raise SingularFundamentalMatrix("fundamental matrix condition number exceeds limit")
    psi = linalg.sym(psi)
    return LnaSolution(times, eta, P, psi, float(t0), origin)


@dataclass(frozen=True, eq=False)
class RhoHatTrack:
    """LNA mean of the residual conditioned on the end-point observation.

    ``rho[k] = P_k psi_k gain`` with
    ``gain = P_T' F (F' P_T psi_T P_T' F + Sigma)^{-1} (y_T - F' eta_T)``.
    """

    rho: np.ndarray
    gain: np.ndarray


def rho_hat(lna, obs, value, cond_limit=1e12):
    """Conditioned residual mean on the LNA grid, which must end at ``T``."""
    value = np.asarray(value, dtype=float)
    F, Sigma = obs.F, obs.Sigma
    PT = lna.P[-1]
    S = F.T @ lna.residual_cov(-1) @ F + Sigma
    if np.linalg.cond(S) > cond_limit:
        raise SingularObservationBlock("LNA end-point covariance is singular")
    gain = PT.T @ F @ np.linalg.solve(S, value - F.T @ lna.eta[-1])
    rho = np.einsum("kij,kjl,l->ki", lna.P, lna.psi, gain)
    return RhoHatTrack(rho, gain)


def propagate_lna_cov(model, x, duration, n_steps):
    """Restart the LNA at state(s) ``x`` and integrate over ``duration``.

    Works on the residual covariance ``V = P psi P'`` directly
    (``dV/dt = H V + V H' + beta``), which avoids inverting ``P`` and keeps
    the batched per-interval guided proposal affordable. Batched over the
    leading dimensions of ``x``. A model-supplied compiled kernel is used
    when registered; the numpy path is the reference implementation.

    Returns ``(eta_end, P, V)``.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    if model.lna_closed_form is not None:
        eta, P, psi = model.lna_closed_form(x, duration, model.theta)
        return eta, P, linalg.mat_mul(linalg.mat_mul(P, psi), np.swapaxes(P, -1, -2))
    if model.lna_cov_kernel is not None:
        if duration <= 0:
            d_eye = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()
            return x.copy(), d_eye, np.zeros_like(d_eye)
        return model.lna_cov_kernel(x, model.theta, duration, n_steps)
    return _propagate_numpy(model, x, duration, n_steps)


def _propagate_numpy(model, x, duration, n_steps):
    d = x.shape[-1]
    eta = x.copy()
    P = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()
    V = np.zeros(x.shape[:-1] + (d, d))
    if duration <= 0:
        return eta, P, V
    h = duration / n_steps

    def rhs(e, P, V):
        H = model.jacobian(e)
        HV = linalg.mat_mul(H, V)
        return model.drift(e), linalg.mat_mul(H, P), HV + np.swapaxes(HV, -1, -2) + model.diffusion(e)

    for _ in range(n_steps):
        k1 = rhs(eta, P, V)
        k2 = rhs(eta + 0.5 * h * k1[0], P + 0.5 * h * k1[1], V + 0.5 * h * k1[2])
        k3 = rhs(eta + 0.5 * h * k2[0], P + 0.5 * h * k2[1], V + 0.5 * h * k2[2])
        k4 = rhs(eta + h * k3[0], P + h * k3[1], V + h * k3[2])
        c = h / 6.0
        eta = eta + c * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        P = P + c * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        V = V + c * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return eta, P, linalg.sym(V)


def lna_transition_terms(model, x_t, t, T, lna=None, max_step=DEFAULT_MAX_STEP):
    """``(eta_T, P_{T|t}, psi_{T|t})`` for the LNA over ``[t, T]``.

    With ``lna`` given (a whole-interval solution from the fixed origin),
    uses ``P_{T|t} = P_T P_t^{-1}`` and ``psi_{T|t} = P_t (psi_T - psi_t) P_t'``
    and ignores ``x_t``. Otherwise the LNA is re-integrated from ``t`` with
    ``eta_t = x_t``.
    """
    if lna is not None:
        k = lna.index_of(t)
        Pt, PT = lna.P[k], lna.P[-1]
        P_Tt = np.linalg.solve(Pt.T, PT.T).T
        psi_Tt = linalg.sym(Pt @ (lna.psi[-1] - lna.psi[k]) @ Pt.T)
        return lna.eta[-1].copy(), P_Tt, psi_Tt
    x_t = np.asarray(x_t, dtype=float)
    duration = T - t
    if model.lna_closed_form is not None:
        return model.lna_closed_form(x_t, duration, model.theta)
    eta, P, V = propagate_lna_cov(model, x_t, duration, substeps_for(duration, max_step) if duration > 0 else 0)
    Pinv_V = np.linalg.solve(P, V)
    psi = np.swapaxes(np.linalg.solve(P, np.swapaxes(Pinv_V, -1, -2)), -1, -2)
    return eta, P, linalg.sym(psi)

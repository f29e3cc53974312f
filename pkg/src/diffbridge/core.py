"""Diffusion models, observation regimes, grids, paths, and Euler-Maruyama simulation."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import linalg
from .errors import BridgeError, InadmissibleState, NotPositiveDefinite

#: Forward simulation redraws an inadmissible step this many times before giving up.
MAX_STEP_RETRIES = 100


def as_rng(seed):
    """Return a ``np.random.Generator``; accepts a seed or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    """An Ito diffusion ``dX = alpha(X) dt + sqrt(beta(X)) dW``.

    ``drift``, ``diffusion`` and ``jacobian`` are called as ``f(x, theta)``
    and must broadcast over leading batch dimensions of ``x``: a state array
    of shape ``(..., d)`` maps to ``(..., d)`` for the drift and
    ``(..., d, d)`` for the other two. ``admissible`` maps ``(..., d)`` to a
    boolean array of shape ``(...)``.

    ``lna_closed_form``, when given, is called as ``f(x0, s, theta)`` for
    elapsed time(s) ``s`` and returns ``(eta, P, psi)``. ``lna_cov_kernel``
    is an optional fast path for restarting the LNA from many states; see
    :func:`diffbridge.lna.propagate_lna_cov`.
    """

    name: str
    d: int
    theta: np.ndarray
    drift_fn: Callable
    diffusion_fn: Callable
    jacobian_fn: Callable
    admissible_fn: Optional[Callable] = None
    lna_closed_form: Optional[Callable] = None
    lna_cov_kernel: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    @property
    def p(self):
        return self.theta.shape[0]

    def drift(self, x):
        return self.drift_fn(np.asarray(x, dtype=float), self.theta)

    def diffusion(self, x):
        return self.diffusion_fn(np.asarray(x, dtype=float), self.theta)

    def jacobian(self, x):
        return self.jacobian_fn(np.asarray(x, dtype=float), self.theta)

    def admissible(self, x):
        x = np.asarray(x, dtype=float)
        ok = np.isfinite(x).all(axis=-1)
        if self.admissible_fn is not None:
            ok &= self.admissible_fn(x)
        return ok

    def with_theta(self, theta):
        return DiffusionModel(self.name, self.d, theta, self.drift_fn, self.diffusion_fn,
                              self.jacobian_fn, self.admissible_fn, self.lna_closed_form,
                              self.lna_cov_kernel)


class Regime(Enum):
    EXACT = "exact"
    NOISY = "noisy"


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """``Y_T = F' X_T + eps``, ``eps ~ N(0, Sigma)``.

    Use :meth:`exact` when ``x_T`` is known and :meth:`noisy` otherwise.
    ``F`` has shape ``(d, d_o)``.
    """

    F: np.ndarray
    Sigma: np.ndarray
    regime: Regime

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Sigma", Sigma)
        d, d_o = F.shape
        if d_o > d:
            raise BridgeError("observation dimension exceeds state dimension")
        if Sigma.shape != (d_o, d_o):
            raise BridgeError(f"Sigma must be {d_o}x{d_o}, got {Sigma.shape}")
        if not np.array_equal(Sigma, Sigma.T):
            raise BridgeError("Sigma must be symmetric")
        if self.regime is Regime.EXACT:
            if d_o != d or not np.array_equal(F, np.eye(d)) or np.any(Sigma != 0):
                raise BridgeError("exact regime requires F = I and Sigma = 0")
        else:
            # Sigma = 0 would make the final MDB step singular; use the exact regime.
            try:
                np.linalg.cholesky(Sigma)
            except np.linalg.LinAlgError:
                raise NotPositiveDefinite("noisy regime requires positive definite Sigma") from None

    @classmethod
    def exact(cls, d):
        return cls(np.eye(d), np.zeros((d, d)), Regime.EXACT)

    @classmethod
    def noisy(cls, F, Sigma):
        return cls(F, Sigma, Regime.NOISY)

    @property
    def d(self):
        return self.F.shape[0]

    @property
    def d_o(self):
        return self.F.shape[1]

    @property
    def is_exact(self):
        return self.regime is Regime.EXACT

    def log_likelihood(self, y, x):
        """log N(y; F'x, Sigma), batched over ``x``."""
        x = np.asarray(x, dtype=float)
        Ft = np.broadcast_to(self.F.T, x.shape[:-1] + self.F.T.shape)
        return linalg.gaussian_logpdf(y, linalg.mat_vec(Ft, x), self.Sigma)


@dataclass(frozen=True)
class TimeGrid:
    """``m`` equal intervals on ``[0, T]``."""

    T: float
    m: int

    def __post_init__(self):
        if not self.T > 0:
            raise BridgeError("T must be positive")
        if int(self.m) != self.m or self.m < 1:
            raise BridgeError("m must be a positive integer")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "m", int(self.m))

    @property
    def dtau(self):
        return self.T / self.m

    @property
    def times(self):
        t = np.arange(self.m + 1) * self.T / self.m
        t[-1] = self.T
        return t

    def remaining(self, k):
        """``T - tau_k``."""
        return self.T - self.times[k]


@dataclass(frozen=True, eq=False)
class SkeletonPath:
    grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] != self.grid.m + 1:
            raise BridgeError(f"expected {self.grid.m + 1} states, got shape {states.shape}")
        object.__setattr__(self, "states", states)

    @property
    def times(self):
        return self.grid.times


@dataclass(frozen=True, eq=False)
class GaussianStep:
    """One proposal step: the Gaussian law of the next state."""

    mean: np.ndarray
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", linalg.clamp_psd(self.cov))

    def logpdf(self, x):
        return linalg.gaussian_logpdf(x, self.mean, self.cov)


def em_step(model, x, dtau, z):
    """One Euler-Maruyama step ``x + alpha(x) dtau + sqrt(beta(x)) sqrt(dtau) z``.

    Raises
    ------
    InadmissibleState
        If the new state is outside the model's domain.
    """
    x = np.asarray(x, dtype=float)
    L, ok = linalg.cholesky_psd(linalg.sym(model.diffusion(x)))
    if not np.all(ok):
        raise NotPositiveDefinite("diffusion matrix is not positive semidefinite")
    out = x + model.drift(x) * dtau + linalg.mat_vec(L, np.asarray(z, dtype=float)) * np.sqrt(dtau)
    if not np.all(model.admissible(out)):
        raise InadmissibleState("Euler-Maruyama step left the admissible domain")
    return out


def simulate_batch(model, x0, grid, n, seed, return_path=True):
    """Simulate ``n`` Euler-Maruyama paths from ``x0`` on ``grid``.

    Rows whose step lands outside the admissible domain redraw that step's
    noise, up to ``MAX_STEP_RETRIES`` times.

    Returns an array of shape ``(n, m + 1, d)``, or ``(n, d)`` final states if
    ``return_path`` is False.
    """
    rng = as_rng(seed)
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[-1]
    dt = grid.dtau
    sdt = np.sqrt(dt)
    x = np.broadcast_to(x0, (n, d)).copy()
    if return_path:
        path = np.empty((n, grid.m + 1, d))
        path[:, 0] = x
    for k in range(grid.m):
        L, ok = linalg.cholesky_psd(linalg.sym(model.diffusion(x)))
        if not np.all(ok):
            raise NotPositiveDefinite(f"diffusion matrix not PSD at step {k}")
        base = x + model.drift(x) * dt
        new = base + linalg.mat_vec(L, rng.standard_normal((n, d))) * sdt
        bad = ~model.admissible(new)
        tries = 0
        while bad.any():
            tries += 1
            if tries > MAX_STEP_RETRIES:
                raise InadmissibleState(f"step {k} stayed inadmissible after {MAX_STEP_RETRIES} retries", step=k)
            idx = np.flatnonzero(bad)
            z = rng.standard_normal((idx.size, d))
            new[idx] = base[idx] + linalg.mat_vec(L[idx], z) * sdt
            bad[idx] = ~model.admissible(new[idx])
        x = new
        if return_path:
            path[:, k + 1] = x
    return path if return_path else x


def simulate_forward(model, x0, grid, seed):
    """A single Euler-Maruyama path; deterministic given ``seed``."""
    return SkeletonPath(grid, simulate_batch(model, x0, grid, 1, seed)[0])


def transition_logpdf(model, states, dtau):
    """Euler transition log-densities ``log N(x_{k+1}; x_k + alpha dtau, beta dtau)``.

    ``states`` has shape ``(..., m + 1, d)``; returns ``(..., m)``.
    """
    states = np.asarray(states, dtype=float)
    x, nxt = states[..., :-1, :], states[..., 1:, :]
    mean = x + model.drift(x) * dtau
    cov = linalg.sym(model.diffusion(x)) * dtau
    L, ok = linalg.cholesky_psd(cov)
    ok &= (np.diagonal(L, axis1=-2, axis2=-1) > 0).all(axis=-1)
    if not np.all(ok):
        raise NotPositiveDefinite("diffusion matrix is not positive definite along the path")
    return linalg.logpdf_from_chol(nxt - mean, L)


def log_target_density(path, model, obs, value, grid=None):
    """Unnormalised log density of the discretised bridge target.

    ``value`` is ``y_T`` in the noisy regime and ``x_T`` in the exact regime.
    ``path`` is a :class:`SkeletonPath`, or a state array of shape
    ``(..., m + 1, d)`` together with ``grid``.
    """
    if isinstance(path, SkeletonPath):
        grid, states = path.grid, path.states
    else:
        if grid is None:
            raise BridgeError("grid is required when path is a plain array")
        states = np.asarray(path, dtype=float)
    value = np.asarray(value, dtype=float)
    if obs.is_exact:
        if not np.allclose(states[..., -1, :], value, rtol=0, atol=1e-12):
            raise BridgeError("exact regime path must end at x_T")
    out = transition_logpdf(model, states, grid.dtau).sum(axis=-1)
    if not obs.is_exact:
        out = out + obs.log_likelihood(value, states[..., -1, :])
    return out if np.ndim(out) else float(out)

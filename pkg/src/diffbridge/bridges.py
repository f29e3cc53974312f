"""Bridge proposal constructs.

Every construct proposes ``x_{k+1} ~ N(x_k + mu(x_k) dtau, Psi(x_k) dtau)``
and differs only in ``mu`` and ``Psi``:

========  ==============================================================
EM        forward Euler-Maruyama dynamics, ignores the end point
MDB       modified diffusion bridge
LB        blended bridge, MDB with end-point variance inflated by gamma
RB        MDB applied to the residual ``X - eta``
RBminus   MDB applied to the residual ``X - eta - rho_hat``
GP        guided proposal with LNA guiding term
GPN       guided proposal, LNA integrated once from the origin
GPS       simplified guided proposal (exact end point only)
GPMDB     guided proposal drift with the MDB variance
========  ==============================================================

All moment computations are batched over the leading dimensions of the
current state so that many independent proposals advance together.
"""

import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np

from . import linalg
from .core import GaussianStep, SkeletonPath, as_rng
from .errors import (
    BridgeError,
    DegenerateStep,
    NotPositiveDefinite,
    ProposalRejected,
    SingularObservationBlock,
)
from .lna import DEFAULT_MAX_STEP, propagate_lna_cov, rho_hat, solve_lna, substeps_for


class Construct(Enum):
    EM = "EM"
    MDB = "MDB"
    LB = "LB"
    RB = "RB"
    RBMINUS = "RBminus"
    GP = "GP"
    GPN = "GPN"
    GPS = "GPS"
    GPMDB = "GPMDB"


class GPMode(Enum):
    ONCE = "once"
    PER_INTERVAL = "per-interval"


_ALIASES = {
    "EM": Construct.EM,
    "MDB": Construct.MDB,
    "LB": Construct.LB,
    "RB": Construct.RB,
    "RBMINUS": Construct.RBMINUS,
    "RB-": Construct.RBMINUS,
    "GP": Construct.GP,
    "GPN": Construct.GPN,
    "GP-N": Construct.GPN,
    "GPS": Construct.GPS,
    "GP-S": Construct.GPS,
    "GPMDB": Construct.GPMDB,
    "GP-MDB": Construct.GPMDB,
}

VALID_NAMES = tuple(c.value for c in Construct)

_KIND_RE = re.compile(r"^\s*([A-Za-z\-]+)\s*(?:\(\s*([^)]*)\s*\))?\s*(?:\[\s*([a-z\-]+)\s*\])?\s*$")


@dataclass(frozen=True)
class BridgeKind:
    """A construct plus its options: ``gamma`` for LB, ``gp_mode`` for GP/GPMDB."""

    construct: Construct
    gamma: Optional[float] = None
    gp_mode: Optional[GPMode] = None

    def __post_init__(self):
        if self.construct is Construct.LB:
            if self.gamma is None or not self.gamma > 0:
                raise BridgeError("LB requires gamma > 0")
        elif self.gamma is not None:
            raise BridgeError(f"{self.construct.value} takes no gamma")
        if self.gp_mode is not None and self.construct not in (Construct.GP, Construct.GPMDB):
            raise BridgeError(f"{self.construct.value} takes no GP mode")

    @classmethod
    def parse(cls, text):
        """Parse ``"MDB"``, ``"LB(0.01)"``, ``"GPMDB[once]"`` and the like."""
        match = _KIND_RE.match(text)
        construct = _ALIASES.get(match.group(1).upper()) if match else None
        if construct is None:
            raise BridgeError(f"unknown bridge {text!r}; valid: {', '.join(VALID_NAMES)}")
        gamma = float(match.group(2)) if match.group(2) else None
        mode = GPMode(match.group(3)) if match.group(3) else None
        return cls(construct, gamma, mode)

    @property
    def label(self):
        out = self.construct.value
        if self.gamma is not None:
            out += f"({self.gamma:g})"
        if self.gp_mode is not None:
            out += f"[{self.gp_mode.value}]"
        return out

    def __str__(self):
        return self.label


def _kind(kind):
    if isinstance(kind, BridgeKind):
        return kind
    if isinstance(kind, Construct):
        return BridgeKind(kind)
    return BridgeKind.parse(kind)


class BridgeContext:
    """Everything a construct needs for one bridging scenario.

    Parameters
    ----------
    model : DiffusionModel
    obs : ObservationModel
    grid : TimeGrid
    value : array_like
        ``y_T`` in the noisy regime, ``x_T`` in the exact regime.
    x0 : array_like
        Fixed initial state.
    max_step : float
        Upper bound on the RK4 step used for LNA integration.

    LNA quantities are computed on first use and then cached; the context
    is otherwise immutable.
    """

    def __init__(self, model, obs, grid, value, x0, max_step=DEFAULT_MAX_STEP):
        self.model = model
        self.obs = obs
        self.grid = grid
        self.value = np.atleast_1d(np.asarray(value, dtype=float))
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.max_step = max_step
        if obs.d != model.d or self.x0.shape != (model.d,):
            raise BridgeError("state dimension mismatch between model, observation and x0")
        expected = model.d if obs.is_exact else obs.d_o
        if self.value.shape != (expected,):
            raise BridgeError(f"conditioning value must have length {expected}")
        if not model.admissible(self.x0):
            raise BridgeError("x0 is not admissible")
        if obs.is_exact and not model.admissible(self.value):
            raise BridgeError("exact end point is not admissible")
        self.times = grid.times
        self.dtau = grid.dtau
        self.T = grid.T
        # Delta_k = T - tau_k, including Delta_m = 0.
        self.remaining = self.T - self.times
        self.remaining[-1] = 0.0
        self.n_sub = substeps_for(self.dtau, max_step)
        self.default_gp_mode = GPMode.PER_INTERVAL if obs.is_exact else GPMode.ONCE

    @property
    def m(self):
        return self.grid.m

    @property
    def n_sampled_steps(self):
        """Steps drawn per bridge; the exact regime pins the final state."""
        return self.m - 1 if self.obs.is_exact else self.m

    @cached_property
    def lna(self):
        return solve_lna(self.model, self.x0, 0.0, self.times, self.max_step)

    @property
    def eta(self):
        return self.lna.eta

    @cached_property
    def delta_eta(self):
        """Chords ``(eta_{k+1} - eta_k) / dtau``, length ``m``."""
        return np.diff(self.eta, axis=0) / self.dtau

    @cached_property
    def rho(self):
        return rho_hat(self.lna, self.obs, self.value)

    @cached_property
    def delta_rho(self):
        return np.diff(self.rho.rho, axis=0) / self.dtau

    @cached_property
    def once_terms(self):
        """``P_{T|tau_k}`` and ``P_{T|tau_k} psi_{T|tau_k} P_{T|tau_k}'`` from the propagation identities."""
        lna = self.lna
        PT = lna.P[-1]
        P_Tk = np.swapaxes(np.linalg.solve(np.swapaxes(lna.P, -1, -2), PT.T), -1, -2)
        V_Tk = linalg.sym(PT @ (lna.psi[-1] - lna.psi) @ PT.T)
        return P_Tk, V_Tk

    @cached_property
    def beta_end_inv(self):
        """``beta(x_T)^{-1}`` for GPS."""
        b = linalg.sym(self.model.diffusion(self.value))
        try:
            np.linalg.cholesky(b)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("beta(x_T) is not positive definite") from None
        return np.linalg.inv(b)

    def check_kind(self, kind):
        kind = _kind(kind)
        if kind.construct is Construct.GPS and not self.obs.is_exact:
            raise BridgeError("GPS is only defined when x_T is known exactly")
        return kind

    def gp_mode_for(self, kind):
        if kind.construct is Construct.GPN:
            return GPMode.ONCE
        return kind.gp_mode or self.default_gp_mode


# ---------------------------------------------------------------------------
# per-step moments, batched over x of shape (..., d)


def _noisy_moments(ctx, x, a, b, shift, horizon):
    """Condition the joint of (X_{k+1}, Y_T) on ``y_T``.

    ``shift`` is the state whose ``F'`` image is the predicted observation and
    ``horizon`` multiplies ``F' beta F`` in the observation variance.
    """
    F, Sigma, dt = ctx.obs.F, ctx.obs.Sigma, ctx.dtau
    bF = linalg.mat_mul(b, F)
    Fb = np.swapaxes(bF, -1, -2)
    S = linalg.mat_mul(Fb, F) * horizon + Sigma
    innov = ctx.value - linalg.mat_vec(np.broadcast_to(F.T, bF.shape[:-2] + F.T.shape), shift)
    # one factorisation serves both right-hand sides
    rhs = np.concatenate([innov[..., None], Fb], axis=-1)
    sol, _ = linalg.spd_solve(S, rhs)
    mu = a + linalg.mat_vec(bF, sol[..., 0])
    Psi = b - linalg.mat_mul(bF, sol[..., 1:]) * dt
    return x + mu * dt, linalg.sym(Psi) * dt


def _em(ctx, k, x, a, b):
    return x + a * ctx.dtau, b * ctx.dtau


def _mdb_cov_exact(ctx, k, b):
    return b * (ctx.remaining[k + 1] / ctx.remaining[k] * ctx.dtau)


def _mdb(ctx, k, x, a, b):
    Dk = ctx.remaining[k]
    if ctx.obs.is_exact:
        if k == ctx.m - 1:
            return np.broadcast_to(ctx.value, x.shape).copy(), np.zeros_like(b)
        return x + (ctx.value - x) / Dk * ctx.dtau, _mdb_cov_exact(ctx, k, b)
    return _noisy_moments(ctx, x, a, b, x + a * Dk, Dk)


def lb_weight(dtau, remaining_k, remaining_next, gamma):
    """Weight on the MDB component of the exact-regime blended bridge."""
    num = dtau * remaining_k
    return num / (num + gamma * remaining_next**2)


def _lb(ctx, k, x, a, b, gamma):
    Dk, Dk1, dt = ctx.remaining[k], ctx.remaining[k + 1], ctx.dtau
    if ctx.obs.is_exact:
        w = lb_weight(dt, Dk, Dk1, gamma)
        mu = w * (ctx.value - x) / Dk + (1 - w) * a
        cov = (w * Dk1 / Dk + (1 - w)) * b * dt
        return x + mu * dt, cov
    return _noisy_moments(ctx, x, a, b, x + a * Dk, Dk + gamma * Dk1**2 / dt)


def _rb(ctx, k, x, a, b):
    Dk = ctx.remaining[k]
    eta_k, eta_T, chord = ctx.eta[k], ctx.eta[-1], ctx.delta_eta[k]
    if ctx.obs.is_exact:
        if k == ctx.m - 1:
            return _mdb(ctx, k, x, a, b)
        mu = chord + ((ctx.value - x) - (eta_T - eta_k)) / Dk
        return x + mu * ctx.dtau, _mdb_cov_exact(ctx, k, b)
    r = x - eta_k
    return _noisy_moments(ctx, x, a, b, eta_T + r + (a - chord) * Dk, Dk)


def _rbminus(ctx, k, x, a, b):
    Dk = ctx.remaining[k]
    rho = ctx.rho.rho
    eta_k, eta_T = ctx.eta[k], ctx.eta[-1]
    chord = ctx.delta_eta[k] + ctx.delta_rho[k]
    if ctx.obs.is_exact:
        if k == ctx.m - 1:
            return _mdb(ctx, k, x, a, b)
        mu = chord + ((ctx.value - x) - (eta_T - eta_k) - (rho[-1] - rho[k])) / Dk
        return x + mu * ctx.dtau, _mdb_cov_exact(ctx, k, b)
    r = x - eta_k - rho[k]
    return _noisy_moments(ctx, x, a, b, eta_T + rho[-1] + r + (a - chord) * Dk, Dk)


def _gp_drift(ctx, k, x, a, b, mode):
    F, Sigma = ctx.obs.F, ctx.obs.Sigma
    if mode is GPMode.ONCE:
        P_Tk, V_Tk = ctx.once_terms
        P, V = P_Tk[k], V_Tk[k]
        predicted = ctx.eta[-1] + linalg.mat_vec(np.broadcast_to(P, x.shape[:-1] + P.shape), x - ctx.eta[k])
        PtF = P.T @ F
        S = F.T @ V @ F + Sigma
        innov = ctx.value - linalg.mat_vec(np.broadcast_to(F.T, x.shape[:-1] + F.T.shape), predicted)
        sol, _ = linalg.spd_solve(np.broadcast_to(S, x.shape[:-1] + S.shape), innov)
        guide = linalg.mat_vec(np.broadcast_to(PtF, x.shape[:-1] + PtF.shape), sol)
    else:
        n_steps = (ctx.m - k) * ctx.n_sub
        eta_T, P, V = propagate_lna_cov(ctx.model, x, ctx.remaining[k], n_steps)
        PtF = linalg.mat_mul(np.swapaxes(P, -1, -2), F)
        Fb = np.broadcast_to(F.T, V.shape[:-2] + F.T.shape)
        S = linalg.mat_mul(Fb, linalg.mat_mul(V, F)) + Sigma
        innov = ctx.value - linalg.mat_vec(np.broadcast_to(F.T, eta_T.shape[:-1] + F.T.shape), eta_T)
        sol, _ = linalg.spd_solve(S, innov)
        guide = linalg.mat_vec(PtF, sol)
    return a + linalg.mat_vec(b, guide)


def _gps_drift(ctx, k, x, a, b):
    eta = ctx.eta
    gap = (ctx.value - x - (eta[-1] - eta[k])) / ctx.remaining[k]
    M = linalg.mat_mul(b, np.broadcast_to(ctx.beta_end_inv, b.shape))
    return a + linalg.mat_vec(M, gap)


def step_moments(ctx, kind, k, x):
    """Mean and covariance of the proposal for ``x_{k+1}`` given ``x_k = x``.

    Batched over leading dimensions of ``x``. Failures such as a singular
    observation block show up as NaN entries rather than exceptions so a
    single bad proposal does not abort a batch.
    """
    kind = ctx.check_kind(kind)
    x = np.asarray(x, dtype=float)
    model = ctx.model
    a = model.drift(x)
    b = linalg.sym(model.diffusion(x))
    c = kind.construct
    if c is Construct.EM:
        return _em(ctx, k, x, a, b)
    if c is Construct.MDB:
        return _mdb(ctx, k, x, a, b)
    if c is Construct.LB:
        return _lb(ctx, k, x, a, b, kind.gamma)
    if c is Construct.RB:
        return _rb(ctx, k, x, a, b)
    if c is Construct.RBMINUS:
        return _rbminus(ctx, k, x, a, b)
    if c is Construct.GPS:
        return x + _gps_drift(ctx, k, x, a, b) * ctx.dtau, b * ctx.dtau
    drift = _gp_drift(ctx, k, x, a, b, ctx.gp_mode_for(kind))
    if c is Construct.GPMDB:
        cov = _mdb(ctx, k, x, a, b)[1]
    else:
        cov = b * ctx.dtau
    return x + drift * ctx.dtau, cov


# ---------------------------------------------------------------------------
# single-state public API


def _single(ctx, kind, k, x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise BridgeError("expected a single state vector; use step_moments for batches")
    if not 0 <= k < ctx.m:
        raise BridgeError(f"step index {k} outside 0..{ctx.m - 1}")
    mean, cov = step_moments(ctx, kind, k, x)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise SingularObservationBlock(f"singular end-point covariance at step {k}")
    return GaussianStep(mean, cov)


def em_step_proposal(ctx, k, x):
    return _single(ctx, Construct.EM, k, x)


def mdb_step(ctx, k, x):
    return _single(ctx, Construct.MDB, k, x)


def lb_step(ctx, k, x, gamma):
    return _single(ctx, BridgeKind(Construct.LB, gamma), k, x)


def rb_step(ctx, k, x):
    return _single(ctx, Construct.RB, k, x)


def rbminus_step(ctx, k, x):
    return _single(ctx, Construct.RBMINUS, k, x)


def gps_step(ctx, k, x):
    return _single(ctx, Construct.GPS, k, x)


def gp_drift(ctx, k, x, mode=None):
    """Guided-proposal drift ``alpha(x) + beta(x) grad log p_hat(y_T | x)``.

    ``mode`` defaults to the regime default (per-interval when ``x_T`` is
    known, integrate-once otherwise).
    """
    x = np.asarray(x, dtype=float)
    mode = GPMode(mode) if mode is not None else ctx.default_gp_mode
    model = ctx.model
    out = _gp_drift(ctx, k, x, model.drift(x), linalg.sym(model.diffusion(x)), mode)
    if not np.all(np.isfinite(out)):
        raise SingularObservationBlock(f"guiding term is singular at step {k}")
    return out


def bridge_step(ctx, kind, k, x):
    """The proposal step of any construct as a :class:`GaussianStep`."""
    return _single(ctx, kind, k, x)


# ---------------------------------------------------------------------------
# whole bridges


def sample_bridges(ctx, kind, n, seed):
    """Draw ``n`` independent bridges.

    Returns ``(states, log_q, ok)`` with ``states`` of shape
    ``(n, m + 1, d)``. Rows that hit an inadmissible state or a degenerate
    step have ``ok`` False and ``log_q`` NaN; the sampler treats them as
    rejected proposals. Deterministic given ``seed``.
    """
    kind = ctx.check_kind(kind)
    rng = as_rng(seed)
    d = ctx.model.d
    states = np.empty((n, ctx.m + 1, d))
    x = np.broadcast_to(ctx.x0, (n, d)).copy()
    states[:, 0] = x
    log_q = np.zeros(n)
    ok = np.ones(n, dtype=bool)
    const = 0.5 * d * linalg.LOG_2PI
    for k in range(ctx.n_sampled_steps):
        mean, cov = step_moments(ctx, kind, k, x)
        L, good = linalg.cholesky_psd(cov)
        diag = np.diagonal(L, axis1=-2, axis2=-1)
        good &= np.isfinite(mean).all(axis=-1) & (diag > 0).all(axis=-1)
        z = rng.standard_normal((n, d))
        new = mean + linalg.mat_vec(L, z)
        good &= ctx.model.admissible(new)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_q += -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(diag), axis=-1) - const
        ok &= good
        x = np.where(ok[:, None], new, x)
        states[:, k + 1] = new
    if ctx.obs.is_exact:
        states[:, -1] = ctx.value
    log_q[~ok] = np.nan
    return states, log_q, ok


def sample_bridge(ctx, kind, seed):
    """One bridge and its proposal log-density.

    Raises
    ------
    ProposalRejected
        If the draw left the admissible domain.
    """
    states, log_q, ok = sample_bridges(ctx, kind, 1, seed)
    if not ok[0]:
        raise ProposalRejected("proposal left the admissible domain")
    return SkeletonPath(ctx.grid, states[0]), float(log_q[0])


def proposal_logpdf_batch(ctx, kind, states):
    """Proposal log-density of bridges ``states`` (..., m + 1, d).

    Step moments are recomputed from the path. Returns ``(log_q, ok)``;
    ``ok`` is False where a step covariance is singular or a moment is
    undefined.
    """
    kind = ctx.check_kind(kind)
    states = np.asarray(states, dtype=float)
    total = np.zeros(states.shape[:-2])
    ok = np.ones(states.shape[:-2], dtype=bool)
    for k in range(ctx.n_sampled_steps):
        mean, cov = step_moments(ctx, kind, k, states[..., k, :])
        L, good = linalg.cholesky_psd(cov)
        good &= (np.diagonal(L, axis1=-2, axis2=-1) > 0).all(axis=-1) & np.isfinite(mean).all(axis=-1)
        total = total + linalg.logpdf_from_chol(states[..., k + 1, :] - mean, L)
        ok &= good
    return total, ok


def proposal_logpdf(ctx, kind, path):
    """Proposal log-density of a single bridge.

    Raises
    ------
    DegenerateStep
        If a step covariance is singular.
    """
    states = path.states if isinstance(path, SkeletonPath) else np.asarray(path, dtype=float)
    if ctx.obs.is_exact and not np.allclose(states[..., -1, :], ctx.value, rtol=0, atol=1e-12):
        raise BridgeError("exact regime path must end at x_T")
    if not np.allclose(states[..., 0, :], ctx.x0, rtol=0, atol=1e-12):
        raise BridgeError("path must start at x0")
    total, ok = proposal_logpdf_batch(ctx, kind, states)
    if not np.all(ok):
        raise DegenerateStep("proposal step has singular covariance")
    return total if np.ndim(total) else float(total)

"""Metropolis-Hastings independence sampler over skeleton bridges."""

import time
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import linalg
from .bridges import BridgeKind, _kind, sample_bridges
from .core import as_rng
from .errors import BridgeError, InitialisationFailed, ZeroVarianceError

#: Consecutive inadmissible proposals tolerated before the first acceptance.
MAX_INIT_FAILURES = 1000


@dataclass(frozen=True)
class MhConfig:
    """Sampler settings.

    ``stride`` thins the stored paths used for credible bands; the midpoint
    series used for ESS is kept at every iteration. ``block_size`` only
    controls how many proposals are drawn per vectorised batch; it changes
    the random stream and therefore the exact chain, not its law.
    """

    iterations: int = 100_000
    burn_in: int = 0
    seed: int = 0
    kind: object = "MDB"
    stride: int = 10
    store_midpoint: bool = True
    block_size: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "kind", _kind(self.kind))
        if self.iterations < 1:
            raise BridgeError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise BridgeError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.stride < 1 or self.block_size < 1:
            raise BridgeError("stride and block_size must be positive")


class ChainState(NamedTuple):
    states: np.ndarray
    log_target: float
    log_q: float


@dataclass(frozen=True, eq=False)
class ChainSummary:
    kind: BridgeKind
    accept_count: int
    iteration_count: int
    ess_midpoint: Optional[np.ndarray]
    path_mean: np.ndarray
    path_lower: np.ndarray
    path_upper: np.ndarray
    wallclock_seconds: float
    midpoint_series: Optional[np.ndarray] = None

    @property
    def acceptance_rate(self):
        return self.accept_count / self.iteration_count

    @property
    def min_ess(self):
        if self.ess_midpoint is None:
            return float("nan")
        return float(np.min(self.ess_midpoint))


def mh_acceptance_log_ratio(current, proposed):
    """``log pi(x*) - log pi(x) - log q(x*) + log q(x)`` for an independence move.

    Both arguments are :class:`ChainState` or ``(states, log_target, log_q)``.
    """
    return (proposed[1] - current[1]) - (proposed[2] - current[2])


def log_target_batch(ctx, states):
    """Bridge target log-density for a batch, without raising.

    Returns ``(values, ok)``; ``ok`` is False where a diffusion matrix along
    the path is not positive definite.
    """
    model, dt = ctx.model, ctx.dtau
    x, nxt = states[..., :-1, :], states[..., 1:, :]
    mean = x + model.drift(x) * dt
    L, ok = linalg.cholesky_psd(linalg.sym(model.diffusion(x)) * dt)
    ok &= (np.diagonal(L, axis1=-2, axis2=-1) > 0).all(axis=-1)
    ok = ok.all(axis=-1)
    vals = linalg.logpdf_from_chol(nxt - mean, L).sum(axis=-1)
    if not ctx.obs.is_exact:
        obs = ctx.obs
        Ft = np.broadcast_to(obs.F.T, states.shape[:-2] + obs.F.T.shape)
        r = ctx.value - linalg.mat_vec(Ft, states[..., -1, :])
        vals = vals + linalg.logpdf_from_chol(r, np.linalg.cholesky(obs.Sigma))
    return vals, ok & np.isfinite(vals)


def _proposals(ctx, kind, rng, block_size):
    """Yield ``(states, log weight or None, log u)`` one proposal at a time."""
    while True:
        states, log_q, ok = sample_bridges(ctx, kind, block_size, rng)
        weight = np.full(block_size, np.nan)
        if ok.any():
            idx = np.flatnonzero(ok)
            vals, good = log_target_batch(ctx, states[idx])
            weight[idx[good]] = vals[good] - log_q[idx[good]]
        log_u = np.log(rng.uniform(size=block_size))
        for i in range(block_size):
            w = weight[i]
            yield states[i], (None if np.isnan(w) else w), log_u[i]


def run_chain(ctx, cfg):
    """Run the independence sampler described by ``cfg`` on ``ctx``.

    The chain starts from the first admissible proposal, which is accepted
    unconditionally; ``cfg.iterations`` MH iterations follow. Proposals that
    leave the admissible domain count as rejections.

    Raises
    ------
    InitialisationFailed
        If ``MAX_INIT_FAILURES`` consecutive initial proposals are inadmissible.
    """
    kind = ctx.check_kind(cfg.kind)
    rng = as_rng(cfg.seed)
    start = time.perf_counter()
    proposals = _proposals(ctx, kind, rng, cfg.block_size)

    for _ in range(MAX_INIT_FAILURES):
        cur_path, cur_w, _ = next(proposals)
        if cur_w is not None:
            break
    else:
        raise InitialisationFailed(
            f"{MAX_INIT_FAILURES} consecutive initial proposals were inadmissible")

    mid = ctx.m // 2
    keep = cfg.iterations - cfg.burn_in
    midpoint = np.empty((keep, ctx.model.d)) if cfg.store_midpoint else None
    stored = []
    accepted = 0
    for it in range(cfg.iterations):
        path, w, log_u = next(proposals)
        if w is not None and log_u < w - cur_w:
            cur_path, cur_w = path, w
            accepted += 1
        j = it - cfg.burn_in
        if j >= 0:
            if midpoint is not None:
                midpoint[j] = cur_path[mid]
            if j % cfg.stride == 0:
                stored.append(cur_path)

    mean, lower, upper = path_credible_band(np.stack(stored), min_paths=1)
    ess = None
    if midpoint is not None:
        ess = np.empty(ctx.model.d)
        for c in range(ctx.model.d):
            try:
                ess[c] = effective_sample_size(midpoint[:, c])
            except ZeroVarianceError:
                ess[c] = np.nan
    return ChainSummary(kind, accepted, cfg.iterations, ess, mean, lower, upper,
                        time.perf_counter() - start, midpoint)


def effective_sample_size(series):
    """ESS by Geyer's initial positive sequence estimator.

    Autocorrelations come from an FFT. Consecutive pairs
    ``rho_{2k} + rho_{2k+1}`` are summed while positive, and the result is
    clamped to ``(0, N]``.

    Raises
    ------
    ZeroVarianceError
        If the series is constant, where ESS is undefined.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n < 4:
        raise BridgeError("series too short for an ESS estimate")
    x = x - x.mean()
    var = np.dot(x, x) / n
    if not var > 1e-24 * max(1.0, float(np.abs(series).max()) ** 2):
        raise ZeroVarianceError("constant series has undefined ESS")
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    rho = acov / acov[0]
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    stop = np.flatnonzero(pairs <= 0)
    pairs = pairs[: stop[0]] if stop.size else pairs
    tau = -1.0 + 2.0 * pairs.sum()
    if not tau > 0:
        return float(n)
    return float(min(n, n / tau))


def path_credible_band(paths, min_paths=100):
    """Pointwise mean and 2.5% / 97.5% quantiles of stored paths.

    ``paths`` has shape ``(N, m + 1, d)``; returns three ``(m + 1, d)`` arrays.
    """
    paths = np.asarray(paths, dtype=float)
    if paths.shape[0] < min_paths:
        raise BridgeError(f"need at least {min_paths} stored paths")
    lower, upper = np.quantile(paths, [0.025, 0.975], axis=0)
    mean = paths.mean(axis=0)
    # keep the ordering exact where all stored values coincide
    mean = np.clip(mean, lower, upper)
    return mean, lower, upper

import numpy as np
import pytest
from conftest import constant_model, noisy_context

from diffbridge import (
    BridgeContext,
    MhConfig,
    ObservationModel,
    TimeGrid,
    effective_sample_size,
    make_model,
    mh_acceptance_log_ratio,
    path_credible_band,
    run_chain,
    sample_bridges,
)
from diffbridge.errors import BridgeError, InitialisationFailed, ZeroVarianceError
from diffbridge.mcmc import ChainState, log_target_batch


def _constant_ctx(m=20):
    model = constant_model([0.8, -0.3], [[1.5, 0.4], [0.4, 0.9]])
    return BridgeContext(model, ObservationModel.exact(2), TimeGrid(1.0, m), [1.2, -0.5], [0.0, 0.0])


# ---------------------------------------------------------------------------
# ESS


def test_ess_iid():
    x = np.random.default_rng(0).standard_normal(10_000)
    assert 9000 <= effective_sample_size(x) <= 11000


def test_ess_ar1():
    rng = np.random.default_rng(1)
    n, rho = 100_000, 0.5
    eps = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = eps[0] / np.sqrt(1 - rho**2)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + eps[i]
    assert effective_sample_size(x) == pytest.approx(n * (1 - rho) / (1 + rho), rel=0.1)


def test_ess_alternating_is_clamped():
    x = np.tile([1.0, -1.0], 500)
    assert effective_sample_size(x) == 1000


def test_ess_constant_raises():
    with pytest.raises(ZeroVarianceError):
        effective_sample_size(np.full(500, 3.7))


# ---------------------------------------------------------------------------
# credible band


def test_band_of_identical_paths_collapses():
    path = np.linspace(0, 1, 11).reshape(11, 1)
    mean, lo, hi = path_credible_band(np.repeat(path[None], 200, axis=0))
    for arr in (mean, lo, hi):
        np.testing.assert_array_equal(arr, path)


def test_band_of_normals():
    values = np.random.default_rng(2).standard_normal((10_000, 1, 1))
    _, lo, hi = path_credible_band(values)
    assert lo[0, 0] == pytest.approx(-1.96, abs=0.1)
    assert hi[0, 0] == pytest.approx(1.96, abs=0.1)


def test_band_needs_enough_paths():
    with pytest.raises(BridgeError):
        path_credible_band(np.zeros((99, 3, 1)))


def test_exact_chain_band_is_pinned():
    ctx = BridgeContext(make_model("birth-death"), ObservationModel.exact(1), TimeGrid(1.0, 20), [24.62], [50.0])
    s = run_chain(ctx, MhConfig(iterations=2000, seed=0, kind="RBminus"))
    for end, value in ((0, 50.0), (-1, 24.62)):
        assert s.path_lower[end, 0] == s.path_upper[end, 0] == value


# ---------------------------------------------------------------------------
# acceptance ratio


def test_ratio_identity_and_formula():
    cur = ChainState(np.zeros((3, 1)), -4.0, -2.5)
    prop = ChainState(np.ones((3, 1)), -3.0, -1.0)
    assert mh_acceptance_log_ratio(cur, cur) == 0.0
    assert mh_acceptance_log_ratio(cur, prop) == pytest.approx((-3.0 + 4.0) - (-1.0 + 2.5))


def test_constant_coefficient_ratio_is_zero():
    ctx = _constant_ctx()
    states, log_q, ok = sample_bridges(ctx, "MDB", 500, 5)
    lt, ok2 = log_target_batch(ctx, states)
    assert ok.all() and ok2.all()
    w = lt - log_q
    assert np.abs(w - w[0]).max() < 1e-10


def test_em_noisy_ratio_reduces_to_likelihood_ratio():
    ctx = noisy_context("aphid")
    states, log_q, _ = sample_bridges(ctx, "EM", 400, 6)
    lt, _ = log_target_batch(ctx, states)
    ll = np.array([ctx.obs.log_likelihood(ctx.value, s[-1]) for s in states])
    for i in range(0, 400, 2):
        cur = ChainState(states[i], lt[i], log_q[i])
        prop = ChainState(states[i + 1], lt[i + 1], log_q[i + 1])
        assert mh_acceptance_log_ratio(cur, prop) == pytest.approx(ll[i + 1] - ll[i], abs=1e-10)


# ---------------------------------------------------------------------------
# chain behaviour


def test_constant_coefficient_chain_accepts_everything():
    s = run_chain(_constant_ctx(), MhConfig(iterations=5000, seed=1, kind="MDB"))
    assert s.acceptance_rate == 1.0
    assert s.accept_count == s.iteration_count == 5000


def test_midpoint_marginal_matches_gaussian_bridge():
    ctx = _constant_ctx(m=20)
    s = run_chain(ctx, MhConfig(iterations=20_000, seed=2, kind="MDB", burn_in=100))
    x = s.midpoint_series
    beta = ctx.model.diffusion(np.zeros(2))
    mean = 0.5 * np.array([1.2, -0.5])
    var = np.diag(beta) * 0.25
    se = np.sqrt(var / s.ess_midpoint)
    assert np.all(np.abs(x.mean(axis=0) - mean) < 2 * se)
    np.testing.assert_allclose(x.var(axis=0), var, rtol=0.05)


def test_chain_is_deterministic():
    ctx = noisy_context("lotka-volterra")
    cfg = MhConfig(iterations=1500, seed=9, kind="GPMDB", block_size=300)
    a, b = run_chain(ctx, cfg), run_chain(ctx, cfg)
    assert a.accept_count == b.accept_count
    np.testing.assert_array_equal(a.midpoint_series, b.midpoint_series)
    np.testing.assert_array_equal(a.path_mean, b.path_mean)


def test_chain_counts_inadmissible_as_rejections():
    ctx = BridgeContext(make_model("birth-death"), ObservationModel.exact(1), TimeGrid(1.0, 10), [1.5], [2.0])
    s = run_chain(ctx, MhConfig(iterations=3000, seed=0, kind="EM"))
    assert s.iteration_count == 3000
    assert 0 < s.acceptance_rate < 1


def test_initialisation_failure():
    import dataclasses
    never = dataclasses.replace(constant_model([-1e3], [[1e-6]]), admissible_fn=lambda x: x[..., 0] > -1.0)
    ctx = BridgeContext(never, ObservationModel.noisy([[1.0]], [[1.0]]), TimeGrid(1.0, 4), [0.0], [0.0])
    with pytest.raises(InitialisationFailed):
        run_chain(ctx, MhConfig(iterations=10, seed=0, kind="EM", block_size=50))


def test_config_validation():
    for bad in (dict(iterations=0), dict(burn_in=-1), dict(burn_in=10, iterations=10),
                dict(stride=0), dict(block_size=0), dict(kind="LB(-1)")):
        with pytest.raises(BridgeError):
            MhConfig(**bad)
    assert MhConfig().iterations == 100_000 and MhConfig().stride == 10


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["MDB", "RB", "RBminus", "GPMDB"])
def test_acceptance_roughly_constant_in_m(kind):
    bd = make_model("birth-death")
    rates = []
    for m in (25, 100):
        ctx = BridgeContext(bd, ObservationModel.exact(1), TimeGrid(1.0, m), [18.49], [50.0])
        rates.append(run_chain(ctx, MhConfig(iterations=10_000, seed=4, kind=kind)).acceptance_rate)
    assert abs(rates[0] - rates[1]) < 0.05

import math

import numpy as np
import pytest

from diffbridge import ObservationModel, lna_transition_terms, make_model, rho_hat, solve_lna, solve_ode
from diffbridge.lna import _propagate_numpy, propagate_lna_cov, substeps_for


def test_solve_ode_examples():
    times = np.linspace(0, 1, 11)
    np.testing.assert_array_equal(solve_ode(lambda t, y: 0 * y, 0.0, np.array([3.0]), times)[:, 0], 3.0)
    y = solve_ode(lambda t, y: -0.7 * y, 0.0, np.array([50.0]), [0.0, 1.0])
    assert y[-1, 0] == pytest.approx(50 * math.exp(-0.7), abs=1e-8)
    y = solve_ode(lambda t, y: np.cos(t) + 0 * y, 0.0, np.array([0.0]), [0.0, math.pi / 2])
    assert y[-1, 0] == pytest.approx(1.0, abs=1e-9)


def test_substeps():
    assert substeps_for(0.02) == 2
    assert substeps_for(0.08) == 8
    assert substeps_for(0.001) == 1


def test_birth_death_closed_form_values():
    bd = make_model("birth-death")
    sol = solve_lna(bd, [50.0], 0.0, [0.0, 1.0])
    assert sol.eta[-1, 0] == pytest.approx(24.8293, abs=1e-4)
    assert sol.P[-1, 0, 0] == pytest.approx(0.4966, abs=1e-4)
    assert sol.psi[-1, 0, 0] == pytest.approx(65.1698, abs=1e-4)


def test_birth_death_closed_form_vs_numeric():
    bd = make_model("birth-death")
    times = np.linspace(0, 2, 101)
    a = solve_lna(bd, [50.0], 0.0, times)
    b = solve_lna(bd, [50.0], 0.0, times, numeric=True)
    for u, v in ((a.eta, b.eta), (a.P, b.P), (a.psi, b.psi)):
        assert np.abs(u - v).max() < 1e-6


@pytest.mark.parametrize("name,x0", [("birth-death", [50.0]), ("lotka-volterra", [71.0, 79.0]),
                                     ("aphid", [347.55, 398.94])])
def test_initial_conditions(name, x0):
    sol = solve_lna(make_model(name), x0, 0.0, [0.0, 0.5])
    np.testing.assert_array_equal(sol.eta[0], x0)
    np.testing.assert_array_equal(sol.P[0], np.eye(len(x0)))
    np.testing.assert_array_equal(sol.psi[0], 0.0)


@pytest.mark.parametrize("name,x0,T", [("lotka-volterra", [71.0, 79.0], 4.0), ("aphid", [347.55, 398.94], 1.28),
                                       ("birth-death", [50.0], 2.0)])
def test_psi_symmetric_psd(name, x0, T):
    sol = solve_lna(make_model(name), x0, 0.0, np.linspace(0, T, 51))
    assert np.abs(sol.psi - np.swapaxes(sol.psi, -1, -2)).max() < 1e-9
    assert np.linalg.eigvalsh(sol.psi).min() > -1e-8


def test_rho_hat_zero_innovation_and_origin():
    lv = make_model("lotka-volterra")
    sol = solve_lna(lv, [71.0, 79.0], 0.0, np.linspace(0, 2, 21))
    obs = ObservationModel.exact(2)
    np.testing.assert_allclose(rho_hat(sol, obs, sol.eta[-1]).rho, 0.0, atol=1e-12)
    track = rho_hat(sol, obs, [120.0, 60.0])
    np.testing.assert_array_equal(track.rho[0], 0.0)


def test_rho_hat_exact_end_equals_innovation():
    bd = make_model("birth-death")
    sol = solve_lna(bd, [50.0], 0.0, np.linspace(0, 1, 51))
    track = rho_hat(sol, ObservationModel.exact(1), [24.62])
    assert track.rho[-1, 0] == pytest.approx(24.62 - sol.eta[-1, 0], abs=1e-10)
    assert track.rho[-1, 0] == pytest.approx(-0.2093, abs=1e-4)


def test_transition_terms_empty_interval():
    lv = make_model("lotka-volterra")
    eta, P, psi = lna_transition_terms(lv, np.array([80.0, 70.0]), 2.0, 2.0)
    np.testing.assert_array_equal(eta, [80.0, 70.0])
    np.testing.assert_array_equal(P, np.eye(2))
    np.testing.assert_array_equal(psi, 0.0)


@pytest.mark.parametrize("name,x0,T", [("birth-death", [50.0], 2.0), ("lotka-volterra", [71.0, 79.0], 4.0),
                                       ("aphid", [347.55, 398.94], 1.28)])
def test_identities_match_reintegration(name, x0, T):
    model = make_model(name)
    sol = solve_lna(model, x0, 0.0, np.linspace(0, T, 51))
    for k in (0, 10, 30, 49):
        t = sol.times[k]
        a = lna_transition_terms(model, None, t, T, lna=sol)
        b = lna_transition_terms(model, sol.eta[k], t, T)
        for u, v in zip(a, b):
            assert np.abs(u - v).max() / max(1.0, np.abs(v).max()) < 1e-8


def test_identity_at_origin_reproduces_solution():
    lv = make_model("lotka-volterra")
    sol = solve_lna(lv, [71.0, 79.0], 0.0, np.linspace(0, 2, 11))
    eta, P, psi = lna_transition_terms(lv, None, 0.0, 2.0, lna=sol)
    np.testing.assert_allclose(P, sol.P[-1], rtol=1e-14)
    np.testing.assert_allclose(psi, sol.psi[-1], rtol=1e-14)


@pytest.mark.parametrize("name", ["lotka-volterra", "aphid"])
def test_compiled_kernel_matches_numpy(name):
    model = make_model(name)
    x = np.random.default_rng(0).uniform(20, 400, size=(4, 3, 2))
    fast = propagate_lna_cov(model, x, 1.5, 150)
    ref = _propagate_numpy(model, x, 1.5, 150)
    for u, v in zip(fast, ref):
        assert u.shape == v.shape
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-9)


def test_covariance_form_matches_psi_form():
    lv = make_model("lotka-volterra")
    sol = solve_lna(lv, [71.0, 79.0], 0.0, [0.0, 3.0])
    eta, P, V = propagate_lna_cov(lv, np.array([71.0, 79.0]), 3.0, 300)
    np.testing.assert_allclose(V, sol.residual_cov(-1), rtol=1e-9)
    np.testing.assert_allclose(P, sol.P[-1], rtol=1e-12)

import numpy as np
import pytest

from diffbridge import BridgeContext, DiffusionModel, ObservationModel, TimeGrid, make_model


def constant_model(a, b, name="constant"):
    """dX = a dt + b^{1/2} dW with no admissibility restriction."""
    a, b = np.atleast_1d(np.asarray(a, dtype=float)), np.atleast_2d(np.asarray(b, dtype=float))
    d = a.shape[0]
    return DiffusionModel(
        name, d, np.zeros(1),
        lambda x, th: np.broadcast_to(a, x.shape).copy(),
        lambda x, th: np.broadcast_to(b, x.shape + (d,)).copy(),
        lambda x, th: np.zeros(x.shape + (d,)),
    )


# (model name, x0, T, noisy observation F, Sigma, y, state box for random tests)
NOISY_CASES = {
    "birth-death": ([50.0], 1.0, [[1.0]], [[4.0]], [24.0], (5.0, 80.0)),
    "lotka-volterra": ([71.0, 79.0], 2.0, [[1.0], [0.0]], [[25.0]], [130.0], (20.0, 300.0)),
    "aphid": ([347.55, 398.94], 1.28, [[1.0], [0.0]], [[100.0]], [815.0], (100.0, 2000.0)),
}

EXACT_CASES = {
    "birth-death": ([50.0], 1.0, [24.62]),
    "lotka-volterra": ([71.0, 79.0], 2.0, [133.35, 70.75]),
    "aphid": ([347.55, 398.94], 1.28, [800.0, 1200.0]),
}


def noisy_context(name, m=20):
    x0, T, F, Sigma, y, _ = NOISY_CASES[name]
    return BridgeContext(make_model(name), ObservationModel.noisy(F, Sigma), TimeGrid(T, m), y, x0)


def exact_context(name, m=20):
    x0, T, xT = EXACT_CASES[name]
    return BridgeContext(make_model(name), ObservationModel.exact(len(x0)), TimeGrid(T, m), xT, x0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)

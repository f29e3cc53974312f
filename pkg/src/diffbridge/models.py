"""The benchmark diffusions: birth-death, Lotka-Volterra and aphid growth."""

import numpy as np

from . import kernels
from .core import DiffusionModel, as_rng
from .errors import BadParameterCount, UnknownModel


def _positive(x):
    return (x > 0).all(axis=-1)


# Birth-death: dX = (b - c) X dt + sqrt((b + c) X) dW


def _bd_drift(x, th):
    return (th[0] - th[1]) * x


def _bd_diffusion(x, th):
    return ((th[0] + th[1]) * x)[..., None]


def _bd_jacobian(x, th):
    return np.full(x.shape + (1,), th[0] - th[1])


def _bd_lna(x0, s, th):
    """eta, P, psi after elapsed time ``s`` from ``x0``; broadcasts over both."""
    x0 = np.asarray(x0, dtype=float)[..., 0]
    s = np.asarray(s, dtype=float)
    lam = th[0] - th[1]
    growth = np.exp(lam * s)
    eta = (x0 * growth)[..., None]
    P = growth[..., None, None] * np.ones(eta.shape + (1,))
    psi = ((th[0] + th[1]) / lam * (1.0 - 1.0 / growth) * x0)[..., None, None]
    return eta, P, psi


# Lotka-Volterra, state (prey, predator)


def _lv_drift(x, th):
    x1, x2 = x[..., 0], x[..., 1]
    out = np.empty(x.shape)
    out[..., 0] = th[0] * x1 - th[1] * x1 * x2
    out[..., 1] = th[1] * x1 * x2 - th[2] * x2
    return out


def _lv_diffusion(x, th):
    x1, x2 = x[..., 0], x[..., 1]
    inter = th[1] * x1 * x2
    out = np.empty(x.shape + (2,))
    out[..., 0, 0] = th[0] * x1 + inter
    out[..., 0, 1] = -inter
    out[..., 1, 0] = -inter
    out[..., 1, 1] = th[2] * x2 + inter
    return out


def _lv_jacobian(x, th):
    x1, x2 = x[..., 0], x[..., 1]
    out = np.empty(x.shape + (2,))
    out[..., 0, 0] = th[0] - th[1] * x2
    out[..., 0, 1] = -th[1] * x1
    out[..., 1, 0] = th[1] * x2
    out[..., 1, 1] = th[1] * x1 - th[2]
    return out


# Aphid growth, state (population N, cumulative population C)


def _aphid_drift(x, th):
    n, c = x[..., 0], x[..., 1]
    out = np.empty(x.shape)
    out[..., 0] = th[0] * n - th[1] * n * c
    out[..., 1] = th[0] * n
    return out


def _aphid_diffusion(x, th):
    n, c = x[..., 0], x[..., 1]
    birth = th[0] * n
    out = np.empty(x.shape + (2,))
    out[..., 0, 0] = birth + th[1] * n * c
    out[..., 0, 1] = birth
    out[..., 1, 0] = birth
    out[..., 1, 1] = birth
    return out


def _aphid_jacobian(x, th):
    n, c = x[..., 0], x[..., 1]
    out = np.empty(x.shape + (2,))
    out[..., 0, 0] = th[0] - th[1] * c
    out[..., 0, 1] = -th[1] * n
    out[..., 1, 0] = th[0]
    out[..., 1, 1] = 0.0
    return out


_REGISTRY = {
    "birth-death": (1, 2, _bd_drift, _bd_diffusion, _bd_jacobian, _bd_lna, None),
    "lotka-volterra": (2, 3, _lv_drift, _lv_diffusion, _lv_jacobian, None,
                       kernels.make_propagator(kernels.lotka_volterra_rhs, 2)),
    "aphid": (2, 2, _aphid_drift, _aphid_diffusion, _aphid_jacobian, None,
              kernels.make_propagator(kernels.aphid_rhs, 2)),
}

#: Parameter values used in the benchmark experiments.
DEFAULT_THETA = {
    "birth-death": (0.1, 0.8),
    "lotka-volterra": (0.5, 0.0025, 0.3),
    "aphid": (1.45, 0.0009),
}

#: Boxes of plausible states used for self-checks.
STATE_BOX = {
    "birth-death": ((1.0,), (100.0,)),
    "lotka-volterra": ((10.0, 10.0), (500.0, 500.0)),
    "aphid": ((1.0, 1.0), (2000.0, 2000.0)),
}

MODEL_NAMES = tuple(_REGISTRY)


def make_model(name, theta=None):
    """Build one of the benchmark models by its CLI name.

    ``theta`` defaults to the benchmark parameter values.
    """
    try:
        d, p, drift, diffusion, jacobian, lna, kernel = _REGISTRY[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}") from None
    theta = DEFAULT_THETA[name] if theta is None else theta
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != p:
        raise BadParameterCount(f"{name} takes {p} parameters, got {theta.shape[0]}")
    return DiffusionModel(name, d, theta, drift, diffusion, jacobian, _positive, lna, kernel)


def finite_difference_jacobian(model, x, rel_step=1e-6):
    """Central differences of the drift at a single state ``x``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    out = np.empty((d, d))
    for j in range(d):
        h = rel_step * max(1.0, abs(x[j]))
        e = np.zeros(d)
        e[j] = h
        out[:, j] = (model.drift(x + e) - model.drift(x - e)) / (2 * h)
    return out


def jacobian_selfcheck(model, n_samples=100, seed=0, low=None, high=None):
    """Worst relative error between ``model.jacobian`` and finite differences.

    States are drawn uniformly from ``[low, high]`` (default: the model's
    entry in ``STATE_BOX``). The error at a state is the max-entry
    difference scaled by the max-entry size of the analytic Jacobian.
    """
    rng = as_rng(seed)
    if low is None or high is None:
        low, high = STATE_BOX.get(model.name, ((1.0,) * model.d, (100.0,) * model.d))
    xs = rng.uniform(low, high, size=(n_samples, model.d))
    worst = 0.0
    for x in xs:
        H = model.jacobian(x)
        fd = finite_difference_jacobian(model, x)
        err = np.abs(H - fd).max() / max(np.abs(H).max(), 1e-12)
        worst = max(worst, err)
    return worst

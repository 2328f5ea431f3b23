import numpy as np
import pytest

from fedmodal import nn


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a-n| / max(floor, |a|+|n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(floor, np.abs(a) + np.abs(n))


def finite_difference_param_grads(loss_of_params, params, eps=1e-5):
    """Central finite differences of a scalar loss over every map entry."""
    entries = {}
    for key in params:
        base = params[key]
        grad = np.zeros_like(base)
        flat = grad.ravel()
        for i in range(base.size):
            bumped = base.copy()
            bumped.ravel()[i] = base.ravel()[i] + eps
            up = loss_of_params(_replace(params, key, bumped))
            bumped.ravel()[i] = base.ravel()[i] - eps
            down = loss_of_params(_replace(params, key, bumped))
            flat[i] = (up - down) / (2 * eps)
        entries[key] = grad
    return nn.ParameterMap(entries)


def _replace(params, key, array):
    entries = {k: params[k] for k in params}
    entries[key] = array
    return nn.ParameterMap(entries)


def random_network(rng, max_layers=4, max_dim=16, activations=("relu", "leaky_relu", "identity", "softmax")):
    """A random small dense net for gradient checks."""
    depth = rng.integers(1, max_layers + 1)
    dims = rng.integers(2, max_dim + 1, size=depth + 1)
    layers = []
    for k in range(depth):
        act = activations[rng.integers(len(activations))]
        layers.append(nn.LayerSpec(int(dims[k]), int(dims[k + 1]), act, f"l{k}", 0.1))
    return nn.init_network(layers, int(rng.integers(1 << 30)))


def linear_probe_accuracy(features, labels, class_count, train_fraction=0.7, seed=0):
    """Closed-form probe: ridge-regress one-hot targets, argmax, held-out accuracy."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    order = np.random.default_rng(seed).permutation(len(labels))
    cut = int(train_fraction * len(labels))
    fit_idx, eval_idx = order[:cut], order[cut:]

    x_fit = np.hstack([features[fit_idx], np.ones((len(fit_idx), 1))])
    y_fit = np.zeros((len(fit_idx), class_count))
    y_fit[np.arange(len(fit_idx)), labels[fit_idx]] = 1.0
    gram = x_fit.T @ x_fit + 1e-6 * np.eye(x_fit.shape[1])
    coef = np.linalg.solve(gram, x_fit.T @ y_fit)

    x_eval = np.hstack([features[eval_idx], np.ones((len(eval_idx), 1))])
    preds = np.argmax(x_eval @ coef, axis=1)
    return float((preds == labels[eval_idx]).mean())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

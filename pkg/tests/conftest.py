"""Shared test helpers: finite-difference oracles and tolerance checks."""

import numpy as np
import pytest

from wdropout import network


def fd_gradients(model, X, Y, mask, objective, h=1e-5):
    """Central finite differences of ``objective`` w.r.t. every parameter.

    Independent of backward_pass: only forward evaluations are used.
    """

    def value():
        preds, _ = network.forward_pass(model, X, mask)
        return objective(preds, Y)[0]

    grads_w, grads_b = [], []
    for arrs, grads in ((model.weights, grads_w), (model.biases, grads_b)):
        for p in arrs:
            g = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + h
                hi = value()
                p[idx] = orig - h
                lo = value()
                p[idx] = orig
                g[idx] = (hi - lo) / (2.0 * h)
            grads.append(g)
    return network.Gradients(weights=grads_w, biases=grads_b)


def max_rel_error(analytic: network.Gradients, numeric: network.Gradients) -> float:
    """Worst-case |a - n| / max(1, |a|, |n|) over all parameters."""
    worst = 0.0
    for a_list, n_list in (
        (analytic.weights, numeric.weights),
        (analytic.biases, numeric.biases),
    ):
        for a, n in zip(a_list, n_list):
            denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

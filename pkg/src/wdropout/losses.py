"""Training objectives and their exact gradients.

All batch objectives take stacked predictions of shape
``(n_passes, n_points, width)`` and targets ``(n_points, m)``, and return
``(value, dpreds)`` where ``dpreds`` is the gradient of the scalar value
w.r.t. the predictions — ready to feed into ``network.backward_pass``.
Per point, losses sum over target coordinates; the batch reduces by mean.

The Wasserstein objective matches each target against the sample of
sub-network outputs: with ``mu`` / ``var`` the per-coordinate mean and
population variance over the pass axis, ``e = mu - y`` and
``b = sqrt(e^2 + var)``, the per-coordinate loss is

    e^2 + (sqrt(var) - b)^2

i.e. the squared 2-Wasserstein distance between the gaussian fitted to
the sub-network sample and the gaussian centred at the observation whose
spread accounts for the current residual.  Gradients flow through both
the mean and the variance estimator.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "VARIANCE_FLOOR",
    "softplus",
    "inv_softplus",
    "variance_from_raw",
    "sigma_from_raw",
    "sample_stats",
    "ws2_squared_gaussians",
    "wdropout_loss",
    "gaussian_nll_loss",
    "wdropout_objective",
    "mse_objective",
    "gaussian_nll_objective",
]

# additive offset keeping predicted variances strictly positive
VARIANCE_FLOOR = 1e-6


def softplus(x):
    """log(1 + exp(x)), overflow-safe."""
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    """Inverse of softplus for y > 0 (stable for large y)."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def variance_from_raw(raw):
    """Map a raw head output to a strictly positive variance."""
    return softplus(raw) + VARIANCE_FLOOR


def sigma_from_raw(raw):
    return np.sqrt(variance_from_raw(raw))


def sample_stats(sample, axis=0):
    """Mean and population variance (1/L normalization) along ``axis``."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.shape[axis] < 1:
        raise ValueError("need at least one sample")
    mu = sample.mean(axis=axis)
    var = np.square(sample - np.expand_dims(mu, axis)).mean(axis=axis)
    return mu, var


def ws2_squared_gaussians(mu1, sigma1, mu2, sigma2):
    """Squared 2-Wasserstein distance between two univariate gaussians."""
    sigma1 = np.asarray(sigma1, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma1 < 0.0) or np.any(sigma2 < 0.0):
        raise ValueError("standard deviations must be >= 0")
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    return np.square(mu1 - mu2) + np.square(sigma1 - sigma2)


def _as_stacked(preds, targets, width_factor=1):
    """Normalize shapes to preds (L, n, w) and targets (n, m)."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 0:
        targets = targets.reshape(1, 1)
    elif targets.ndim == 1:
        targets = targets[:, None]
    if preds.ndim == 1:
        preds = preds[:, None, None]
    elif preds.ndim == 2:
        preds = preds[:, None, :] if targets.shape[0] == 1 else preds[None, :, :]
    if preds.ndim != 3 or targets.ndim != 2:
        raise ValueError("predictions must be (n_passes, n_points, width)")
    if preds.shape[1] != targets.shape[0]:
        raise ValueError(
            f"{preds.shape[1]} prediction rows vs {targets.shape[0]} targets"
        )
    if preds.shape[2] != width_factor * targets.shape[1]:
        raise ValueError(
            f"prediction width {preds.shape[2]} does not match "
            f"{width_factor} * {targets.shape[1]} target columns"
        )
    return preds, targets


def wdropout_objective(preds, targets):
    """Wasserstein dropout batch loss and its gradient w.r.t. each pass.

    ``preds``: sub-network outputs ``(L, n, m)`` with L >= 1; ``targets``:
    ``(n, m)``.  Zero-variance samples are an ordinary, fully differentiable
    case (the loss degenerates to ``2 e^2`` smoothly).
    """
    preds, targets = _as_stacked(preds, targets)
    L = preds.shape[0]
    n = preds.shape[1]

    mu, var = sample_stats(preds, axis=0)
    # spread at the level of accumulated roundoff (identical passes whose
    # mean differs from them by an ulp) is genuinely zero; 1/sigma would
    # otherwise amplify that roundoff into O(1) gradient noise
    roundoff = np.square(8.0 * np.finfo(np.float64).eps * np.abs(mu))
    var = np.where(var <= roundoff, 0.0, var)
    e = mu - targets
    sigma = np.sqrt(var)
    b = np.sqrt(np.square(e) + var)
    gap = sigma - b
    value = float(np.sum(np.square(e) + np.square(gap)) / n)

    # d/dmu = 2e - 2*gap*e/b ; d/dvar = gap * (1/sigma - 1/b)
    # b = 0 only when e = 0 and var = 0, where the gradient vanishes;
    # the 1/sigma factor always multiplies (pred - mu) = 0 when var = 0.
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_b = np.where(b > 0.0, 1.0 / np.where(b > 0.0, b, 1.0), 0.0)
        inv_sigma = np.where(sigma > 0.0, 1.0 / np.where(sigma > 0.0, sigma, 1.0), 0.0)
    dmu = 2.0 * e - 2.0 * gap * e * inv_b
    dvar = gap * (inv_sigma - inv_b)
    dpreds = (dmu / L + dvar * 2.0 * (preds - mu) / L) / n
    return value, dpreds


def mse_objective(preds, targets):
    """Plain squared error, averaged over passes and points."""
    preds, targets = _as_stacked(preds, targets)
    L, n = preds.shape[0], preds.shape[1]
    e = preds - targets
    value = float(np.sum(np.square(e)) / (L * n))
    return value, 2.0 * e / (L * n)


def gaussian_nll_objective(preds, targets):
    """Heteroscedastic gaussian negative log-likelihood (constant dropped).

    ``preds`` are raw gaussian-head outputs ``(L, n, 2m)``; the raw scale
    half is squashed through ``softplus + VARIANCE_FLOOR``.  Per
    coordinate: ``0.5 * log(var) + e^2 / (2 var)``.
    """
    preds, targets = _as_stacked(preds, targets, width_factor=2)
    L, n = preds.shape[0], preds.shape[1]
    m = targets.shape[1]
    mu, raw = preds[..., :m], preds[..., m:]
    var = variance_from_raw(raw)
    e = mu - targets
    value = float(np.sum(0.5 * np.log(var) + np.square(e) / (2.0 * var)) / (L * n))

    dmu = e / var
    dvar = 0.5 / var - np.square(e) / (2.0 * np.square(var))
    draw = dvar * _sigmoid(raw)
    dpreds = np.concatenate([dmu, draw], axis=-1) / (L * n)
    return value, dpreds


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def wdropout_loss(sample, y) -> float:
    """Wasserstein dropout loss for one observation.

    ``sample``: sub-network outputs ``(L,)`` or ``(L, m)``; ``y``: scalar
    or ``(m,)``.  Multi-output targets sum per-coordinate losses.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim == 1:
        sample = sample[:, None]
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    value, _ = wdropout_objective(sample[:, None, :], y[None, :])
    return value


def gaussian_nll_loss(mu, raw_scale, y) -> float:
    """Per-observation NLL with the same squashing as the batch objective."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    raw = np.atleast_1d(np.asarray(raw_scale, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    preds = np.concatenate([mu, raw])[None, None, :]
    value, _ = gaussian_nll_objective(preds, y[None, :])
    return value

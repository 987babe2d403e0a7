"""Calibration and accuracy metrics for predictive distributions.

Everything is expressed through normalized residuals
``r_i = (mu_i - y_i) / sigma_i``: a perfectly calibrated predictor makes
them standard normal, and each metric quantifies one kind of departure
from N(0, 1).  Predicted scales are floored at a tiny positive value so
residuals stay finite; the number of floored points is reported rather
than hidden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import special

__all__ = [
    "SIGMA_FLOOR",
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_quantile",
    "NormalizedResiduals",
    "residuals",
    "rmse",
    "mean_nll",
    "ece",
    "ws1",
    "etl",
    "ks",
    "analytic_ws1",
    "analytic_ece",
    "analytic_curves",
    "EvalReport",
    "evaluate",
]

SIGMA_FLOOR = 1e-12


def std_normal_cdf(t):
    return special.ndtr(t)


def std_normal_pdf(t):
    t = np.asarray(t, dtype=np.float64)
    return np.exp(-0.5 * np.square(t)) / math.sqrt(2.0 * math.pi)


def std_normal_quantile(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("quantile argument must lie strictly inside (0, 1)")
    return special.ndtri(u)


@dataclass
class NormalizedResiduals:
    """Standardized residuals plus how many scales hit the floor."""

    values: np.ndarray
    n_floored: int = 0

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _as_residual_values(r):
    if isinstance(r, NormalizedResiduals):
        return np.asarray(r.values, dtype=np.float64)
    return np.asarray(r, dtype=np.float64)


def _check_1d_nonempty(*arrays):
    out = []
    n = None
    for a in arrays:
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        if a.size == 0:
            raise ValueError("need at least one point")
        if n is not None and a.size != n:
            raise ValueError("array lengths differ")
        n = a.size
        out.append(a)
    return out if len(out) > 1 else out[0]


def residuals(mu, sigma, y, floor=SIGMA_FLOOR) -> NormalizedResiduals:
    """Normalized residuals ``(mu - y) / max(sigma, floor)``."""
    mu, sigma, y = _check_1d_nonempty(mu, sigma, y)
    if np.any(sigma < 0.0):
        raise ValueError("predicted scales must be >= 0")
    n_floored = int(np.count_nonzero(sigma < floor))
    return NormalizedResiduals(
        values=(mu - y) / np.maximum(sigma, floor), n_floored=n_floored
    )


def rmse(mu, y) -> float:
    mu, y = _check_1d_nonempty(mu, y)
    return float(np.sqrt(np.mean(np.square(mu - y))))


def mean_nll(mu, sigma, y, floor=SIGMA_FLOOR) -> float:
    """Mean gaussian negative log-likelihood, constant term dropped."""
    mu, sigma, y = _check_1d_nonempty(mu, sigma, y)
    if np.any(sigma < 0.0):
        raise ValueError("predicted scales must be >= 0")
    s = np.maximum(sigma, floor)
    return float(np.mean(np.log(s) + np.square(mu - y) / (2.0 * np.square(s))))


def ece(r, n_bins: int = 10) -> float:
    """Expected calibration error over equal-probability quantile bins.

    Residuals are mapped through the standard normal CDF; bin ``j`` covers
    ``[j/B, (j+1)/B)`` with the last bin closed at 1.  Returns
    ``sum_j |share_j - 1/B|``, ranging from 0 (perfect) to ``2 (B-1)/B``.
    """
    r = _check_1d_nonempty(_as_residual_values(r))
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    u = std_normal_cdf(r)
    idx = np.minimum((u * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    # sum_j |share_j - 1/B| as an exact integer ratio: order-independent
    # and exactly 2 (B-1)/B when everything lands in one bin
    total = int(np.abs(counts.astype(np.int64) * n_bins - r.size).sum())
    return total / (r.size * n_bins)


def _cdf_antiderivative(t):
    """Antiderivative of the standard normal CDF: t*Phi(t) + phi(t)."""
    return t * special.ndtr(t) + std_normal_pdf(t)


def ws1(r) -> float:
    """Exact 1-Wasserstein distance between residuals and N(0, 1).

    Integrates ``|F_emp - Phi|`` in closed form on every step segment of
    the empirical CDF (splitting where the curves cross) and analytically
    over both tails.
    """
    r = np.sort(_check_1d_nonempty(_as_residual_values(r)))
    if not np.isfinite(r).all():
        raise ValueError("residuals must be finite")
    n = r.size
    total = _cdf_antiderivative(r[0]) + (_cdf_antiderivative(-r[-1]))
    # right tail via symmetry: int_a^inf (1 - Phi) = int_-inf^-a Phi
    if n == 1:
        return float(total)

    a, b = r[:-1], r[1:]
    c = np.arange(1, n, dtype=np.float64) / n
    with np.errstate(divide="ignore"):
        crossing = special.ndtri(c)
    ts = np.clip(crossing, a, b)
    ga, gt, gb = (_cdf_antiderivative(x) for x in (a, ts, b))
    segments = (c * (ts - a) - (gt - ga)) + ((gb - gt) - c * (b - ts))
    return float(total + segments.sum())


def etl(r, tail_level: float = 0.99) -> float:
    """Expected tail loss: mean of the ceil((1 - q) n) largest ``|r|``."""
    r = np.abs(_check_1d_nonempty(_as_residual_values(r)))
    if not 0.0 <= tail_level < 1.0:
        raise ValueError("tail_level must lie in [0, 1)")
    n = r.size
    k = max(1, math.ceil((1.0 - tail_level) * n - 1e-9))
    return float(np.partition(r, n - k)[n - k :].mean())


def ks(r) -> float:
    """Kolmogorov-Smirnov statistic against the standard normal."""
    r = np.sort(_check_1d_nonempty(_as_residual_values(r)))
    n = r.size
    u = std_normal_cdf(r)
    steps = np.arange(n + 1, dtype=np.float64) / n
    return float(max(np.max(steps[1:] - u), np.max(u - steps[:-1])))


def analytic_ws1(mu: float, sigma: float) -> float:
    """1-Wasserstein distance between ``N(mu, sigma^2)`` and ``N(0, 1)``.

    Numeric integral of the CDF difference, split at the single crossing
    point; handles ``sigma = 0`` (point mass) and ``sigma = 1`` exactly.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    from scipy import integrate

    if sigma == 1.0:
        return abs(float(mu))
    if sigma == 0.0:
        f = lambda t: abs((t >= mu) - special.ndtr(t))
        crossing = mu
    else:
        f = lambda t: abs(special.ndtr((t - mu) / sigma) - special.ndtr(t))
        crossing = mu / (1.0 - sigma)
    lo = min(-9.0, mu - 9.0 * sigma)
    hi = max(9.0, mu + 9.0 * sigma)
    points = [crossing] if lo < crossing < hi else None
    value, _ = integrate.quad(f, lo, hi, points=points, limit=200)
    return float(value)


def analytic_ece(mu: float, sigma: float, n_bins: int = 10) -> float:
    """ECE of ``N(mu, sigma^2)`` residuals against N(0, 1), in closed form.

    Bin edges are standard normal quantiles; the mass a miscalibrated
    gaussian puts in each bin follows from its CDF at those edges.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    edges = std_normal_quantile(np.arange(1, n_bins) / n_bins)
    if sigma == 0.0:
        u = std_normal_cdf(mu)
        j = min(int(u * n_bins), n_bins - 1)
        mass = np.zeros(n_bins)
        mass[j] = 1.0
    else:
        inner = std_normal_cdf((edges - mu) / sigma)
        cdf = np.concatenate([[0.0], inner, [1.0]])
        mass = np.diff(cdf)
    return float(np.abs(mass - 1.0 / n_bins).sum())


def analytic_curves(mu_grid, sigma_grid, n_bins: int = 10):
    """Reference curves: how each metric responds to gaussian miscalibration.

    For every ``(mu, sigma)`` pair (broadcast together) returns the exact
    1-Wasserstein, 2-Wasserstein and ECE of ``N(mu, sigma^2)`` vs N(0, 1).
    """
    mu_grid, sigma_grid = np.broadcast_arrays(
        np.atleast_1d(np.asarray(mu_grid, dtype=np.float64)),
        np.atleast_1d(np.asarray(sigma_grid, dtype=np.float64)),
    )
    w1 = np.array([analytic_ws1(m, s) for m, s in zip(mu_grid, sigma_grid)])
    w2 = np.sqrt(np.square(mu_grid) + np.square(sigma_grid - 1.0))
    e = np.array([analytic_ece(m, s, n_bins) for m, s in zip(mu_grid, sigma_grid)])
    return {"ws1": w1, "ws2": w2, "ece": e}


@dataclass
class EvalReport:
    """All metrics for one (method, data split) evaluation."""

    rmse: float
    mean_nll: float
    ece: float
    ws: float
    etl_0_99: float
    ks: float
    n_points: int
    n_floored: int = 0
    dataset: str = ""
    method: str = ""
    split: str = ""
    regime: str = ""
    side: str = ""
    fold: int = -1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    METRIC_FIELDS = ("rmse", "mean_nll", "ece", "ws", "etl_0_99", "ks")


def evaluate(mu, sigma, y, n_bins: int = 10, tail_level: float = 0.99, **ids):
    """Compute the full metric set for predictions ``(mu, sigma)`` on ``y``."""
    mu, sigma, y = _check_1d_nonempty(mu, sigma, y)
    r = residuals(mu, sigma, y)
    return EvalReport(
        rmse=rmse(mu, y),
        mean_nll=mean_nll(mu, sigma, y),
        ece=ece(r, n_bins=n_bins),
        ws=ws1(r),
        etl_0_99=etl(r, tail_level=tail_level),
        ks=ks(r),
        n_points=len(r),
        n_floored=r.n_floored,
        **ids,
    )

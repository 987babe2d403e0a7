"""Datasets, normalization and train/test split protocols.

Synthetic generators cover three regimes: a pure-noise signal whose
spread varies with x (can the model learn *only* the noise profile?), a
deterministic high-frequency curve (is epistemic spread small where the
fit is good?), and a homoscedastic noisy line at configurable noise
levels (is the recovered spread quantitatively right?).

Splits either shuffle i.i.d. (k-fold) or order the data by a score — the
first principal component or the target value — chunk it, and hold out
one chunk, which turns plain datasets into interpolation / extrapolation
shift benchmarks.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .rng import as_generator

__all__ = [
    "RegressionDataset",
    "Normalizer",
    "SplitPlan",
    "toy_noise_sigma",
    "toy_hf_curve",
    "gen_toy_noise",
    "gen_toy_hf",
    "gen_noisy_line",
    "load_csv",
    "save_csv",
    "fit_normalizer",
    "kfold",
    "pca_first_component",
    "ordered_split",
    "ordered_split_folds",
    "size_class",
    "training_defaults",
]

log = logging.getLogger(__name__)


@dataclass
class Normalizer:
    """Per-column affine map to zero mean / unit variance, fit on train only."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def transform_x(self, X):
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_std

    def transform_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def inverse_x(self, X):
        return np.asarray(X, dtype=np.float64) * self.x_std + self.x_mean

    def inverse_y(self, y):
        return np.asarray(y, dtype=np.float64) * self.y_std + self.y_mean

    def inverse_sigma(self, sigma):
        """Scales transform without the shift."""
        return np.asarray(sigma, dtype=np.float64) * self.y_std

    def to_dict(self) -> dict:
        return {
            "x_mean": [float(v) for v in np.atleast_1d(self.x_mean)],
            "x_std": [float(v) for v in np.atleast_1d(self.x_std)],
            "y_mean": float(self.y_mean),
            "y_std": float(self.y_std),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(
            x_mean=np.asarray(d["x_mean"], dtype=np.float64),
            x_std=np.asarray(d["x_std"], dtype=np.float64),
            y_mean=float(d["y_mean"]),
            y_std=float(d["y_std"]),
        )


def fit_normalizer(X, y) -> Normalizer:
    """Column means/stds of the given (training) block; zero spread maps to 1."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty (n, d) array")
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y row counts differ")
    x_std = X.std(axis=0)
    y_std = float(y.std())
    return Normalizer(
        x_mean=X.mean(axis=0),
        x_std=np.where(x_std == 0.0, 1.0, x_std),
        y_mean=float(y.mean()),
        y_std=1.0 if y_std == 0.0 else y_std,
    )


@dataclass
class RegressionDataset:
    """Feature matrix ``(n, d)``, targets ``(n,)`` and bookkeeping."""

    X: np.ndarray
    y: np.ndarray
    name: str = "dataset"
    feature_names: tuple = ()
    target_name: str = "y"
    normalizer: Normalizer | None = None
    skipped_rows: tuple = ()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")
        if not self.feature_names:
            self.feature_names = tuple(
                f"x{i + 1}" for i in range(self.X.shape[1])
            )

    @property
    def n_points(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


def toy_noise_sigma(x):
    """Ground-truth noise scale of the toy-noise data (before normalization)."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.01 * np.square(x))


def toy_hf_curve(x):
    """High-frequency benchmark curve."""
    x = np.asarray(x, dtype=np.float64)
    return (
        0.25 * np.square(x)
        - 0.01 * x**3
        + 40.0 * np.exp(-np.square(x + 1.0) / 200.0) * np.sin(3.0 * x)
    )


def _normalized(X, y, name, rng_unused=None) -> RegressionDataset:
    norm = fit_normalizer(X, y)
    return RegressionDataset(
        X=norm.transform_x(X),
        y=norm.transform_y(y),
        name=name,
        feature_names=("x",),
        normalizer=norm,
    )


def gen_toy_noise(n: int, rng=None, normalize: bool = True) -> RegressionDataset:
    """Zero signal with x-dependent noise: y ~ N(0, exp(-0.01 x^2)^2), x ~ U(-15, 15)."""
    rng = as_generator(rng)
    x = rng.uniform(-15.0, 15.0, size=int(n))
    y = rng.standard_normal(int(n)) * toy_noise_sigma(x)
    X = x[:, None]
    if not normalize:
        return RegressionDataset(X=X, y=y, name="toy-noise", feature_names=("x",))
    return _normalized(X, y, "toy-noise")


def gen_toy_hf(n: int, rng=None, normalize: bool = True) -> RegressionDataset:
    """Noise-free high-frequency curve on x ~ U(-15, 20)."""
    rng = as_generator(rng)
    x = rng.uniform(-15.0, 20.0, size=int(n))
    y = toy_hf_curve(x)
    X = x[:, None]
    if not normalize:
        return RegressionDataset(X=X, y=y, name="toy-hf", feature_names=("x",))
    return _normalized(X, y, "toy-hf")


def gen_noisy_line(n: int, sigma_true: float, rng=None) -> RegressionDataset:
    """Flat line with constant gaussian noise of scale ``sigma_true``; not normalized."""
    if sigma_true < 0.0:
        raise ValueError("sigma_true must be >= 0")
    rng = as_generator(rng)
    x = rng.uniform(-1.0, 1.0, size=int(n))
    y = rng.standard_normal(int(n)) * float(sigma_true)
    return RegressionDataset(
        X=x[:, None], y=y, name=f"noisy-line-{sigma_true:g}", feature_names=("x",)
    )


def load_csv(path, target_column: str | None = None, name: str | None = None):
    """Read a numeric regression table.

    The last column is the target unless ``target_column`` names one.
    Rows with missing/blank cells are skipped (and reported); a column
    that never parses as a number on any usable row is rejected by name.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((lineno, [c.strip() for c in row]))

    if target_column is None:
        target_column = header[-1]
    if target_column not in header:
        raise ValueError(f"{path}: no column named {target_column!r}")
    t_idx = header.index(target_column)

    parsed, skipped = [], []
    bad_counts = {h: 0 for h in header}
    n_checked = 0
    for lineno, row in _iter_full_rows(rows, header, path, skipped):
        n_checked += 1
        values = []
        ok = True
        for h, cell in zip(header, row):
            try:
                values.append(float(cell))
            except ValueError:
                bad_counts[h] += 1
                ok = False
        if ok:
            parsed.append(values)
        else:
            skipped.append(lineno)

    # a column that is non-numeric on every row is categorical, not noise
    for h, count in bad_counts.items():
        if n_checked and count == n_checked:
            raise ValueError(
                f"{path}: column {h!r} is non-numeric; encode or drop it"
            )
    if not parsed:
        raise ValueError(f"{path}: no usable rows")
    if skipped:
        skipped.sort()
        log.warning("%s: skipped %d malformed rows: %s", path, len(skipped), skipped)

    data = np.asarray(parsed, dtype=np.float64)
    mask = np.ones(len(header), dtype=bool)
    mask[t_idx] = False
    return RegressionDataset(
        X=data[:, mask],
        y=data[:, t_idx],
        name=name or str(path),
        feature_names=tuple(h for i, h in enumerate(header) if i != t_idx),
        target_name=target_column,
        skipped_rows=tuple(skipped),
    )


def _iter_full_rows(rows, header, path, skipped):
    """Yield rows with the right cell count, recording the rest as skipped."""
    for lineno, row in rows:
        if len(row) != len(header):
            log.warning("%s: line %d has %d cells, expected %d; skipped",
                        path, lineno, len(row), len(header))
            skipped.append(lineno)
            continue
        yield lineno, row


def save_csv(dataset: RegressionDataset, path) -> None:
    """Write features + target with a header row; floats round-trip exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.feature_names) + [dataset.target_name])
        for xi, yi in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


@dataclass
class SplitPlan:
    """One train/test partition of ``range(n_total)``."""

    kind: str  # "iid_kfold" | "pca" | "label"
    fold: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    n_total: int
    regime: str = ""  # "", "interpolate" or "extrapolate"

    def __post_init__(self):
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.test_indices = np.asarray(self.test_indices, dtype=np.int64)
        combined = np.concatenate([self.train_indices, self.test_indices])
        if len(self.test_indices) == 0 or len(self.train_indices) == 0:
            raise ValueError("both sides of a split must be non-empty")
        if len(np.unique(combined)) != self.n_total or combined.min() < 0 or (
            combined.max() != self.n_total - 1
        ) or len(combined) != self.n_total:
            raise ValueError("split is not a partition of the dataset")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "fold": int(self.fold),
            "regime": self.regime,
            "n_total": int(self.n_total),
            "train_indices": [int(i) for i in self.train_indices],
            "test_indices": [int(i) for i in self.test_indices],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(
            kind=d["kind"],
            fold=int(d["fold"]),
            regime=d.get("regime", ""),
            n_total=int(d["n_total"]),
            train_indices=np.asarray(d["train_indices"], dtype=np.int64),
            test_indices=np.asarray(d["test_indices"], dtype=np.int64),
        )


def kfold(n: int, n_folds: int, rng=None) -> list:
    """Shuffled k-fold plans with near-equal test folds (sizes differ by <= 1)."""
    n, n_folds = int(n), int(n_folds)
    if not 2 <= n_folds <= n:
        raise ValueError(f"need 2 <= n_folds <= n, got n_folds={n_folds}, n={n}")
    rng = as_generator(rng)
    perm = rng.permutation(n)
    chunks = np.array_split(perm, n_folds)
    plans = []
    for i, test in enumerate(chunks):
        train = np.concatenate([c for j, c in enumerate(chunks) if j != i])
        plans.append(
            SplitPlan(
                kind="iid_kfold",
                fold=i,
                train_indices=np.sort(train),
                test_indices=np.sort(test),
                n_total=n,
            )
        )
    return plans


def pca_first_component(X, tol: float = 1e-9, max_iter: int = 10000, rng=None):
    """First principal component via power iteration on the covariance.

    Deterministic for a given ``rng`` seed; the sign is fixed so the
    largest-magnitude coordinate is positive.  Returns a unit vector.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need an (n >= 2, d) array")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / X.shape[0]
    d = cov.shape[0]
    if not np.isfinite(cov).all():
        raise ValueError("non-finite values in the covariance")

    if not cov.any():
        raise ValueError("data is constant; no principal direction")

    rng = as_generator(0 if rng is None else rng)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    for _ in range(int(max_iter)):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:  # start vector in the null space: re-draw
            v = rng.standard_normal(d)
            v /= np.linalg.norm(v)
            continue
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    sign = np.sign(v[np.argmax(np.abs(v))])
    return v * (1.0 if sign == 0 else sign)


def ordered_split(scores, n_chunks: int, fold: int, regime: str, kind: str = "label"):
    """Hold out one chunk of the score-ordered data.

    The data is sorted by ``scores`` and cut into ``n_chunks`` contiguous
    chunks (remainders go to the lowest-score chunks).  ``fold`` is the
    index of the held-out chunk: interpolation folds must be inner chunks
    (1 .. n_chunks - 2), extrapolation folds the outer two (0 or
    n_chunks - 1, also addressable as "first" / "last").
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.size
    n_chunks = int(n_chunks)
    if n_chunks < 3:
        raise ValueError("need n_chunks >= 3 for inner and outer chunks")
    if n < n_chunks:
        raise ValueError(f"cannot cut {n} points into {n_chunks} chunks")
    if regime not in ("interpolate", "extrapolate"):
        raise ValueError(f"unknown regime: {regime!r}")
    if fold == "first":
        fold = 0
    elif fold == "last":
        fold = n_chunks - 1
    fold = int(fold)
    if regime == "interpolate" and not 1 <= fold <= n_chunks - 2:
        raise ValueError(
            f"interpolation fold must be in [1, {n_chunks - 2}], got {fold}"
        )
    if regime == "extrapolate" and fold not in (0, n_chunks - 1):
        raise ValueError(
            f"extrapolation fold must be 0 or {n_chunks - 1}, got {fold}"
        )

    order = np.argsort(scores, kind="stable")
    chunks = np.array_split(order, n_chunks)
    test = chunks[fold]
    train = np.concatenate([c for j, c in enumerate(chunks) if j != fold])
    return SplitPlan(
        kind=kind,
        fold=fold,
        regime=regime,
        train_indices=np.sort(train),
        test_indices=np.sort(test),
        n_total=n,
    )


def ordered_split_folds(n_chunks: int, regime: str) -> list:
    """All valid fold indices for a regime (both outer chunks for extrapolation)."""
    if regime == "interpolate":
        return list(range(1, int(n_chunks) - 1))
    if regime == "extrapolate":
        return [0, int(n_chunks) - 1]
    raise ValueError(f"unknown regime: {regime!r}")


def size_class(n: int) -> str:
    """Bucket datasets by size to pick training defaults."""
    if n <= 2000:
        return "small"
    if n <= 50000:
        return "large"
    return "very_large"


def training_defaults(n: int) -> dict:
    """Epochs / batch size / fold count by dataset size."""
    cls = size_class(n)
    if cls == "small":
        return {"epochs": 1000, "batch_size": 100, "n_folds": 10}
    if cls == "large":
        return {"epochs": 150, "batch_size": 100, "n_folds": 5}
    return {"epochs": 150, "batch_size": 500, "n_folds": 5}

"""Uncertainty-aware regressors with a scikit-learn interface.

Five method families share one training engine:

* ``WassersteinDropoutRegressor`` — at every optimization step, L dropout
  sub-networks are sampled (masks shared across the mini-batch) and their
  empirical mean/variance per target are pushed toward the observation
  via a squared 2-Wasserstein objective.  The spread of the dropout
  sample *is* the predictive scale — no parametric variance head.
* ``MCDropoutRegressor`` — squared-error training with dropout; at
  predict time the spread over stochastic forward passes (plus a small
  variance offset) is the scale.
* ``ParametricUncertaintyRegressor`` — a gaussian head trained by
  negative log-likelihood; optionally with dropout at train and predict
  time, in which case the per-pass gaussians are mixture-averaged.
* ``DeepEnsembleRegressor`` — M independently initialized networks;
  point members yield mean/spread over members, gaussian-head members a
  moment-matched mixture.

Estimators follow the usual contract: hyperparameters are stored
verbatim in ``__init__``, all work happens in ``fit``, fitted state ends
in trailing-underscore attributes, ``predict`` returns means and
``predict_dist`` the full (mean, scale) pair.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import losses, network
from .rng import as_generator, stream

__all__ = [
    "PredictiveDistribution",
    "TrainingDivergedError",
    "fit_network",
    "predict_dropout",
    "predict_parametric",
    "predict_ensemble",
    "mixture_moments",
    "ensemble_moments",
    "WassersteinDropoutRegressor",
    "MCDropoutRegressor",
    "ParametricUncertaintyRegressor",
    "DeepEnsembleRegressor",
]


class PredictiveDistribution(NamedTuple):
    """Gaussian summary of a predictive distribution, per point (and output)."""

    mu: np.ndarray
    sigma: np.ndarray


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, step: int, value: float):
        self.step = int(step)
        self.value = float(value)
        super().__init__(f"non-finite loss {value!r} at optimization step {step}")


_OBJECTIVES = {
    "wdropout": losses.wdropout_objective,
    "mse": losses.mse_objective,
    "nll": losses.gaussian_nll_objective,
}

# stream purposes within one (seed, member) scope
_INIT, _MASKS, _SHUFFLE, _PREDICT = 0, 1, 2, 3


def fit_network(
    X,
    Y,
    loss: str,
    hidden,
    drop_rate: float,
    n_passes: int,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
    key: tuple = (),
) -> network.Mlp:
    """Train one network with Adam; returns the fitted model.

    With ``n_passes > 1`` each optimization step draws ``n_passes`` masks
    shared across the mini-batch and stacks the sub-network outputs (the
    Wasserstein objective consumes the stack).  With a single pass and a
    positive drop rate, standard dropout applies instead: one independent
    mask per training point.  Raises :class:`TrainingDivergedError` if
    the loss leaves the reals.
    """
    if loss not in _OBJECTIVES:
        raise ValueError(f"unknown loss: {loss!r}")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    m = Y.shape[1]

    head = network.HEAD_GAUSSIAN if loss == "nll" else network.HEAD_POINT
    model = network.init_mlp(
        [d, *hidden, m], head=head, drop_rate=drop_rate,
        rng=stream(seed, *key, _INIT),
    )
    mask_rng = stream(seed, *key, _MASKS)
    shuffle_rng = stream(seed, *key, _SHUFFLE)
    state = network.AdamState.for_model(model, lr=learning_rate)
    objective = _OBJECTIVES[loss]

    bs = min(int(batch_size), n)
    n_passes = int(n_passes)
    step = 0
    for _ in range(int(epochs)):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            mask = None
            if n_passes > 1:
                mask = network.sample_masks(model, mask_rng, n_passes)
            elif drop_rate > 0.0:
                mask = network.sample_masks(model, mask_rng, len(idx),
                                            per_sample=True)
            preds, cache = network.forward_pass(model, X[idx], mask, keep_cache=True)
            value, dpreds = objective(preds, Y[idx])
            if not np.isfinite(value):
                raise TrainingDivergedError(step, value)
            grads = network.backward_pass(model, cache, dpreds)
            network.adam_step(state, model, grads)
            step += 1
    return model


def mixture_moments(mus, sigmas) -> PredictiveDistribution:
    """Moment-matched gaussian of an equal-weight gaussian mixture.

    ``mus`` / ``sigmas``: component parameters stacked on axis 0.
    """
    mus = np.asarray(mus, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    mu = mus.mean(axis=0)
    var = (np.square(sigmas) + np.square(mus)).mean(axis=0) - np.square(mu)
    return PredictiveDistribution(mu=mu, sigma=np.sqrt(np.maximum(var, 0.0)))


def ensemble_moments(means) -> PredictiveDistribution:
    """Mean and population spread over point predictions stacked on axis 0."""
    mu, var = losses.sample_stats(np.asarray(means, dtype=np.float64), axis=0)
    return PredictiveDistribution(mu=mu, sigma=np.sqrt(var))


def predict_dropout(
    model: network.Mlp,
    X,
    n_samples: int = 50,
    variance_offset: float = 0.0,
    rng=None,
    block_rows: int = 2048,
) -> PredictiveDistribution:
    """Predictive mean/scale from ``n_samples`` stochastic forward passes.

    Point heads: sample mean and population variance plus
    ``variance_offset``.  Gaussian heads: moment-matched mixture of the
    per-pass gaussians (plus the same offset).  With ``drop_rate = 0``
    the passes coincide and the scale is exactly ``sqrt(variance_offset)``.
    One mask set is drawn up front and reused for every block of rows, so
    the answer does not depend on ``block_rows``.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2 to carry a spread")
    if variance_offset < 0.0:
        raise ValueError("variance_offset must be >= 0")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("need at least one prediction point")
    masks = network.sample_masks(model, as_generator(rng), int(n_samples))
    mus, vars_ = [], []
    for start in range(0, X.shape[0], int(block_rows)):
        preds, _ = network.forward_pass(model, X[start : start + int(block_rows)], masks)
        if model.head == network.HEAD_GAUSSIAN:
            mu_s, raw = network.split_gaussian_head(preds)
            base = mixture_moments(mu_s, losses.sigma_from_raw(raw))
            mu, var = base.mu, np.square(base.sigma)
        else:
            mu, var = losses.sample_stats(preds, axis=0)
        mus.append(mu)
        vars_.append(var)
    mu = np.concatenate(mus, axis=0)
    var = np.concatenate(vars_, axis=0)
    return PredictiveDistribution(mu=mu, sigma=np.sqrt(var + variance_offset))


def predict_parametric(model: network.Mlp, X) -> PredictiveDistribution:
    """Deterministic gaussian-head prediction (no dropout at inference)."""
    if model.head != network.HEAD_GAUSSIAN:
        raise ValueError("parametric prediction needs a gaussian head")
    preds, _ = network.forward_pass(model, np.asarray(X, dtype=np.float64))
    mu, raw = network.split_gaussian_head(preds[0])
    return PredictiveDistribution(mu=mu, sigma=losses.sigma_from_raw(raw))


def predict_ensemble(members, X) -> PredictiveDistribution:
    """Combine member predictions: spread of means (point heads) or mixture."""
    if not members:
        raise ValueError("need at least one ensemble member")
    heads = {m.head for m in members}
    if len(heads) != 1:
        raise ValueError("mixed ensemble heads are not supported")
    if heads.pop() == network.HEAD_GAUSSIAN:
        parts = [predict_parametric(m, X) for m in members]
        return mixture_moments(
            np.stack([p.mu for p in parts]), np.stack([p.sigma for p in parts])
        )
    preds = np.stack([network.forward_pass(m, X)[0][0] for m in members])
    return ensemble_moments(preds)


def _resolve_seed(random_state) -> int:
    if random_state is None:
        return int(np.random.SeedSequence().generate_state(1)[0])
    return int(random_state)


class _NetworkRegressorBase(BaseEstimator, RegressorMixin):
    """Shared fit/predict plumbing; subclasses define loss and prediction."""

    def _loss_kind(self) -> str:
        raise NotImplementedError

    def _n_passes(self) -> int:
        return 1

    def _check_params(self):
        hidden = tuple(int(h) for h in self.hidden_layer_sizes)
        if not hidden or any(h < 1 for h in hidden):
            raise ValueError("hidden_layer_sizes must be positive and non-empty")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError("drop_rate must be in [0, 1)")
        for attr in ("epochs", "batch_size"):
            if int(getattr(self, attr)) < 1:
                raise ValueError(f"{attr} must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        return hidden

    def _prepare_fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        self._y_was_1d = y.ndim == 1
        self.n_outputs_ = 1 if self._y_was_1d else y.shape[1]
        self.seed_ = _resolve_seed(self.random_state)
        return X, y.reshape(len(y), -1)

    def _fit_one(self, X, Y, hidden, member: int = 0) -> network.Mlp:
        return fit_network(
            X,
            Y,
            loss=self._loss_kind(),
            hidden=hidden,
            drop_rate=self.drop_rate,
            n_passes=self._n_passes(),
            epochs=int(self.epochs),
            batch_size=int(self.batch_size),
            learning_rate=float(self.learning_rate),
            seed=self.seed_,
            key=(member,),
        )

    def _check_predict_input(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return X

    def _shape_out(self, arr):
        return arr[:, 0] if self._y_was_1d else arr

    def _predict_rng(self, random_state, member: int = 0):
        if random_state is None:
            return stream(self.seed_, member, _PREDICT)
        return as_generator(random_state)

    def fit(self, X, y):
        hidden = self._check_params()
        X, Y = self._prepare_fit(X, y)
        self.model_ = self._fit_one(X, Y, hidden)
        return self

    def predict(self, X):
        return self.predict_dist(X).mu


class WassersteinDropoutRegressor(_NetworkRegressorBase):
    """Dropout network trained to match sub-network spread to the residuals.

    Parameters mirror the training recipe: ``n_subnets`` dropout
    sub-networks per step during fitting, ``n_predict_samples`` stochastic
    passes at inference.  The predictive scale is the spread of those
    passes — learned, not parametric.
    """

    def __init__(
        self,
        hidden_layer_sizes=(50, 50),
        drop_rate=0.1,
        n_subnets=5,
        n_predict_samples=50,
        epochs=150,
        batch_size=100,
        learning_rate=1e-3,
        random_state=None,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.drop_rate = drop_rate
        self.n_subnets = n_subnets
        self.n_predict_samples = n_predict_samples
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _loss_kind(self):
        return "wdropout"

    def _n_passes(self):
        return int(self.n_subnets)

    def _check_params(self):
        if int(self.n_subnets) < 2:
            raise ValueError("n_subnets must be >= 2 to carry a spread")
        if int(self.n_predict_samples) < 2:
            raise ValueError("n_predict_samples must be >= 2")
        return super()._check_params()

    def predict_dist(self, X, random_state=None) -> PredictiveDistribution:
        X = self._check_predict_input(X)
        dist = predict_dropout(
            self.model_,
            X,
            n_samples=int(self.n_predict_samples),
            rng=self._predict_rng(random_state),
        )
        return PredictiveDistribution(
            self._shape_out(dist.mu), self._shape_out(dist.sigma)
        )


class MCDropoutRegressor(_NetworkRegressorBase):
    """Squared-error dropout network, spread from stochastic forward passes.

    ``variance_offset`` is added to the sampled variance (it keeps scales
    positive where dropout noise vanishes and is the usual tuning knob of
    this baseline).
    """

    def __init__(
        self,
        hidden_layer_sizes=(50, 50),
        drop_rate=0.1,
        n_predict_samples=50,
        variance_offset=1e-6,
        epochs=150,
        batch_size=100,
        learning_rate=1e-3,
        random_state=None,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.drop_rate = drop_rate
        self.n_predict_samples = n_predict_samples
        self.variance_offset = variance_offset
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _loss_kind(self):
        return "mse"

    def _check_params(self):
        if int(self.n_predict_samples) < 2:
            raise ValueError("n_predict_samples must be >= 2")
        if self.variance_offset < 0.0:
            raise ValueError("variance_offset must be >= 0")
        return super()._check_params()

    def predict_dist(self, X, random_state=None) -> PredictiveDistribution:
        X = self._check_predict_input(X)
        dist = predict_dropout(
            self.model_,
            X,
            n_samples=int(self.n_predict_samples),
            variance_offset=float(self.variance_offset),
            rng=self._predict_rng(random_state),
        )
        return PredictiveDistribution(
            self._shape_out(dist.mu), self._shape_out(dist.sigma)
        )


class ParametricUncertaintyRegressor(_NetworkRegressorBase):
    """Gaussian output head trained by negative log-likelihood.

    With ``drop_rate = 0`` prediction is a single deterministic pass.
    With dropout enabled and ``n_predict_samples > 1`` the per-pass
    gaussians are mixture-averaged, adding sampled model spread on top of
    the parametric one.
    """

    def __init__(
        self,
        hidden_layer_sizes=(50, 50),
        drop_rate=0.0,
        n_predict_samples=1,
        epochs=150,
        batch_size=100,
        learning_rate=1e-3,
        random_state=None,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.drop_rate = drop_rate
        self.n_predict_samples = n_predict_samples
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _loss_kind(self):
        return "nll"

    def _check_params(self):
        if int(self.n_predict_samples) < 1:
            raise ValueError("n_predict_samples must be >= 1")
        if int(self.n_predict_samples) > 1 and self.drop_rate == 0.0:
            raise ValueError("sampled prediction needs drop_rate > 0")
        return super()._check_params()

    def predict_dist(self, X, random_state=None) -> PredictiveDistribution:
        X = self._check_predict_input(X)
        if int(self.n_predict_samples) > 1:
            dist = predict_dropout(
                self.model_,
                X,
                n_samples=int(self.n_predict_samples),
                rng=self._predict_rng(random_state),
            )
        else:
            dist = predict_parametric(self.model_, X)
        return PredictiveDistribution(
            self._shape_out(dist.mu), self._shape_out(dist.sigma)
        )


class DeepEnsembleRegressor(_NetworkRegressorBase):
    """Ensemble of independently initialized networks.

    ``parametric=False``: point members trained on squared error; the
    predictive scale is the spread of member means.  ``parametric=True``:
    gaussian-head members trained by likelihood; predictions are the
    moment-matched mixture (spread of means plus mean member variance).
    """

    drop_rate = 0.0  # ensembles train without dropout

    def __init__(
        self,
        hidden_layer_sizes=(50, 50),
        n_members=5,
        parametric=False,
        epochs=150,
        batch_size=100,
        learning_rate=1e-3,
        random_state=None,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.n_members = n_members
        self.parametric = parametric
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _loss_kind(self):
        return "nll" if self.parametric else "mse"

    def _check_params(self):
        if int(self.n_members) < 2:
            raise ValueError("n_members must be >= 2")
        return super()._check_params()

    def fit(self, X, y):
        hidden = self._check_params()
        X, Y = self._prepare_fit(X, y)
        self.members_ = [
            self._fit_one(X, Y, hidden, member=j) for j in range(int(self.n_members))
        ]
        return self

    def predict_dist(self, X, random_state=None) -> PredictiveDistribution:
        X = self._check_predict_input(X)
        dist = predict_ensemble(self.members_, X)
        return PredictiveDistribution(
            self._shape_out(dist.mu), self._shape_out(dist.sigma)
        )

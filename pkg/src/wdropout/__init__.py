"""Wasserstein dropout: non-parametric uncertainty for regression networks.

The package provides scikit-learn style regressors that output a full
predictive distribution (mean and scale per point), the calibration
metrics to judge them, synthetic benchmark data, distribution-shift
split protocols and an experiment harness with a CLI.
"""

from .estimators import (
    DeepEnsembleRegressor,
    MCDropoutRegressor,
    ParametricUncertaintyRegressor,
    PredictiveDistribution,
    TrainingDivergedError,
    WassersteinDropoutRegressor,
)
from .metrics import EvalReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "WassersteinDropoutRegressor",
    "MCDropoutRegressor",
    "ParametricUncertaintyRegressor",
    "DeepEnsembleRegressor",
    "PredictiveDistribution",
    "TrainingDivergedError",
    "EvalReport",
    "evaluate",
    "__version__",
]

"""Benchmark orchestration: configs, runs, aggregation, report files.

A YAML config names a dataset, a split protocol and a list of methods;
``run_experiment`` trains every method on every fold and scores both
sides of each split.  Aggregation is two-stage: fold scores are averaged
within a dataset first, then summary statistics (mean / median /
quartiles) are taken across per-dataset values, optionally merging the
two out-of-data split families (PCA- and label-ordered) before that.

All emitted artifacts (reports.json, summary.csv, sweep/curve tables)
are byte-deterministic for a given config and seed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from . import datasets as ds_mod
from . import estimators as est_mod
from . import metrics as met_mod
from .rng import stream

__all__ = [
    "MethodConfig",
    "ExperimentConfig",
    "SummaryRow",
    "AggregateSummary",
    "load_config",
    "config_from_dict",
    "build_dataset",
    "build_plans",
    "make_estimator",
    "plan_jobs",
    "run_experiment",
    "aggregate",
    "emit_report",
    "run_sweep",
    "write_predictions",
    "read_predictions",
    "SUMMARY_HEADER",
]

log = logging.getLogger(__name__)

SUMMARY_HEADER = ("method", "split", "metric", "mean", "median", "q25", "q75")

METHOD_NAMES = ("wdropout", "mc", "pu", "pu-mc", "de", "pu-de")
_METHOD_ALIASES = {
    "w-dropout": "wdropout",
    "wasserstein": "wdropout",
    "mc-dropout": "mc",
    "pude": "pu-de",
    "pumc": "pu-mc",
}

DATASET_KINDS = ("toy-noise", "toy-hf", "noisy-line", "csv")
SPLIT_KINDS = ("iid", "pca", "label")


@dataclass
class MethodConfig:
    """One method entry; unset training knobs fall back to experiment defaults."""

    name: str
    drop_rate: float = 0.1
    n_subnets: int = 5
    n_predict_samples: int | None = None  # falls back to experiment, then 50
    variance_offset: float = 1e-6
    n_members: int = 5
    epochs: int | None = None
    batch_size: int | None = None
    learning_rate: float = 1e-3
    seed: int | None = None  # overrides the experiment master seed
    label: str = ""  # row label in reports; defaults to name

    def __post_init__(self):
        self.name = _METHOD_ALIASES.get(self.name, self.name)
        if self.name not in METHOD_NAMES:
            raise ValueError(
                f"unknown method {self.name!r}; expected one of {METHOD_NAMES}"
            )
        if not self.label:
            self.label = self.name


@dataclass
class DatasetConfig:
    kind: str = "toy-noise"
    n: int = 10000
    sigma_true: float = 1.0
    path: str = ""
    target: str = ""
    hidden: tuple = ()

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(
                f"unknown dataset kind {self.kind!r}; expected one of {DATASET_KINDS}"
            )
        if self.kind == "csv" and not self.path:
            raise ValueError("dataset kind 'csv' needs a 'path'")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class SplitConfig:
    kinds: tuple = ("iid",)
    n_folds: int | None = None
    n_chunks: int = 10
    regimes: tuple = ("interpolate", "extrapolate")
    max_folds: int | None = None

    def __post_init__(self):
        if isinstance(self.kinds, str):
            self.kinds = (self.kinds,)
        self.kinds = tuple(self.kinds)
        for k in self.kinds:
            if k not in SPLIT_KINDS:
                raise ValueError(
                    f"unknown split kind {k!r}; expected one of {SPLIT_KINDS}"
                )
        if isinstance(self.regimes, str):
            self.regimes = (self.regimes,)
        self.regimes = tuple(self.regimes)
        for r in self.regimes:
            if r not in ("interpolate", "extrapolate"):
                raise ValueError(f"unknown regime {r!r}")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    out_dir: str = ""
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    methods: list = field(default_factory=lambda: [MethodConfig("wdropout")])
    epochs: int | None = None
    batch_size: int | None = None
    n_predict_samples: int | None = None
    sweep_drop_rates: tuple = ()
    sweep_n_subnets: tuple = ()

    def __post_init__(self):
        if not self.out_dir:
            self.out_dir = os.path.join("results", self.name)
        if not self.methods:
            raise ValueError("config needs at least one method")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate method labels: {labels}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a validated config from parsed YAML, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ValueError("config root must be a mapping")
    raw = dict(raw)

    def sub(cls, value, where):
        if not isinstance(value, dict):
            raise ValueError(f"{where} must be a mapping")
        allowed = set(cls.__dataclass_fields__)
        unknown = set(value) - allowed
        if unknown:
            raise ValueError(f"unknown {where} keys: {sorted(unknown)}")
        return cls(**value)

    kwargs = {}
    if "dataset" in raw:
        kwargs["dataset"] = sub(DatasetConfig, raw.pop("dataset"), "dataset")
    if "split" in raw:
        kwargs["split"] = sub(SplitConfig, raw.pop("split"), "split")
    if "methods" in raw:
        methods = raw.pop("methods")
        if not isinstance(methods, list):
            raise ValueError("methods must be a list")
        parsed = []
        for entry in methods:
            if isinstance(entry, str):
                entry = {"name": entry}
            parsed.append(sub(MethodConfig, entry, "method"))
        kwargs["methods"] = parsed
    sweep = raw.pop("sweep", None)
    if sweep is not None:
        if not isinstance(sweep, dict):
            raise ValueError("sweep must be a mapping")
        unknown = set(sweep) - {"drop_rate", "n_subnets"}
        if unknown:
            raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
        kwargs["sweep_drop_rates"] = tuple(sweep.get("drop_rate", ()))
        kwargs["sweep_n_subnets"] = tuple(sweep.get("n_subnets", ()))

    allowed = {"name", "seed", "out_dir", "epochs", "batch_size", "n_predict_samples"}
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(raw)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ValueError(f"{path}: invalid YAML: {exc}") from exc
    try:
        return config_from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from exc


# stream purposes under the experiment master seed
_KEY_DATA, _KEY_SPLIT, _KEY_JOB = 0, 1, 2


def build_dataset(cfg: ExperimentConfig) -> ds_mod.RegressionDataset:
    d = cfg.dataset
    rng = stream(cfg.seed, _KEY_DATA)
    if d.kind == "toy-noise":
        return ds_mod.gen_toy_noise(d.n, rng=rng)
    if d.kind == "toy-hf":
        return ds_mod.gen_toy_hf(d.n, rng=rng)
    if d.kind == "noisy-line":
        return ds_mod.gen_noisy_line(d.n, d.sigma_true, rng=rng)
    return ds_mod.load_csv(d.path, target_column=d.target or None)


def build_plans(cfg: ExperimentConfig, dataset: ds_mod.RegressionDataset) -> list:
    """All split plans requested by the config, in a fixed order."""
    n = dataset.n_points
    plans = []
    for kind in cfg.split.kinds:
        if kind == "iid":
            n_folds = cfg.split.n_folds or ds_mod.training_defaults(n)["n_folds"]
            folds = ds_mod.kfold(n, n_folds, rng=stream(cfg.seed, _KEY_SPLIT))
            if cfg.split.max_folds:
                folds = folds[: cfg.split.max_folds]
            plans.extend(folds)
            continue
        if kind == "pca":
            # order by the first principal direction of the standardized
            # features, so no raw-scale column dominates the chunking
            norm = ds_mod.fit_normalizer(dataset.X, dataset.y)
            Xs = norm.transform_x(dataset.X)
            component = ds_mod.pca_first_component(
                Xs, rng=stream(cfg.seed, _KEY_SPLIT, 1)
            )
            scores = Xs @ component
        else:  # label
            scores = dataset.y
        for regime in cfg.split.regimes:
            folds = ds_mod.ordered_split_folds(cfg.split.n_chunks, regime)
            if cfg.split.max_folds:
                folds = folds[: cfg.split.max_folds]
            for fold in folds:
                plans.append(
                    ds_mod.ordered_split(
                        scores, cfg.split.n_chunks, fold, regime, kind=kind
                    )
                )
    return plans


def _default_hidden(cfg: ExperimentConfig) -> tuple:
    if cfg.dataset.hidden:
        return cfg.dataset.hidden
    if cfg.dataset.kind == "csv":
        return (100, 100)
    return (50, 50)


def _training_kwargs(cfg: ExperimentConfig, mcfg: MethodConfig, n: int) -> dict:
    defaults = ds_mod.training_defaults(n)
    epochs = mcfg.epochs or cfg.epochs or defaults["epochs"]
    batch = mcfg.batch_size or cfg.batch_size or defaults["batch_size"]
    t = mcfg.n_predict_samples or cfg.n_predict_samples or 50
    return {
        "hidden_layer_sizes": _default_hidden(cfg),
        "epochs": int(epochs),
        "batch_size": int(batch),
        "learning_rate": float(mcfg.learning_rate),
        "n_predict_samples": int(t),
    }


def make_estimator(cfg: ExperimentConfig, mcfg: MethodConfig, n: int, seed: int):
    kw = _training_kwargs(cfg, mcfg, n)
    t = kw.pop("n_predict_samples")
    if mcfg.name == "wdropout":
        return est_mod.WassersteinDropoutRegressor(
            drop_rate=mcfg.drop_rate,
            n_subnets=mcfg.n_subnets,
            n_predict_samples=t,
            random_state=seed,
            **kw,
        )
    if mcfg.name == "mc":
        return est_mod.MCDropoutRegressor(
            drop_rate=mcfg.drop_rate,
            n_predict_samples=t,
            variance_offset=mcfg.variance_offset,
            random_state=seed,
            **kw,
        )
    if mcfg.name == "pu":
        return est_mod.ParametricUncertaintyRegressor(
            drop_rate=0.0, n_predict_samples=1, random_state=seed, **kw
        )
    if mcfg.name == "pu-mc":
        return est_mod.ParametricUncertaintyRegressor(
            drop_rate=mcfg.drop_rate,
            n_predict_samples=t,
            random_state=seed,
            **kw,
        )
    if mcfg.name == "de":
        return est_mod.DeepEnsembleRegressor(
            n_members=mcfg.n_members, parametric=False, random_state=seed, **kw
        )
    if mcfg.name == "pu-de":
        return est_mod.DeepEnsembleRegressor(
            n_members=mcfg.n_members, parametric=True, random_state=seed, **kw
        )
    raise ValueError(f"unknown method {mcfg.name!r}")


def _job_seed(cfg: ExperimentConfig, method_idx: int, plan_idx: int) -> int:
    base = cfg.methods[method_idx].seed
    if base is None:
        base = cfg.seed
    seq = np.random.SeedSequence(base, spawn_key=(_KEY_JOB, method_idx, plan_idx))
    return int(seq.generate_state(1)[0])


def plan_jobs(cfg: ExperimentConfig):
    """The (method x split) matrix, for dry runs and scheduling."""
    dataset = build_dataset(cfg)
    plans = build_plans(cfg, dataset)
    jobs = []
    for mi, mcfg in enumerate(cfg.methods):
        for pi, plan in enumerate(plans):
            jobs.append(
                {
                    "dataset": dataset.name,
                    "method": mcfg.label,
                    "split": plan.kind,
                    "regime": plan.regime,
                    "fold": plan.fold,
                    "n_train": int(len(plan.train_indices)),
                    "n_test": int(len(plan.test_indices)),
                    "seed": _job_seed(cfg, mi, pi),
                }
            )
    return jobs, dataset, plans


def run_experiment(cfg: ExperimentConfig, keep_predictions: bool = False):
    """Train and score every (method, split) job.

    Returns ``(reports, plans)``; ``reports`` carry identification fields
    so downstream grouping never guesses.  CSV datasets are re-normalized
    per fold on the training side only; generated datasets are already on
    a fixed scale.
    """
    dataset = build_dataset(cfg)
    plans = build_plans(cfg, dataset)
    renormalize = cfg.dataset.kind == "csv"
    reports = []
    predictions = []
    for mi, mcfg in enumerate(cfg.methods):
        for pi, plan in enumerate(plans):
            seed = _job_seed(cfg, mi, pi)
            Xtr, ytr = dataset.X[plan.train_indices], dataset.y[plan.train_indices]
            Xte, yte = dataset.X[plan.test_indices], dataset.y[plan.test_indices]
            if renormalize:
                norm = ds_mod.fit_normalizer(Xtr, ytr)
                Xtr, ytr = norm.transform_x(Xtr), norm.transform_y(ytr)
                Xte, yte = norm.transform_x(Xte), norm.transform_y(yte)
            est = make_estimator(cfg, mcfg, len(ytr), seed)
            log.info(
                "fit %s on %s %s/%s fold %d (%d train)",
                mcfg.label, dataset.name, plan.kind, plan.regime or "-",
                plan.fold, len(ytr),
            )
            est.fit(Xtr, ytr)
            for side, Xs, ys in (("test", Xte, yte), ("train", Xtr, ytr)):
                dist = est.predict_dist(Xs)
                reports.append(
                    met_mod.evaluate(
                        dist.mu,
                        dist.sigma,
                        ys,
                        dataset=dataset.name,
                        method=mcfg.label,
                        split=plan.kind,
                        regime=plan.regime,
                        side=side,
                        fold=plan.fold,
                    )
                )
                if keep_predictions:
                    predictions.append(
                        {
                            "method": mcfg.label,
                            "split": plan.kind,
                            "regime": plan.regime,
                            "fold": plan.fold,
                            "side": side,
                            "mu": dist.mu,
                            "sigma": dist.sigma,
                            "y": ys,
                        }
                    )
    if keep_predictions:
        return reports, plans, predictions
    return reports, plans


@dataclass
class SummaryRow:
    method: str
    split: str
    metric: str
    mean: float
    median: float
    q25: float
    q75: float


@dataclass
class AggregateSummary:
    rows: list

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for r in self.rows:
            writer.writerow(
                [r.method, r.split, r.metric]
                + [repr(float(v)) for v in (r.mean, r.median, r.q25, r.q75)]
            )
        return buf.getvalue()


def _split_label(kind: str, regime: str, side: str) -> str:
    parts = [kind]
    if regime:
        parts.append(regime)
    parts.append(side)
    return "-".join(parts)


def aggregate(reports, ood_mode: bool = False) -> AggregateSummary:
    """Two-stage aggregation of evaluation reports.

    Stage one averages folds within each (dataset, method, split kind,
    regime, side) cell.  With ``ood_mode`` the PCA- and label-ordered
    cells are then averaged into a single out-of-data cell per regime.
    Stage two takes mean / median / quartiles across datasets (linear
    interpolation, the numpy default).
    """
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report to aggregate")
    stage1 = {}
    for r in reports:
        cell = (r.dataset, r.method, r.split, r.regime, r.side)
        stage1.setdefault(cell, []).append(r)

    per_dataset = {}
    for (dataset, method, kind, regime, side), cell_reports in stage1.items():
        for metric in met_mod.EvalReport.METRIC_FIELDS:
            per_dataset[(dataset, method, kind, regime, side, metric)] = float(
                np.mean([getattr(r, metric) for r in cell_reports])
            )

    if ood_mode:
        merged = {}
        for (dataset, method, kind, regime, side, metric), v in per_dataset.items():
            if kind in ("pca", "label"):
                key = (dataset, method, "ood", regime, side, metric)
                merged.setdefault(key, []).append(v)
            else:
                merged.setdefault(
                    (dataset, method, kind, regime, side, metric), []
                ).append(v)
        per_dataset = {k: float(np.mean(v)) for k, v in merged.items()}

    across = {}
    for (dataset, method, kind, regime, side, metric), v in per_dataset.items():
        across.setdefault(
            (method, _split_label(kind, regime, side), metric), []
        ).append(v)

    rows = []
    metric_order = {m: i for i, m in enumerate(met_mod.EvalReport.METRIC_FIELDS)}
    for (method, split, metric) in sorted(
        across, key=lambda k: (k[0], k[1], metric_order[k[2]])
    ):
        values = np.asarray(across[(method, split, metric)], dtype=np.float64)
        rows.append(
            SummaryRow(
                method=method,
                split=split,
                metric=metric,
                mean=float(values.mean()),
                median=float(np.quantile(values, 0.5)),
                q25=float(np.quantile(values, 0.25)),
                q75=float(np.quantile(values, 0.75)),
            )
        )
    return AggregateSummary(rows=rows)


def emit_report(reports, summary: AggregateSummary, out_dir, plans=None) -> dict:
    """Write reports.json / summary.csv (and split plans) under ``out_dir``."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to emit: empty report list")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    paths["reports"] = os.path.join(out_dir, "reports.json")
    payload = {"reports": [r.to_dict() for r in reports]}
    with open(paths["reports"], "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    paths["summary"] = os.path.join(out_dir, "summary.csv")
    with open(paths["summary"], "w", newline="") as fh:
        fh.write(summary.to_csv_text())

    if plans is not None:
        paths["splits"] = os.path.join(out_dir, "splits.json")
        with open(paths["splits"], "w") as fh:
            json.dump({"splits": [p.to_dict() for p in plans]}, fh, sort_keys=True)
            fh.write("\n")
    return paths


def run_sweep(cfg: ExperimentConfig, parameter: str, values) -> list:
    """Re-run the experiment for each hyperparameter value.

    Returns plot-ready rows: one per (x, method, split, metric) with
    mean / quartile columns.
    """
    if parameter not in ("drop_rate", "n_subnets"):
        raise ValueError(f"cannot sweep {parameter!r}")
    rows = []
    for x in values:
        methods = []
        for m in cfg.methods:
            m2 = MethodConfig(**{**asdict(m), parameter: x})
            methods.append(m2)
        sub = ExperimentConfig(
            **{
                **asdict(cfg),
                "methods": methods,
                "dataset": cfg.dataset,
                "split": cfg.split,
            }
        )
        reports, _ = run_experiment(sub)
        for row in aggregate(reports).rows:
            rows.append({"x": x, **asdict(row)})
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "method", "split", "metric",
                        "mean", "median", "q25", "q75"])
        for r in rows:
            writer.writerow(
                [repr(float(r["x"])), r["method"], r["split"], r["metric"]]
                + [repr(float(r[k])) for k in ("mean", "median", "q25", "q75")]
            )


def write_predictions(path, mu, sigma, y) -> None:
    """Three-column CSV (mu, sigma, y) that round-trips floats exactly."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["mu", "sigma", "y"])
        for row in zip(mu, sigma, y):
            writer.writerow([repr(float(v)) for v in row])


def read_predictions(path):
    """Read a predictions CSV back into (mu, sigma, y) arrays."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"mu", "sigma", "y"} <= set(
            reader.fieldnames
        ):
            raise ValueError(f"{path}: need columns mu, sigma, y")
        mu, sigma, y = [], [], []
        for row in reader:
            mu.append(float(row["mu"]))
            sigma.append(float(row["sigma"]))
            y.append(float(row["y"]))
    if not mu:
        raise ValueError(f"{path}: no prediction rows")
    return np.asarray(mu), np.asarray(sigma), np.asarray(y)

"""Command-line interface.

Subcommands: ``gen-data`` (write a synthetic dataset), ``train`` (fit the
configured methods on the full dataset, save models and predictions),
``eval`` (metrics for a predictions CSV), ``bench`` (full cross-validated
benchmark), ``sweep`` (re-run the benchmark over a hyperparameter grid)
and ``curves`` (analytic miscalibration reference curves).

Exit codes: 0 on success, 1 on runtime failures (diverged training, bad
data), 2 on usage errors (bad flags, missing or invalid config).  The
``WDROPOUT_SEED`` environment variable supplies a default seed; an
explicit ``--seed`` always wins, then the environment, then the config.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import datasets as ds_mod
from . import estimators as est_mod
from . import experiment as exp_mod
from . import metrics as met_mod
from . import network as net_mod
from .rng import stream

__all__ = ["main", "build_parser"]

log = logging.getLogger(__name__)

SEED_ENV_VAR = "WDROPOUT_SEED"


class UsageError(Exception):
    """Bad invocation or unreadable/invalid configuration (exit code 2)."""


def _resolve_seed(flag_seed, cfg_seed=None) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None and env != "":
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV_VAR} must be an integer, got {env!r}")
    if cfg_seed is not None:
        return int(cfg_seed)
    return 0


def _load_config(path) -> exp_mod.ExperimentConfig:
    try:
        return exp_mod.load_config(path)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except ValueError as exc:
        raise UsageError(str(exc))


def _configured(args) -> exp_mod.ExperimentConfig:
    cfg = _load_config(args.config)
    cfg.seed = _resolve_seed(args.seed, cfg.seed)
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    return cfg


def cmd_gen_data(args) -> int:
    seed = _resolve_seed(args.seed)
    rng = stream(seed, 0)
    kind = args.kind
    if kind == "toy-noise":
        ds = ds_mod.gen_toy_noise(args.n, rng=rng, normalize=not args.raw)
    elif kind == "toy-hf":
        ds = ds_mod.gen_toy_hf(args.n, rng=rng, normalize=not args.raw)
    else:
        ds = ds_mod.gen_noisy_line(args.n, args.sigma_true, rng=rng)
    out = args.out
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    ds_mod.save_csv(ds, out)
    print(f"wrote {out} ({ds.n_points} rows)")
    if ds.normalizer is not None:
        sidecar = os.path.splitext(out)[0] + ".norm.json"
        payload = {"kind": kind, "n": int(args.n), "seed": seed,
                   "normalizer": ds.normalizer.to_dict()}
        with open(sidecar, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {sidecar}")
    return 0


def cmd_train(args) -> int:
    cfg = _configured(args)
    dataset = exp_mod.build_dataset(cfg)
    X, y = dataset.X, dataset.y
    if cfg.dataset.kind == "csv":
        norm = ds_mod.fit_normalizer(X, y)
        X, y = norm.transform_x(X), norm.transform_y(y)
    os.makedirs(cfg.out_dir, exist_ok=True)

    for mi, mcfg in enumerate(cfg.methods):
        seed = exp_mod._job_seed(cfg, mi, 0)
        est = exp_mod.make_estimator(cfg, mcfg, len(y), seed)
        log.info("fit %s on %s (%d points)", mcfg.label, dataset.name, len(y))
        est.fit(X, y)
        models = getattr(est, "members_", None) or [est.model_]
        for j, model in enumerate(models):
            suffix = f"_member{j}" if len(models) > 1 else ""
            path = os.path.join(cfg.out_dir, f"model_{mcfg.label}{suffix}.npz")
            net_mod.save_model(model, path)
            print(f"wrote {path}")
        dist = est.predict_dist(X)
        pred_path = os.path.join(cfg.out_dir, f"predictions_{mcfg.label}.csv")
        exp_mod.write_predictions(pred_path, dist.mu, dist.sigma, y)
        print(f"wrote {pred_path}")
    return 0


def cmd_eval(args) -> int:
    try:
        mu, sigma, y = exp_mod.read_predictions(args.predictions)
    except FileNotFoundError:
        raise UsageError(f"predictions file not found: {args.predictions}")
    report = met_mod.evaluate(mu, sigma, y, n_bins=args.n_bins)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    cfg = _configured(args)
    if args.dry_run:
        jobs, dataset, plans = exp_mod.plan_jobs(cfg)
        print(f"dataset {dataset.name}: {dataset.n_points} points, "
              f"{dataset.n_features} features")
        for job in jobs:
            regime = job["regime"] or "-"
            print(f"  {job['method']:10s} {job['split']:10s} {regime:12s} "
                  f"fold {job['fold']:2d}  train {job['n_train']}  "
                  f"test {job['n_test']}")
        print(f"{len(jobs)} jobs")
        return 0
    reports, plans = exp_mod.run_experiment(cfg)
    summary = exp_mod.aggregate(reports, ood_mode=args.merge_ood)
    paths = exp_mod.emit_report(reports, summary, cfg.out_dir, plans=plans)
    for key in sorted(paths):
        print(f"wrote {paths[key]}")
    return 0


_SWEEP_PARAMS = {
    "p": "drop_rate",
    "drop_rate": "drop_rate",
    "drop-rate": "drop_rate",
    "L": "n_subnets",
    "l": "n_subnets",
    "n_subnets": "n_subnets",
    "n-subnets": "n_subnets",
}


def cmd_sweep(args) -> int:
    cfg = _configured(args)
    parameter = _SWEEP_PARAMS[args.param]
    if args.values:
        try:
            cast = float if parameter == "drop_rate" else int
            values = [cast(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad --values list: {args.values!r}")
    else:
        values = list(
            cfg.sweep_drop_rates if parameter == "drop_rate" else cfg.sweep_n_subnets
        )
    if not values:
        raise UsageError(
            f"no sweep values: pass --values or put them in the config sweep section"
        )
    rows = exp_mod.run_sweep(cfg, parameter, values)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = args.out or os.path.join(cfg.out_dir, f"sweep_{parameter}.csv")
    exp_mod.write_sweep_csv(rows, out)
    print(f"wrote {out}")
    return 0


def _parse_grid(text: str) -> np.ndarray:
    """Grid values from 'lo:hi:num' or a comma-separated list."""
    try:
        if ":" in text:
            lo, hi, num = text.split(":")
            return np.linspace(float(lo), float(hi), int(num))
        return np.asarray([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise UsageError(f"bad grid {text!r}; use lo:hi:num or v1,v2,...")


def cmd_curves(args) -> int:
    if bool(args.mu_range) == bool(args.sigma_range):
        raise UsageError("pass exactly one of --mu-range / --sigma-range")
    if args.mu_range:
        x = _parse_grid(args.mu_range)
        mu_grid, sigma_grid = x, np.ones_like(x)
    else:
        x = _parse_grid(args.sigma_range)
        mu_grid, sigma_grid = np.zeros_like(x), x
    if x.size == 0:
        raise UsageError("empty grid")
    curves = met_mod.analytic_curves(mu_grid, sigma_grid, n_bins=args.bins)
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "ws1", "ws2", "ece"])
        for i in range(len(x)):
            writer.writerow([
                repr(float(x[i])),
                repr(float(curves["ws1"][i])),
                repr(float(curves["ws2"][i])),
                repr(float(curves["ece"][i])),
            ])
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wdropout",
        description="Wasserstein dropout: uncertainty-aware regression benchmark",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log per-job progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    p.add_argument("--kind", required=True,
                   choices=["toy-noise", "toy-hf", "noisy-line"])
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sigma-true", type=float, default=1.0,
                   help="noise scale for noisy-line")
    p.add_argument("--raw", action="store_true",
                   help="skip standardization (toy kinds)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit configured methods on the full dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics for a predictions CSV (mu, sigma, y)")
    p.add_argument("--predictions", required=True)
    p.add_argument("--n-bins", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="cross-validated benchmark from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dry-run", action="store_true",
                   help="print the job matrix and exit")
    p.add_argument("--merge-ood", action="store_true",
                   help="average PCA- and label-split results before datasets")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="re-run the benchmark over a parameter grid")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, choices=sorted(_SWEEP_PARAMS),
                   help="hyperparameter to sweep: p (drop rate) or L (subnets)")
    p.add_argument("--values", default="",
                   help="comma-separated list; default from the config")
    p.add_argument("--out", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("curves", help="analytic miscalibration curves as CSV")
    p.add_argument("--mu-range", default="",
                   help="mean grid (lo:hi:num or v1,v2,...), sigma fixed at 1")
    p.add_argument("--sigma-range", default="",
                   help="scale grid (lo:hi:num or v1,v2,...), mu fixed at 0")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        name = getattr(exc, "filename", None) or exc
        print(f"error: file not found: {name}", file=sys.stderr)
        return 2
    except est_mod.TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

import json
import subprocess
import sys

import numpy as np
import pytest

from wdropout import cli, datasets as ds, experiment as exp, metrics, network


def write_tiny_config(tmp_path, **extra):
    lines = [
        "name: clitest",
        "seed: 4",
        f"out_dir: {tmp_path / 'out'}",
        "dataset: {kind: toy-noise, n: 60, hidden: [6]}",
        "split: {kinds: [iid], n_folds: 3}",
        "epochs: 2",
        "batch_size: 20",
        "n_predict_samples: 6",
        "methods:",
        "  - {name: wdropout, n_subnets: 3}",
        "  - {name: mc}",
    ]
    for k, v in extra.items():
        lines.append(f"{k}: {v}")
    path = tmp_path / "config.yaml"
    path.write_text("\n".join(lines) + "\n")
    return path


class TestGenData:
    def test_writes_csv_and_normalizer_sidecar(self, tmp_path):
        out = tmp_path / "toy.csv"
        rc = cli.main(["gen-data", "--kind", "toy-hf", "--n", "50",
                       "--out", str(out), "--seed", "1"])
        assert rc == 0
        data = ds.load_csv(out)
        assert data.n_points == 50
        sidecar = tmp_path / "toy.norm.json"
        payload = json.loads(sidecar.read_text())
        assert payload["kind"] == "toy-hf"
        assert payload["seed"] == 1
        norm = ds.Normalizer.from_dict(payload["normalizer"])
        assert norm.y_std > 0

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            cli.main(["gen-data", "--kind", "toy-noise", "--n", "40",
                      "--out", str(out), "--seed", "7"])
        assert a.read_bytes() == b.read_bytes()

    def test_noisy_line_zero_scale(self, tmp_path):
        out = tmp_path / "line.csv"
        rc = cli.main(["gen-data", "--kind", "noisy-line", "--n", "30",
                       "--sigma-true", "0", "--out", str(out), "--seed", "2"])
        assert rc == 0
        data = ds.load_csv(out)
        assert np.all(data.y == 0.0)
        assert not (tmp_path / "line.norm.json").exists()  # no normalizer

    def test_env_seed_is_used_and_flag_wins(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV_VAR, "7")
        env_out = tmp_path / "env.csv"
        cli.main(["gen-data", "--kind", "toy-noise", "--n", "40",
                  "--out", str(env_out)])
        flag_out = tmp_path / "flag.csv"
        cli.main(["gen-data", "--kind", "toy-noise", "--n", "40",
                  "--out", str(flag_out), "--seed", "7"])
        assert env_out.read_bytes() == flag_out.read_bytes()
        other = tmp_path / "other.csv"
        cli.main(["gen-data", "--kind", "toy-noise", "--n", "40",
                  "--out", str(other), "--seed", "8"])
        assert other.read_bytes() != env_out.read_bytes()

    def test_bad_env_seed_is_usage_error(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV_VAR, "not-a-number")
        rc = cli.main(["gen-data", "--kind", "toy-noise", "--n", "10",
                       "--out", str(tmp_path / "x.csv")])
        assert rc == 2

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc_info:
            cli.main(["gen-data", "--kind", "toy-noise"])
        assert exc_info.value.code == 2


class TestEval:
    def test_prints_metrics_json(self, tmp_path, capsys):
        g = np.random.default_rng(0)
        mu, sigma, y = g.standard_normal(40), np.ones(40), g.standard_normal(40)
        path = tmp_path / "preds.csv"
        exp.write_predictions(path, mu, sigma, y)
        rc = cli.main(["eval", "--predictions", str(path)])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["rmse"] == metrics.rmse(mu, y)
        assert payload["n_points"] == 40
        assert set(metrics.EvalReport.METRIC_FIELDS) <= set(payload)

    def test_missing_file_is_usage_error(self, tmp_path, capsys):
        rc = cli.main(["eval", "--predictions", str(tmp_path / "nope.csv")])
        assert rc == 2
        assert "nope.csv" in capsys.readouterr().err

    def test_bad_schema_is_runtime_error(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        rc = cli.main(["eval", "--predictions", str(path)])
        assert rc == 1


class TestBench:
    def test_dry_run_prints_matrix_without_artifacts(self, tmp_path, capsys):
        cfg = write_tiny_config(tmp_path)
        rc = cli.main(["bench", "--config", str(cfg), "--dry-run"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "jobs" in out
        assert "wdropout" in out and "mc" in out
        assert not (tmp_path / "out").exists()

    def test_run_writes_all_artifacts(self, tmp_path):
        cfg = write_tiny_config(tmp_path)
        rc = cli.main(["bench", "--config", str(cfg)])
        assert rc == 0
        out = tmp_path / "out"
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == "method,split,metric,mean,median,q25,q75"
        assert any(line.startswith("wdropout,") for line in summary[1:])
        assert any(line.startswith("mc,") for line in summary[1:])
        reports = json.loads((out / "reports.json").read_text())["reports"]
        assert len(reports) == 2 * 3 * 2
        splits = json.loads((out / "splits.json").read_text())["splits"]
        assert len(splits) == 3
        for plan in splits:
            assert sorted(plan["train_indices"] + plan["test_indices"]) == list(
                range(60)
            )

    def test_missing_config_exits_2_naming_path(self, tmp_path, capsys):
        rc = cli.main(["bench", "--config", str(tmp_path / "ghost.yaml")])
        assert rc == 2
        assert "ghost.yaml" in capsys.readouterr().err

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("dataset: {kind: mnist}\n")
        rc = cli.main(["bench", "--config", str(path)])
        assert rc == 2
        assert "mnist" in capsys.readouterr().err

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write_tiny_config(tmp_path)
        cli.main(["bench", "--config", str(cfg), "--seed", "4",
                  "--out-dir", str(tmp_path / "r1")])
        cli.main(["bench", "--config", str(cfg),
                  "--out-dir", str(tmp_path / "r2")])  # config seed is 4 too
        assert (tmp_path / "r1" / "reports.json").read_bytes() == (
            tmp_path / "r2" / "reports.json"
        ).read_bytes()
        cli.main(["bench", "--config", str(cfg), "--seed", "5",
                  "--out-dir", str(tmp_path / "r3")])
        assert (tmp_path / "r3" / "reports.json").read_bytes() != (
            tmp_path / "r1" / "reports.json"
        ).read_bytes()


class TestTrain:
    def test_writes_models_and_predictions(self, tmp_path):
        cfg = write_tiny_config(tmp_path)
        rc = cli.main(["train", "--config", str(cfg)])
        assert rc == 0
        out = tmp_path / "out"
        model = network.load_model(out / "model_wdropout.npz")
        assert model.drop_rate == 0.1
        mu, sigma, y = exp.read_predictions(out / "predictions_mc.csv")
        assert len(mu) == 60
        assert np.all(sigma >= 0)
        rc = cli.main(["eval", "--predictions",
                       str(out / "predictions_wdropout.csv")])
        assert rc == 0

    def test_ensemble_members_saved_separately(self, tmp_path):
        cfg = write_tiny_config(tmp_path)
        cfg.write_text(cfg.read_text().replace(
            "  - {name: wdropout, n_subnets: 3}\n  - {name: mc}",
            "  - {name: de, n_members: 2}",
        ))
        rc = cli.main(["train", "--config", str(cfg)])
        assert rc == 0
        out = tmp_path / "out"
        assert (out / "model_de_member0.npz").exists()
        assert (out / "model_de_member1.npz").exists()


class TestSweep:
    def test_sweep_over_drop_rate(self, tmp_path):
        cfg = write_tiny_config(tmp_path)
        out = tmp_path / "sweep.csv"
        rc = cli.main(["sweep", "--config", str(cfg), "--param", "p",
                       "--values", "0.05,0.2", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "x,method,split,metric,mean,median,q25,q75"
        xs = {line.split(",")[0] for line in lines[1:]}
        assert xs == {"0.05", "0.2"}

    def test_sweep_values_from_config(self, tmp_path):
        cfg = write_tiny_config(tmp_path, sweep="{n_subnets: [2, 4]}")
        out = tmp_path / "sweepL.csv"
        rc = cli.main(["sweep", "--config", str(cfg), "--param", "L",
                       "--out", str(out)])
        assert rc == 0
        xs = {line.split(",")[0] for line in out.read_text().splitlines()[1:]}
        assert xs == {"2.0", "4.0"}

    def test_unknown_parameter_rejected_by_parser(self, tmp_path):
        cfg = write_tiny_config(tmp_path)
        with pytest.raises(SystemExit) as exc_info:
            cli.main(["sweep", "--config", str(cfg), "--param", "width"])
        assert exc_info.value.code == 2

    def test_no_values_anywhere_is_usage_error(self, tmp_path, capsys):
        cfg = write_tiny_config(tmp_path)
        rc = cli.main(["sweep", "--config", str(cfg), "--param", "p"])
        assert rc == 2
        assert "values" in capsys.readouterr().err


class TestCurves:
    def read(self, path):
        lines = path.read_text().splitlines()
        assert lines[0] == "x,ws1,ws2,ece"
        return [tuple(float(v) for v in line.split(",")) for line in lines[1:]]

    def test_calibrated_sigma_row_is_zero(self, tmp_path):
        out = tmp_path / "c.csv"
        assert cli.main(["curves", "--sigma-range", "1", "--out", str(out)]) == 0
        (row,) = self.read(out)
        assert row == (1.0, 0.0, 0.0, pytest.approx(0.0, abs=1e-12))

    def test_mean_shift_row(self, tmp_path):
        out = tmp_path / "c.csv"
        cli.main(["curves", "--mu-range", "3", "--out", str(out)])
        (row,) = self.read(out)
        assert row[1] == pytest.approx(3.0, abs=1e-8)  # ws1
        assert row[2] == 3.0  # ws2

    def test_vanishing_sigma_row(self, tmp_path):
        out = tmp_path / "c.csv"
        cli.main(["curves", "--sigma-range", "0,1", "--out", str(out)])
        rows = self.read(out)
        assert rows[0][1] == pytest.approx(np.sqrt(2 / np.pi), abs=1e-6)
        assert rows[0][2] == 1.0
        assert rows[0][3] == pytest.approx(1.8, abs=1e-12)

    def test_colon_grid_spec(self, tmp_path):
        out = tmp_path / "c.csv"
        cli.main(["curves", "--sigma-range", "0.5:2.0:4", "--out", str(out)])
        rows = self.read(out)
        assert [r[0] for r in rows] == [0.5, 1.0, 1.5, 2.0]

    def test_exactly_one_range_required(self, tmp_path, capsys):
        out = str(tmp_path / "c.csv")
        assert cli.main(["curves", "--out", out]) == 2
        assert cli.main(["curves", "--mu-range", "1", "--sigma-range", "1",
                         "--out", out]) == 2

    def test_bad_grid_is_usage_error(self, tmp_path):
        rc = cli.main(["curves", "--sigma-range", "a:b:c",
                       "--out", str(tmp_path / "c.csv")])
        assert rc == 2


class TestEntryPoint:
    def test_module_help_via_subprocess(self):
        proc = subprocess.run(
            [sys.executable, "-m", "wdropout.cli", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        for cmd in ("gen-data", "train", "eval", "bench", "sweep", "curves"):
            assert cmd in proc.stdout

    def test_console_script_exists(self):
        proc = subprocess.run(["wdropout", "--help"], capture_output=True,
                              text=True)
        assert proc.returncode == 0

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_diverged_training_exits_1(self, tmp_path, capsys):
        # an absurd learning rate blows the parameters up within a step or two
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(
            "name: diverge\nseed: 0\n"
            f"out_dir: {tmp_path / 'out'}\n"
            "dataset: {kind: noisy-line, n: 40, sigma_true: 1.0, hidden: [4]}\n"
            "split: {kinds: [iid], n_folds: 2}\n"
            "epochs: 2\nbatch_size: 20\n"
            "methods: [{name: mc, learning_rate: 1.0e+300}]\n"
        )
        rc = cli.main(["bench", "--config", str(cfg)])
        assert rc == 1
        assert "step" in capsys.readouterr().err

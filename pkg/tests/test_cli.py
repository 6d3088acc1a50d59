import csv
import json
import os

import numpy as np
import pytest

from scurnn import checkpoint
from scurnn.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, load_config, build_parser, main
from scurnn.gradcheck import GROUPS, run_gradcheck
from scurnn.rnn import init_params
from scurnn.train import METRICS_COLUMNS, ConfigError, TrainConfig, train

SMALL = ["--seq-len", "5", "--hidden", "6", "--batch", "4", "--iters", "6", "--eval-every", "3", "--eval-size", "20"]


def read_metrics(path):
    with open(os.path.join(path, "metrics.csv")) as fh:
        return list(csv.DictReader(fh))


class TestGradcheck:
    def test_passes(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "FAIL" not in out
        for group in GROUPS:
            assert group in out

    def test_corrupted_group_fails(self, capsys):
        assert main(["gradcheck", "--corrupt", "theta"]) == EXIT_NUMERIC
        out = capsys.readouterr().out
        assert "FAIL: theta" in out
        report = run_gradcheck(corrupt="theta")
        assert report.failed == ["theta"]

    def test_impossible_tolerance_fails(self):
        report = run_gradcheck(tol=1e-12)
        assert set(report.failed) == set(GROUPS)

    def test_size_limits(self, capsys):
        assert main(["gradcheck", "--n", "11"]) == EXIT_CONFIG
        assert main(["gradcheck", "--tau", "9"]) == EXIT_CONFIG


class TestConfig:
    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"task": "adding", "hidden": 12, "batch": 7}))
        args = build_parser().parse_args(["train", "--config", str(path), "--hidden", "9"])
        cfg = load_config(args)
        assert (cfg.task, cfg.hidden, cfg.batch) == ("adding", 9, 7)

    def test_unknown_key(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"hiden": 12}))
        assert main(["train", "--config", str(path)]) == EXIT_CONFIG
        assert "hiden" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "argv",
        [
            ["train", "--opt-a", "nadam:1e-3"],
            ["train", "--hidden", "0"],
            ["train", "--task", "mnist"],
            ["train", "--config", "/nonexistent/cfg.json"],
        ],
    )
    def test_config_errors(self, argv, capsys):
        assert main(argv) == EXIT_CONFIG

    def test_validate(self):
        with pytest.raises(ConfigError):
            TrainConfig(task="adding", seq_len=1).validate()
        with pytest.raises(ConfigError):
            TrainConfig(iters=0, epochs=0).validate()


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", *SMALL, "--out", str(out)]) == EXIT_OK
    return out


class TestTrainAndEval:
    def test_artifacts(self, run_dir):
        assert {"config.json", "metrics.csv", "checkpoint.scur"} <= set(os.listdir(run_dir))
        rows = read_metrics(run_dir)
        assert tuple(rows[0]) == METRICS_COLUMNS
        assert [int(r["step"]) for r in rows] == [3, 6]
        for r in rows:
            assert float(r["unitarity_error"]) <= 1e-10
            assert float(r["baseline"]) == pytest.approx(10 * np.log(8) / 25)

    def test_eval_reproduces_last_row(self, run_dir, capsys):
        capsys.readouterr()
        ckpt = str(run_dir / "checkpoint.scur")
        assert main(["eval", *SMALL, "--checkpoint", ckpt]) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["eval_metric"] == float(read_metrics(run_dir)[-1]["eval_metric"])

    def test_eval_with_wrong_hidden_size(self, run_dir, capsys):
        ckpt = str(run_dir / "checkpoint.scur")
        argv = ["eval", *SMALL, "--checkpoint", ckpt]
        argv[argv.index("--hidden") + 1] = "7"
        assert main(argv) == EXIT_CONFIG
        assert "checkpoint" in capsys.readouterr().err

    def test_checkpoint_round_trip(self, run_dir):
        raw = (run_dir / "checkpoint.scur").read_bytes()
        assert checkpoint.dumps(checkpoint.loads(raw)) == raw

    def test_runs_are_deterministic(self, run_dir, tmp_path):
        assert main(["train", *SMALL, "--out", str(tmp_path)]) == EXIT_OK
        a, b = read_metrics(run_dir), read_metrics(tmp_path)
        for ra, rb in zip(a, b):
            ra.pop("wall_seconds")
            rb.pop("wall_seconds")
        assert a == b
        assert (run_dir / "checkpoint.scur").read_bytes() == (tmp_path / "checkpoint.scur").read_bytes()


class TestCheckpoint:
    def test_round_trip_values(self, tmp_path):
        params = init_params(5, 3, 2, seed=4)
        path = tmp_path / "p.scur"
        checkpoint.save(path, params)
        back = checkpoint.load(path, expect=(5, 3, 2))
        for name, arr in params.dense().items():
            np.testing.assert_array_equal(back.dense()[name], arr)
        np.testing.assert_array_equal(back.a.x_lower, params.a.x_lower)
        np.testing.assert_array_equal(back.a.y_lower, params.a.y_lower)
        np.testing.assert_array_equal(back.theta.theta, params.theta.theta)

    @pytest.mark.parametrize("mutate", ["magic", "truncate", "version"])
    def test_corrupt(self, mutate):
        raw = bytearray(checkpoint.dumps(init_params(3, 2, 2, seed=0)))
        if mutate == "magic":
            raw[:4] = b"XXXX"
        elif mutate == "version":
            raw[4] = 9
        else:
            raw = raw[:-5]
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.loads(bytes(raw))

    def test_shape_mismatch(self):
        raw = checkpoint.dumps(init_params(3, 2, 2, seed=0))
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.loads(raw, expect=(4, 2, 2))


def test_numeric_fault_exit_code(tmp_path, capsys, monkeypatch):
    import scurnn.train as train_mod

    real_init = train_mod.initial_params

    def poisoned(cfg, task):
        params = real_init(cfg, task)
        params.u_re[0, 0] = np.nan
        return params

    monkeypatch.setattr(train_mod, "initial_params", poisoned)
    assert main(["train", *SMALL, "--out", str(tmp_path)]) == EXIT_NUMERIC
    rows = read_metrics(tmp_path)
    assert len(rows) == 1 and rows[0]["eval_metric"] == "nan"
    assert not (tmp_path / "checkpoint.scur").exists()


def test_adding_epochs_and_early_stop(tmp_path):
    cfg = TrainConfig(task="adding", seq_len=4, hidden=4, batch=10, epochs=2, train_size=30,
                      eval_every=1, eval_size=10, out=str(tmp_path), target=1e9)
    result = train(cfg)
    assert result.stopped_early and len(result.rows) == 1
    cfg = TrainConfig(task="adding", seq_len=4, hidden=4, batch=10, epochs=2, train_size=30,
                      eval_every=100, eval_size=10, out=None)
    assert train(cfg).rows[-1]["step"] == 6

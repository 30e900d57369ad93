import csv
import json

import numpy as np
import pytest

from conftest import small_config
from otapfl import cli
from otapfl.config import (
    ExperimentConfig, config_from_dict, config_to_dict, dump_config, load_config,
)
from otapfl.errors import ConfigError
from otapfl.protocol import run_experiment
from otapfl.results import METRIC_COLUMNS, read_metrics_csv, replay_trace, write_run
from otapfl.seeds import SeedTree


def _cfg_dict(**kw):
    return config_to_dict(small_config(**kw))


def _write(tmp_path, d, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return path


# --- seeds


def test_seed_streams_are_pure_and_distinct():
    t = SeedTree(3)
    assert t.rng("local", 1, 2).random() == SeedTree(3).rng("local", 1, 2).random()
    draws = {t.rng(p, r, u).random() for p in ("local", "personal") for r in (0, 1) for u in (0, 1, None)}
    assert len(draws) == 12
    assert SeedTree(4).rng("local", 1, 2).random() != t.rng("local", 1, 2).random()


def test_seed_encoding_separates_ints_and_strings():
    t = SeedTree(0)
    assert t.rng("x", round=1).random() != t.rng("x", user=1).random()


# --- config


def test_defaults_are_echoed():
    d = config_to_dict(ExperimentConfig())
    assert d["users"] == 10 and d["path_loss"]["n_elements"] == 10
    assert d["snr_db"] == 20.0 and d["lam"] == 0.1 and d["tau_v"] == 3
    assert set(d["dataset"]) >= {"kind", "path", "classes"}


def test_unknown_keys_rejected_at_every_level():
    d = _cfg_dict()
    d["bogus"] = 1
    d["dataset"]["colour"] = "red"
    with pytest.raises(ConfigError) as exc:
        config_from_dict(d)
    text = " ".join(exc.value.problems)
    assert "bogus" in text and "colour" in text


def test_all_problems_collected():
    d = _cfg_dict(mode="warp", users=0)
    d["gamma"] = -1
    with pytest.raises(ConfigError) as exc:
        config_from_dict(d)
    assert len(exc.value.problems) >= 3


def test_missing_dataset_path(monkeypatch):
    monkeypatch.delenv("OTAPFL_FASHION_MNIST", raising=False)
    d = _cfg_dict()
    d["dataset"] = {"kind": "fashion_mnist", "path": "/nonexistent/fmnist"}
    with pytest.raises(ConfigError, match="does not exist"):
        config_from_dict(d)
    d["dataset"] = {"kind": "fashion_mnist"}
    with pytest.raises(ConfigError, match="not set"):
        config_from_dict(d)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_resolved_config_roundtrip_reproduces_run(tmp_path):
    cfg = small_config(rounds=2)
    res = run_experiment(cfg)
    resolved = res.env.resolved()
    dump_config(resolved, tmp_path / "r.json")
    again = load_config(tmp_path / "r.json")
    assert config_to_dict(again) == config_to_dict(resolved)
    res2 = run_experiment(again)
    np.testing.assert_array_equal(res.state.w, res2.state.w)
    assert res.metrics == res2.metrics


# --- results


def test_run_directory_layout(tmp_path):
    res = run_experiment(small_config(rounds=2, trace_rounds=[1]))
    out = write_run(res, tmp_path, "r")
    for rel in ("config.resolved.json", "summary.json", "metrics.csv", "models/final.npz",
                "traces/round_0001.json", "traces/round_0001_pre.npz"):
        assert (out / rel).is_file(), rel
    with open(out / "metrics.csv") as fh:
        header = next(csv.reader(fh))
    assert header == METRIC_COLUMNS + [f"pers_acc_u{i}" for i in range(4)]
    rows = read_metrics_csv(out / "metrics.csv")
    assert [int(r["round"]) for r in rows] == [0, 1]
    assert float(rows[-1]["global_acc"]) == res.final["global_acc"]


def test_metric_columns_stable():
    assert METRIC_COLUMNS == [
        "round", "global_loss", "global_acc", "pers_acc_mean", "pers_acc_std", "pers_loss_mean",
        "pers_grad_norm_mean", "agg_mse", "imag_residual", "skipped", "mean_tau", "backstops",
        "max_energy_ratio", "target_met",
    ]


@pytest.mark.parametrize("mode", ["proar_pfed", "central_ris", "ideal_fedavg"])
def test_trace_replay_is_bit_exact(tmp_path, mode):
    res = run_experiment(small_config(mode=mode, rounds=3, trace_rounds=[2]))
    out = write_run(res, tmp_path, mode)
    ok, expected, got = replay_trace(out / "traces" / "round_0002.json")
    assert ok and expected == got


def test_trace_records_round_details():
    res = run_experiment(small_config(rounds=1, trace_rounds="all"))
    trace = res.traces[0][0].to_dict()
    json.dumps(trace)
    u = trace["users"][0]
    for key in ("gains", "estimate", "phi", "beta_i", "tau", "energy", "skipped"):
        assert key in u
    assert len(u["phi"]) == 10


# --- cli


def test_cli_check_passes(capsys):
    assert cli.main(["check"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 8


def test_cli_run(tmp_path, capsys):
    cfg = _write(tmp_path, _cfg_dict(rounds=2))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    run_dir = capsys.readouterr().out.strip()
    assert (tmp_path / "out").exists() and run_dir.startswith(str(tmp_path / "out"))


def test_cli_output_root_from_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("OTAPFL_OUT", str(tmp_path / "envout"))
    cfg = _write(tmp_path, _cfg_dict(rounds=1))
    assert cli.main(["run", str(cfg)]) == 0
    assert any((tmp_path / "envout").iterdir())


def test_cli_run_missing_dataset_fails_before_compute(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("OTAPFL_FASHION_MNIST", raising=False)
    d = _cfg_dict()
    d["dataset"] = {"kind": "fashion_mnist", "path": str(tmp_path / "nope")}
    cfg = _write(tmp_path, d)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 2
    assert "dataset.path" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_cli_usage_error():
    assert cli.main(["frobnicate"]) != 0
    assert cli.main([]) != 0


def test_cli_missing_config_file(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.json")]) == 2


def test_cli_sweep_over_gamma(tmp_path, capsys):
    cfg = _write(tmp_path, _cfg_dict(rounds=1))
    out = tmp_path / "sweep"
    assert cli.main(["sweep", str(cfg), "--param", "gamma=0.1,0.5", "--out", str(out)]) == 0
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert dirs == ["sweep-gamma=0.1", "sweep-gamma=0.5"]
    rows = list(csv.DictReader(open(out / "sweep_summary.csv")))
    assert [r["gamma"] for r in rows] == ["0.1", "0.5"]
    assert all(r["pers_acc_mean"] for r in rows)
    resolved = json.loads((out / "sweep-gamma=0.1" / "config.resolved.json").read_text())
    assert resolved["gamma"] == 0.1


def test_cli_sweep_dotted_key(tmp_path):
    cfg = _write(tmp_path, _cfg_dict(rounds=1))
    out = tmp_path / "sw"
    assert cli.main(["sweep", str(cfg), "--param", "path_loss.n_elements=4", "--out", str(out)]) == 0
    resolved = json.loads((out / "sweep-path_loss.n_elements=4" / "config.resolved.json").read_text())
    assert resolved["path_loss"]["n_elements"] == 4


def test_parse_param():
    assert cli.parse_param("gamma=0.1,0.5") == ("gamma", [0.1, 0.5])
    assert cli.parse_param("mode=no_ris") == ("mode", ["no_ris"])
    with pytest.raises(ValueError):
        cli.parse_param("gamma")


def test_cli_replay(tmp_path, capsys):
    res = run_experiment(small_config(rounds=2, trace_rounds="all"))
    out = write_run(res, tmp_path, "r")
    assert cli.main(["replay", str(out / "traces" / "round_0001.json")]) == 0
    assert capsys.readouterr().out.startswith("MATCH")

import json
from pathlib import Path

import numpy as np
import pytest

from mlsbi import GandKSimulator, SeedKey, load_dataset, save_dataset, simulate_level_batches
from mlsbi.cli import main as cli_main
from mlsbi.experiments import EXPERIMENTS, ExperimentConfig, run, validate


# ---------------------------------------------------------------------------
# Config validation


def test_validate_accepts_minimal_config():
    assert validate({"experiment": "gk_nle"}) == []


def test_validate_unknown_experiment():
    diags = validate({"experiment": "galaxy"})
    assert any("experiment" in d for d in diags)


def test_validate_mc_with_partial_ladder():
    diags = validate({"experiment": "toggle_nle", "method": "mc_high", "n_per_level": [100, 50]})
    assert any("n_per_level" in d for d in diags)


def test_validate_negative_seed():
    diags = validate({"experiment": "gk_nle", "seed": -3})
    assert any("seed" in d for d in diags)


def test_validate_zero_samples_cites_floor():
    diags = validate({"experiment": "gk_nle", "n_per_level": [100, 0]})
    assert any("floor" in d for d in diags)


def test_validate_mc_mid_needs_three_levels():
    diags = validate({"experiment": "gk_nle", "method": "mc_mid"})
    assert any("mc_mid" in d for d in diags)


def test_validate_unknown_field():
    diags = validate({"experiment": "gk_nle", "bogus": 1})
    assert any("bogus" in d for d in diags)


def test_from_dict_raises_on_invalid():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"experiment": "gk_nle", "seed": -1})


def test_resolved_fills_presets():
    resolved = ExperimentConfig(experiment="toggle_nle").resolved()
    assert resolved["n_per_level"] == [10000, 500, 300]
    assert resolved["epochs"] == 1000  # desk scale: paper budget / 10
    assert resolved["n_components"] == 2
    assert resolved["version"]
    full = ExperimentConfig(experiment="toggle_nle", full_scale=True).resolved()
    assert full["epochs"] == 10000
    assert full["learning_rate"] == 1e-4


# ---------------------------------------------------------------------------
# Dataset persistence


def test_dataset_roundtrip_raw(tmp_path):
    gk = GandKSimulator()
    key = SeedKey(1)
    batches = simulate_level_batches(gk, key, [12, 5])
    save_dataset(tmp_path, batches, gk, key, m=1)
    loaded, meta = load_dataset(tmp_path)
    assert meta["simulator"] == "gk"
    assert meta["n_per_level"] == [12, 5]
    for orig, back in zip(batches, loaded):
        assert back.level == orig.level
        assert np.allclose(back.thetas, orig.thetas, rtol=1e-15)
        assert np.allclose(back.x_hi, orig.x_hi, rtol=1e-15)
        if orig.x_lo is None:
            assert back.x_lo is None
        else:
            assert np.allclose(back.x_lo, orig.x_lo, rtol=1e-15)


def test_dataset_roundtrip_summaries(tmp_path):
    gk = GandKSimulator()
    key = SeedKey(2)
    batches = simulate_level_batches(gk, key, [6, 3], m=50)
    save_dataset(tmp_path, batches, gk, key, m=50, summary_scheme="gk_quantiles4")
    loaded, meta = load_dataset(tmp_path)
    assert meta["stored"] == "summary"
    assert loaded[0].x_hi.shape == (6, 1, 4)


# ---------------------------------------------------------------------------
# End-to-end runs


def _tiny_config(tmp_path, **overrides):
    base = {
        "experiment": "lingauss_calibration",
        "epochs": 40,
        "n_eval": 12,
        "seed": 5,
        "output_dir": str(tmp_path / "out"),
    }
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


def test_run_writes_bundle(tmp_path):
    bundle = run(_tiny_config(tmp_path))
    out = tmp_path / "out"
    for name in ("results.json", "metrics.csv", "training_log.jsonl", "loss_components.csv", "coverage_curve.csv"):
        assert (out / name).exists(), name
    assert (out / "checkpoints" / "rep000.mlsbi").exists()
    assert (out / "data" / "rep000" / "dataset.csv").exists()
    assert "posterior_mean_error" in bundle["summary"]
    saved = json.loads((out / "results.json").read_text())
    assert saved["config"]["experiment"] == "lingauss_calibration"
    assert saved["config"]["version"]


def test_run_deterministic_metrics(tmp_path):
    run(_tiny_config(tmp_path / "a", output_dir=str(tmp_path / "a")))
    run(_tiny_config(tmp_path / "b", output_dir=str(tmp_path / "b")))
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "training_log.jsonl").read_bytes() == (tmp_path / "b" / "training_log.jsonl").read_bytes()


def test_run_mlmc_gk(tmp_path):
    config = ExperimentConfig.from_dict(
        {
            "experiment": "gk_nle",
            "n_per_level": [300, 30],
            "epochs": 60,
            "n_eval": 2,
            "output_dir": str(tmp_path),
            "seed": 1,
        }
    )
    bundle = run(config)
    assert "grid_kld" in bundle["summary"]
    rows = (tmp_path / "loss_components.csv").read_text().splitlines()
    assert rows[0].startswith("replicate,epoch,total,h_0,h_1")


def test_run_budget_matched_baseline(tmp_path):
    config = ExperimentConfig.from_dict(
        {
            "experiment": "gk_nle",
            "method": "mc_high",
            "n_per_level": [300, 30],
            "epochs": 20,
            "n_eval": 1,
            "output_dir": str(tmp_path),
        }
    )
    run(config)
    _, meta = load_dataset(tmp_path / "data" / "rep000")
    # budget = 300*1 + 30*(10+1) = 630 at unit costs (1, 10) -> n_high = 63
    assert meta["n_per_level"] == [63]
    assert meta["levels"] == [1]


def test_run_sweep(tmp_path):
    config = ExperimentConfig.from_dict(
        {
            "experiment": "gk_nle",
            "n_per_level": [200, 10],
            "sweep_n1": [5, 10],
            "epochs": 25,
            "n_eval": 1,
            "output_dir": str(tmp_path),
        }
    )
    bundle = run(config)
    assert (tmp_path / "sweep.csv").exists()
    assert {row["n1"] for row in bundle["sweep"]} == {5, 10}


# ---------------------------------------------------------------------------
# CLI verbs


def test_cli_validate_ok(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "gk_nle"}))
    assert cli_main(["validate", "--config", str(cfg)]) == 0
    assert "config valid" in capsys.readouterr().out


def test_cli_validate_bad(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "gk_nle", "seed": -1}))
    assert cli_main(["validate", "--config", str(cfg)]) == 1


def test_cli_simulate_train_evaluate(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    out = tmp_path / "out"
    cfg.write_text(
        json.dumps(
            {
                "experiment": "lingauss_calibration",
                "epochs": 30,
                "n_eval": 6,
                "metrics": ["posterior_mean_error"],
                "output_dir": str(out),
            }
        )
    )
    assert cli_main(["simulate", "--config", str(cfg)]) == 0
    assert (out / "data" / "rep000" / "dataset.csv").exists()
    assert cli_main(["train", "--config", str(cfg)]) == 0
    ckpt = out / "checkpoints" / "rep000.mlsbi"
    assert ckpt.exists()
    assert cli_main(["evaluate", "--config", str(cfg), "--checkpoint", str(ckpt)]) == 0
    assert (out / "metrics.csv").exists()


def test_cli_plan_pilot_variances(tmp_path, capsys):
    out_file = tmp_path / "plan.json"
    code = cli_main(
        ["plan", "--costs", "1,10", "--budget", "1000", "--variances", "4,1", "--output", str(out_file)]
    )
    assert code == 0
    payload = json.loads(out_file.read_text())
    assert payload["achieved_cost"] <= 1000
    assert len(payload["n"]) == 2


def test_cli_plan_requires_exactly_one_weight_source(capsys):
    assert cli_main(["plan", "--costs", "1,10", "--budget", "100"]) == 1


def test_cli_seed_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "gk_nle", "n_per_level": [50, 5], "epochs": 5, "n_eval": 1}))
    a = tmp_path / "a"
    b = tmp_path / "b"
    cli_main(["run", "--config", str(cfg), "--seed", "1", "--output-dir", str(a)])
    cli_main(["run", "--config", str(cfg), "--seed", "2", "--output-dir", str(b)])
    assert (a / "metrics.csv").read_bytes() != (b / "metrics.csv").read_bytes()

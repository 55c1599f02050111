import json

import numpy as np
import pandas as pd
import pytest

from rampflow import cli, pipeline, stats
from rampflow.boosting import BoostConfig

SMALL = {
    "seed": 3,
    "synth": {
        "source": {"corridor_id": "S", "days": 3, "seed": 1},
        "target": {"corridor_id": "T", "days": 3, "seed": 2, "emit_ramp_detectors": False,
                   "domain_shift": {"demand_scale": 1.25, "peak_shift_hours": 1.0}},
    },
    "ridge": {"runs": 2},
    "boost": {"n_estimators": 5, "max_depth": 4, "steps": 3},
    "evaluation": {"runs": 2, "knn_neighbors": 5},
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert cli.main(["run", "--config", str(cfg), "--out-dir", str(root / "out")]) == 0
    return root


def test_run_writes_every_artifact(run_dir):
    out = run_dir / "out"
    for name in ("source_features.csv", "target_features.csv", "source_validity.csv", "selection.csv",
                 "matches.csv", "match_details.csv", "model.json", "estimates.csv", "scores.csv",
                 "summary.json"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["stages"] == ["synth", "aggregate", "select-features", "match", "train",
                                 "estimate", "evaluate"]
    scores = pd.read_csv(out / "scores.csv")
    assert set(scores.model) == {"TrA", "AdaBoostR2-source", "KNN", "Mean"}
    assert (scores.rmse_veh_h >= scores.mae_veh_h).all()
    est = pd.read_csv(out / "estimates.csv")
    assert list(est.columns) == ["location_id", "interval_start", "on_flow_hat", "off_flow_hat"]
    assert len(est) == len(pd.read_csv(out / "target_features.csv"))


def test_stepwise_cli_reproduces_run(run_dir, tmp_path):
    src, out = run_dir / "out" / "source", run_dir / "out"
    tgt = out / "target"
    cfg = str(run_dir / "cfg.json")
    steps = [
        ["aggregate", "--raw", str(src / "raw.csv.gz"), "--corridor", str(src / "corridor.json"),
         "--out", str(tmp_path / "s.csv")],
        ["aggregate", "--raw", str(tgt / "raw.csv.gz"), "--corridor", str(tgt / "corridor.json"),
         "--out", str(tmp_path / "t.csv")],
        ["select-features", "--config", cfg, "--features", str(tmp_path / "s.csv"),
         "--out", str(tmp_path / "sel.csv")],
        ["match", "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv"),
         "--selection", str(tmp_path / "sel.csv"), "--out", str(tmp_path / "m.csv")],
        ["train", "--config", cfg, "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv"),
         "--selection", str(tmp_path / "sel.csv"), "--matches", str(tmp_path / "m.csv"),
         "--out", str(tmp_path / "model.json")],
        ["estimate", "--model", str(tmp_path / "model.json"), "--features", str(tmp_path / "t.csv"),
         "--out", str(tmp_path / "est.csv")],
        ["evaluate", "--truth", str(tgt / "truth.csv"), "--estimates", f"TrA={tmp_path / 'est.csv'}",
         "--out", str(tmp_path / "scores.csv")],
    ]
    for argv in steps:
        assert cli.main(argv) == 0, argv
    assert (tmp_path / "s.csv").read_bytes() == (out / "source_features.csv").read_bytes()
    assert (tmp_path / "sel.csv").read_bytes() == (out / "selection.csv").read_bytes()
    assert (tmp_path / "m.csv").read_bytes() == (out / "matches.csv").read_bytes()
    assert (tmp_path / "est.csv").read_bytes() == (out / "estimates.csv").read_bytes()
    scores = pd.read_csv(tmp_path / "scores.csv")
    assert scores.model.unique().tolist() == ["TrA"]


def test_synth_subcommand(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"corridor_id": "X", "locations": 2}))
    assert cli.main(["synth", "--config", str(conf), "--days", "1", "--seed", "4",
                     "--out", str(tmp_path / "x")]) == 0
    truth = pd.read_csv(tmp_path / "x" / "truth.csv")
    assert set(truth.location_id) == {"X1", "X2"} and len(truth) == 2 * 96


def test_gridsearch_subcommand(run_dir, tmp_path):
    out = run_dir / "out"
    argv = ["gridsearch", "--config", str(run_dir / "cfg.json"),
            "--source", str(out / "source_features.csv"), "--target", str(out / "target_features.csv"),
            "--selection", str(out / "selection.csv"), "--max-depth", "2", "4",
            "--n-estimators", "3", "--out", str(tmp_path / "g.csv")]
    assert cli.main(argv) == 0
    g = pd.read_csv(tmp_path / "g.csv")
    assert len(g) == 2 and set(g.max_depth) == {2, 4}
    assert (tmp_path / "g_cells.csv").exists()


def test_model_bundle_round_trip(run_dir):
    out = run_dir / "out"
    bundle = pipeline.ModelBundle.load(out / "model.json")
    table = stats.read_feature_table(out / "target_features.csv")
    est = bundle.predict(table)
    saved = pd.read_csv(out / "estimates.csv", dtype={"location_id": str})
    np.testing.assert_allclose(est.on_flow_hat, saved.on_flow_hat, atol=5e-7)
    d = json.loads((out / "model.json").read_text())
    assert d["schema_version"] == pipeline.SCHEMA_VERSION
    assert d["feature_names"] == list(stats.FEATURE_NAMES)
    d["schema_version"] = 99
    with pytest.raises(ValueError, match="schema"):
        pipeline.ModelBundle.from_dict(d)


def test_missing_ground_truth_skips_evaluation(run_dir, tmp_path):
    out = run_dir / "out"
    cfg = pipeline.RunConfig(
        out_dir=str(tmp_path / "o"), seed=3,
        source_raw=str(out / "source" / "raw.csv.gz"), source_corridor=str(out / "source" / "corridor.json"),
        target_raw=str(out / "target" / "raw.csv.gz"), target_corridor=str(out / "target" / "corridor.json"),
        ridge_runs=2, boost=BoostConfig(n_estimators=3, max_depth=3, steps=2),
    )
    summary = pipeline.run_pipeline(cfg)
    assert summary["evaluation"] == "skipped: no ground truth"
    assert not (tmp_path / "o" / "scores.csv").exists()
    assert (tmp_path / "o" / "estimates.csv").exists()


def test_cli_reports_errors(tmp_path, capsys):
    code = cli.main(["aggregate", "--raw", str(tmp_path / "none.csv"), "--corridor", str(tmp_path / "c.json")])
    assert code == 1
    assert "rampflow: error:" in capsys.readouterr().err


def test_run_without_inputs_names_stage(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 1}))
    assert cli.main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 1
    assert "aggregate" in capsys.readouterr().err


def test_global_flags_before_or_after_subcommand(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"locations": 1}))
    a = ["--seed", "8", "synth", "--config", str(conf), "--days", "1", "--out", str(tmp_path / "a")]
    b = ["synth", "--seed", "8", "--config", str(conf), "--days", "1", "--out", str(tmp_path / "b")]
    assert cli.main(a) == 0 and cli.main(b) == 0
    assert (tmp_path / "a" / "truth.csv").read_bytes() == (tmp_path / "b" / "truth.csv").read_bytes()

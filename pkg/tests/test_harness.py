import dataclasses
import json
import os

import numpy as np
import pytest

from unctraj import cli, harness
from unctraj.harness import ConfigError, ExperimentConfig
from unctraj.metrics import MetricReport
from unctraj.predictor import PredictorConfig, prepare

TINY = ["--n-train", "4", "--n-val", "2", "--n-test", "3", "--map-epochs", "2", "--pred-epochs", "2"]


def _cfg(tmp_path, **kw):
    base = ExperimentConfig(n_train=4, n_val=2, n_test=3, out_dir=str(tmp_path))
    base = dataclasses.replace(
        base,
        map_train=dataclasses.replace(base.map_train, epochs=2),
        pred_train=dataclasses.replace(base.pred_train, epochs=2),
    )
    return dataclasses.replace(base, **kw)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data, train-map, estimate for a tiny config, once per module."""
    cfg = _cfg(tmp_path_factory.mktemp("run"))
    harness.cmd_gen_data(cfg)
    harness.cmd_train_map(cfg)
    harness.cmd_estimate(cfg)
    return cfg


def test_config_validation_is_field_level():
    with pytest.raises(ConfigError, match="n_train"):
        ExperimentConfig(n_train=0)
    with pytest.raises(ConfigError, match="layouts"):
        ExperimentConfig(layouts=("moon",))
    with pytest.raises(ConfigError, match="unknown config fields: bogus"):
        ExperimentConfig.from_dict({"bogus": 1})


def test_config_round_trip_and_hash():
    cfg = ExperimentConfig(master_seed=3)
    assert ExperimentConfig.loads(cfg.dumps()) == cfg
    assert cfg.hash() == dataclasses.replace(cfg, out_dir="elsewhere").hash()
    assert cfg.hash() != dataclasses.replace(cfg, master_seed=4).hash()


def test_derived_seeds_differ_by_stage():
    cfg = ExperimentConfig(master_seed=1)
    seeds = {cfg.noise_config().seed, cfg.map_config().seed, cfg.pred_config().seed, cfg.scene_seed("train", 0)}
    assert len(seeds) == 4
    assert cfg.pred_config("pos_only").variant == "pos_only"
    assert cfg.variant == "both"
    assert dataclasses.replace(cfg, unc_sem=False).variant == "pos_only"


def test_gen_data_checksums_identical(tmp_path):
    a = harness.cmd_gen_data(_cfg(tmp_path / "a"))
    b = harness.cmd_gen_data(_cfg(tmp_path / "b"))
    assert a["files"] == b["files"]
    assert a["counts"] == {"train": 4, "val": 2, "test": 3}
    for split, n in a["counts"].items():
        assert len(harness.load_split(_cfg(tmp_path / "a"), split)) == n


def test_tampered_data_is_rejected(pipeline, tmp_path):
    cfg = dataclasses.replace(pipeline, out_dir=str(tmp_path))
    harness.cmd_gen_data(cfg)
    with open(os.path.join(tmp_path, "data", "val.scenes"), "a") as fh:
        fh.write("# edited\n")
    with pytest.raises(ValueError, match="checksum"):
        harness.load_split(cfg, "val")


def test_missing_dataset(tmp_path):
    with pytest.raises(FileNotFoundError, match="gen-data"):
        harness.cmd_run_ablation(_cfg(tmp_path))


def test_estimates_csv_round_trip(pipeline):
    est = harness.load_estimates(pipeline, "test")
    text = harness.estimates_to_csv(est.items())
    back = harness.estimates_from_csv(text)
    for seed, v in est.items():
        assert np.array_equal(back[seed].mu, v.mu) and np.array_equal(back[seed].delta_c, v.delta_c)
    with pytest.raises(ValueError):
        harness.estimates_from_csv("a,b\n")


def test_train_and_eval_stage(pipeline):
    harness.cmd_train_pred(pipeline, "both")
    report = harness.cmd_eval(pipeline, "both")
    assert report.n_agents > 0
    written = json.loads(open(os.path.join(pipeline.out_dir, "eval", "both_metrics.json")).read())
    assert written["n_agents"] == report.n_agents
    samples = harness.samples_for(harness.load_split(pipeline, "test"), harness.load_estimates(pipeline, "test"))
    assert harness.constant_velocity_report(samples).n_agents == report.n_agents


def test_pos_only_ignores_delta_c(pipeline):
    items = harness.load_split(pipeline, "train")
    est = harness.load_estimates(pipeline, "train")
    rng = np.random.default_rng(0)
    scrambled = {k: dataclasses.replace(v, delta_c=rng.uniform(0, 1, v.delta_c.shape)) for k, v in est.items()}
    test = prepare(harness.samples_for(harness.load_split(pipeline, "test"), harness.load_estimates(pipeline, "test")))
    out = []
    for e in (est, scrambled):
        m, trace = harness.train_predictor(prepare(harness.samples_for(items, e)), pipeline.pred_config("pos_only"))
        out.append((harness.pred_trace_to_csv(trace), harness.evaluate_predictor(m, None, test)[0]))
    assert out[0] == out[1]


def test_ablation_rows_and_provenance(pipeline):
    text = harness.cmd_run_ablation(pipeline)
    parsed = harness.parse_ablation_csv(text)
    assert list(parsed["rows"]) == ["baseline", "pos_only", "sem_only", "both"]
    meta = parsed["meta"]
    assert meta["config_hash"] == pipeline.hash()
    assert meta["data_checksum"] == harness.data_checksum(harness.load_manifest(pipeline))
    assert meta["toolkit_version"] == "0.1.0"
    assert all(isinstance(r, MetricReport) for r in parsed["rows"].values())
    assert text.count("# data_checksum") == 1  # one block shared by all rows


def test_render_command(pipeline, tmp_path):
    out = tmp_path / "scene.svg"
    svg = harness.cmd_render(pipeline, "test", 0, "both", str(out))
    assert out.read_text() == svg and svg.startswith("<?xml")
    with pytest.raises(IndexError):
        harness.cmd_render(pipeline, "test", 99)


# --- verify -------------------------------------------------------------


def test_verify_passes_and_lists_tolerances():
    lines = []
    assert harness.cmd_verify(0, out=lines.append) == 0
    checks = lines[:-1]
    assert all(line.startswith("PASS") and "tolerance" in line for line in checks)
    assert lines[-1] == f"{len(checks)}/{len(checks)} checks passed"


def test_verify_detects_injected_bug():
    lines = []
    assert harness.cmd_verify(0, inject_kl_sign_bug=True, out=lines.append) != 0
    assert any(line.startswith("FAIL") and "laplace_kl" in line for line in lines)


def test_quadrature_oracle_examples():
    assert harness.laplace_kl_by_quadrature(0, 1, 1, 1) == pytest.approx(np.exp(-1), abs=1e-9)
    assert harness.laplace_kl_by_quadrature(0, 1, 0, 2) == pytest.approx(np.log(2) - 0.5, abs=1e-9)


# --- CLI ------------------------------------------------------------------


def test_cli_zero_scene_count_is_config_error(tmp_path, capsys):
    assert cli.main(["gen-data", "--out-dir", str(tmp_path), "--n-train", "0"]) == 2
    assert "n_train" in capsys.readouterr().err


def test_cli_config_file_overrides_flags(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"n_test": 7, "noise": {"pos_scale_b": 0.5}, "pred_train": {"epochs": 3}}))
    args = cli.build_parser().parse_args(["eval", "--n-test", "2", "--pos-scale-b", "0.1", "--config", str(path)])
    cfg = cli.config_from_args(args)
    assert cfg.n_test == 7 and cfg.noise.pos_scale_b == 0.5 and cfg.pred_train.epochs == 3
    assert cfg.pred_train.learning_rate == PredictorConfig().learning_rate


def test_cli_missing_dataset_exit_code(tmp_path, capsys):
    assert cli.main(["ablate", "--out-dir", str(tmp_path / "nothing")] + TINY) == 1
    assert "gen-data" in capsys.readouterr().err


def test_cli_gen_data_twice_same_checksums(tmp_path, capsys):
    for sub in ("a", "b"):
        assert cli.main(["gen-data", "--out-dir", str(tmp_path / sub), "--master-seed", "5"] + TINY) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[:3] == out[3:]


def test_cli_verify_exit_codes():
    assert cli.main(["verify", "--inject-kl-sign-bug"]) == 1

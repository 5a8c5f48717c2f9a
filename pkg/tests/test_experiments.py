"""Experiment orchestration: config validation, determinism, layouts."""

import json

import numpy as np
import pytest

from sparseica.datagen import ring_mask
from sparseica.experiments import (
    ConfigError,
    ExperimentConfig,
    load_summary,
    run_ablation,
    run_check,
    run_linear,
    run_mpa_audit,
    run_stability,
    validate_config,
)

TINY_TRAIN = dict(epochs=2, batch_size=100, learning_rate=0.01, lam=0.05)


def tiny_config(**kw):
    base = dict(kind="ablation", variants=("Base",), n_list=(3,), trials=1,
                seed=0, k=400, estimator_layers=4, estimator_hidden=6,
                epochs=2, batch_size=100, lam=0.05, workers=1)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfigValidation:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            ExperimentConfig(kind="nope")

    def test_duplicate_n_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            ExperimentConfig(kind="stability", n_list=(3, 3))

    def test_unknown_variant(self):
        with pytest.raises(ConfigError, match="variant"):
            ExperimentConfig(kind="ablation", variants=("XX",))

    def test_document_validation_paths(self):
        with pytest.raises(ConfigError, match="missing required"):
            validate_config({})
        with pytest.raises(ConfigError, match="unknown field: frobnicate"):
            validate_config({"kind": "ablation", "frobnicate": 1})
        with pytest.raises(ConfigError, match="train.epochs"):
            validate_config({"kind": "ablation", "train": {"epochs": "many"}})
        with pytest.raises(ConfigError, match=r"n_list\[0\]"):
            validate_config({"kind": "ablation", "n_list": [1]})

    def test_hash_stable_under_key_reordering(self):
        doc_a = {"kind": "ablation", "trials": 2, "seed": 5,
                 "train": {"epochs": 3, "lam": 0.1}}
        doc_b = {"train": {"lam": 0.1, "epochs": 3}, "seed": 5,
                 "trials": 2, "kind": "ablation"}
        assert ExperimentConfig.from_dict(doc_a).hash() == \
            ExperimentConfig.from_dict(doc_b).hash()

    def test_round_trip_through_dict(self):
        cfg = tiny_config()
        again = ExperimentConfig.from_dict(
            {k: v for k, v in cfg.to_dict().items()})
        assert again == cfg


class TestAblation:
    def test_single_variant_single_trial(self, tmp_path):
        record = run_ablation(tiny_config(), out_dir=tmp_path)
        assert len(record.trials) == 1
        trial = record.trials[0]
        assert trial["error"] is None
        assert 0.0 <= trial["mcc"] <= 1.0
        assert record.summary["Base"]["mean_mcc"] == pytest.approx(trial["mcc"])
        tdir = tmp_path / "ablation" / "Base" / "trial-0"
        assert (tdir / "meta.json").exists()
        assert (tdir / "history.csv").exists()
        assert (tdir / "eval.json").exists()
        assert (tmp_path / "ablation" / "summary.json").exists()

    def test_trial_failure_is_isolated(self, tmp_path):
        # batch size larger than the dataset: the trial fails, the run lives
        cfg = tiny_config(k=50, batch_size=200)
        record = run_ablation(cfg, out_dir=tmp_path)
        trial = record.trials[0]
        assert trial["mcc"] is None
        assert "batch" in trial["error"]
        assert record.summary["Base"]["failures"] == 1

    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = tiny_config(variants=("SS",), trials=2)
        run_ablation(cfg, out_dir=tmp_path / "a")
        run_ablation(cfg, out_dir=tmp_path / "b")
        for rel in ("ablation/summary.json", "ablation/SS/trial-0/meta.json",
                    "ablation/SS/trial-1/history.csv",
                    "ablation/SS/trial-0/eval.json"):
            assert (tmp_path / "a" / rel).read_bytes() == \
                (tmp_path / "b" / rel).read_bytes()

    def test_ss_trial_carries_condition_reports(self, tmp_path):
        record = run_ablation(tiny_config(variants=("SS",)), out_dir=tmp_path)
        conditions = record.trials[0]["conditions"]
        names = {c["condition"] for c in conditions}
        assert names == {"intersection", "span"}
        assert all(c["verdict"] for c in conditions)

    def test_summary_self_consistency_on_load(self, tmp_path):
        cfg = tiny_config(trials=2)
        run_ablation(cfg, out_dir=tmp_path)
        doc = load_summary(tmp_path, "ablation")
        assert doc["config_hash"] == cfg.hash()
        corrupted = json.loads((tmp_path / "ablation" / "summary.json").read_text())
        corrupted["summary"]["Base"]["mean_mcc"] = 0.123456
        (tmp_path / "ablation" / "summary.json").write_text(
            json.dumps(corrupted))
        with pytest.raises(ValueError, match="inconsistent"):
            load_summary(tmp_path, "ablation")

    def test_parallel_matches_serial(self, tmp_path):
        cfg_serial = tiny_config(trials=2, workers=1)
        cfg_par = tiny_config(trials=2, workers=2)
        a = run_ablation(cfg_serial, out_dir=None)
        b = run_ablation(cfg_par, out_dir=None)
        assert [t["mcc"] for t in a.trials] == [t["mcc"] for t in b.trials]


class TestStability:
    def test_requires_two_n_values(self):
        with pytest.raises(ConfigError, match="two n"):
            run_stability(tiny_config(kind="stability", n_list=(3,)))

    def test_series_shape_and_fields(self, tmp_path):
        cfg = tiny_config(kind="stability", n_list=(3, 4), trials=1,
                          variants=("Base",))
        record = run_stability(cfg, out_dir=tmp_path)
        entry = record.summary["Base"]
        assert set(entry["per_n"]) == {"3", "4"}
        assert "spread" in entry and "decline" in entry
        assert len(record.trials) == 2


class TestLinear:
    def test_smoke(self, tmp_path):
        cfg = ExperimentConfig(kind="linear", n_list=(3,), m_list=(3, 5),
                               trials=2, seed=0, k=4000, workers=1)
        record = run_linear(cfg, out_dir=tmp_path)
        assert record.summary["count"] == 2
        for trial in record.trials:
            assert trial["error"] is None
            assert trial["distance"] < 0.1
            verdicts = [c["verdict"] for c in trial["conditions"]]
            assert all(verdicts)


class TestMpaAudit:
    def test_densification_and_invariance(self, tmp_path):
        cfg = ExperimentConfig(kind="mpa-audit", n_list=(3,), m_list=(6,),
                               rotations=25, k=4000, seed=1)
        record = run_mpa_audit(cfg, out_dir=tmp_path)
        assert record.summary["densified_fraction"] >= 0.9
        assert record.summary["max_ks_over_rotations"] < 0.05
        assert record.summary["condition"]["verdict"]
        assert len(record.trials) == 25

    def test_structure_precondition_enforced(self):
        from sparseica.datagen import StructureMask
        dense = StructureMask(np.ones((4, 3)))
        cfg = ExperimentConfig(kind="mpa-audit", n_list=(3,), rotations=5,
                               k=500, seed=2)
        with pytest.raises(ConfigError, match="undercomplete"):
            run_mpa_audit(cfg, mask=dense)


class TestRunCheck:
    def test_pattern_json_input(self, tmp_path):
        mask = ring_mask(4, seed=0)
        path = tmp_path / "mask.json"
        path.write_text(mask.pattern().to_json())
        reports = run_check(path)
        by_name = {r.condition: r for r in reports}
        assert by_name["intersection"].verdict

    def test_csv_mask_input(self, tmp_path):
        path = tmp_path / "mask.csv"
        np.savetxt(path, np.eye(3), fmt="%d", delimiter=",")
        reports = run_check(path)
        assert all(r.verdict for r in reports)

    def test_all_ones_fails_with_counterexample(self, tmp_path):
        path = tmp_path / "mask.csv"
        np.savetxt(path, np.ones((3, 3)), fmt="%d", delimiter=",")
        reports = run_check(path)
        inter = next(r for r in reports if r.condition == "intersection")
        assert not inter.verdict
        assert any(not d["holds"] for d in inter.details)

    def test_dataset_directory_input(self, tmp_path):
        from sparseica.datagen import generate_dataset
        ds = generate_dataset("ss", n=3, k=100, seed=3)
        ds.save(tmp_path / "d")
        reports = run_check(tmp_path / "d")
        assert any(r.condition == "intersection" and r.verdict
                   for r in reports)

    def test_missing_input(self):
        with pytest.raises(FileNotFoundError):
            run_check("/nonexistent/path")

    def test_garbage_input(self, tmp_path):
        path = tmp_path / "garbage.txt"
        path.write_text("not a mask\nat all")
        with pytest.raises(ValueError, match="neither"):
            run_check(path)

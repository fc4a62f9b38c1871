"""Trainer tests: config registry, overfit capability, determinism, early
stopping, checkpoint restore, and multi-seed aggregation."""

import json

import pytest

from msa_forge.errors import EmptySplitError, ModelError, ValidationError
from msa_forge.models import load_checkpoint, read_named_arrays
from msa_forge.synthetic import make_synthetic_bundle
from msa_forge.trainer import (
    DEFAULT_SEEDS,
    get_config_regression,
    multi_seed_run,
    train_run,
)


def small_bundle(n_train=10, n_valid=4, n_test=4, seed=0):
    return make_synthetic_bundle(n_train=n_train, n_valid=n_valid, n_test=n_test,
                                 seq_len=6, feature_dim=4, seed=seed)


def fast_config(model="lf_dnn", **overrides):
    config = get_config_regression(model, "synthetic")
    config["dropout"] = 0.0
    config["max_epochs"] = overrides.pop("max_epochs", 30)
    config["patience"] = overrides.pop("patience", 30)
    config["hidden_dims"] = {"text": 8, "audio": 8, "vision": 8}
    config["post_fusion_dim"] = 8
    config["batch_size"] = 8
    for key, val in overrides.items():
        config[key] = val
    return config


class TestConfigRegistry:
    def test_tfn_config_contains_post_fusion_dim(self):
        config = get_config_regression("tfn", "mosi")
        assert config["post_fusion_dim"] == 32

    def test_default_seeds(self):
        config = get_config_regression("lf_dnn", "mosi")
        assert config.seeds == [1111, 1112, 1113, 1114, 1115]
        assert tuple(config.seeds) == DEFAULT_SEEDS

    def test_override_then_reread(self):
        config = get_config_regression("tfn", "mosi")
        config["post_fusion_dim"] = 64
        assert config["post_fusion_dim"] == 64
        config["optimizer.lr"] = 0.01
        assert config["lr"] == 0.01

    def test_unknown_model_rejected(self):
        with pytest.raises(ModelError):
            get_config_regression("word2vec_fusion", "mosi")
        with pytest.raises(ModelError, match="pretrained backbone"):
            get_config_regression("bert_mag", "mosi")

    def test_unknown_key_rejected(self):
        config = get_config_regression("tfn", "mosi")
        with pytest.raises(KeyError):
            config["warp_speed"]

    def test_validation_catches_bad_values(self):
        config = get_config_regression("tfn", "mosi")
        config["optimizer.lr"] = -1.0
        with pytest.raises(ValidationError):
            config.validate()
        config = get_config_regression("tfn", "mosi")
        config.seeds = []
        with pytest.raises(ValidationError):
            config.validate()


class TestTrainRun:
    def test_overfits_tiny_dataset(self, tmp_path):
        # valid split mirrors the 10 train samples so best-checkpoint
        # selection tracks train MAE: a pure overfit-capability check
        bundle = make_synthetic_bundle(n_train=10, n_valid=10, n_test=4,
                                       seq_len=6, feature_dim=4, seed=0)
        for m, block in bundle.blocks.items():
            block.data[10:20] = block.data[0:10]
            block.lengths[10:20] = block.lengths[0:10]
        for i in range(10):
            src, dst = bundle.manifest.samples[i], bundle.manifest.samples[10 + i]
            dst.label_m, dst.label_t = src.label_m, src.label_t
            dst.label_a, dst.label_v = src.label_a, src.label_v
        config = fast_config("lf_dnn", max_epochs=200, patience=200)
        config["optimizer.lr"] = 5e-3
        result = train_run(config, bundle, seed=1111, run_dir=tmp_path / "run")
        from msa_forge.bundle import split_view
        from msa_forge.trainer import _evaluate
        model, _ = load_checkpoint(result.checkpoint_path)
        metrics, _, _ = _evaluate(model, split_view(bundle, "train"), config.batch_size)
        assert metrics.mae < 0.05

    def test_same_seed_identical_histories(self):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=8)
        a = train_run(config, bundle, seed=1111)
        b = train_run(config, bundle, seed=1111)
        assert len(a.history) == len(b.history)
        for ra, rb in zip(a.history, b.history):
            assert ra.to_json() == rb.to_json()

    def test_different_seeds_differ(self):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=5)
        a = train_run(config, bundle, seed=1111)
        b = train_run(config, bundle, seed=2222)
        assert any(ra.to_json() != rb.to_json() for ra, rb in zip(a.history, b.history))

    def test_early_stopping_with_patience_one(self):
        # lr = 0 means no parameter ever changes, so validation MAE can
        # never improve after the first epoch
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=50, patience=1)
        config["optimizer.lr"] = 1e-30
        result = train_run(config, bundle, seed=1111)
        assert result.best_epoch == 1
        assert len(result.history) == 2

    def test_early_stop_bound(self):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=40, patience=3)
        result = train_run(config, bundle, seed=1111)
        assert len(result.history) <= result.best_epoch + config.patience

    def test_run_dir_artifacts(self, tmp_path):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=4)
        result = train_run(config, bundle, seed=1111, run_dir=tmp_path / "run")
        assert (tmp_path / "run" / "config.json").exists()
        assert (tmp_path / "run" / "history.jsonl").exists()
        assert (tmp_path / "run" / "checkpoint" / "params.bin").exists()
        reps = read_named_arrays(tmp_path / "run" / "reps.bin")
        assert "fusion" in reps
        assert reps["fusion"].shape[-2] == 4  # test split size

    def test_checkpoint_restore_reproduces_test_metrics(self, tmp_path):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=6)
        result = train_run(config, bundle, seed=1111, run_dir=tmp_path / "run")
        model, _ = load_checkpoint(result.checkpoint_path)
        from msa_forge.bundle import split_view
        from msa_forge.trainer import _evaluate
        metrics, _, _ = _evaluate(model, split_view(bundle, "test"), config.batch_size)
        assert metrics.mae == result.test_metrics.mae
        assert metrics.acc2 == result.test_metrics.acc2

    def test_missing_split_is_error(self):
        bundle = small_bundle()
        for s in bundle.manifest.samples:
            if s.split == "valid":
                s.split = "train"
        config = fast_config("lf_dnn")
        with pytest.raises(EmptySplitError):
            train_run(config, bundle, seed=1)

    def test_multitask_needs_unimodal_labels(self):
        bundle = make_synthetic_bundle(n_train=8, n_valid=4, n_test=4, seq_len=4,
                                       feature_dim=3, with_unimodal_labels=False)
        config = fast_config("mtfn", max_epochs=2)
        with pytest.raises(ModelError, match="unimodal labels"):
            train_run(config, bundle, seed=1)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_diagnostic_names_epoch(self):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=5)
        config["optimizer.lr"] = 1e30  # blow up immediately
        from msa_forge.errors import TrainingDivergedError
        with pytest.raises(TrainingDivergedError, match="epoch"):
            train_run(config, bundle, seed=1111)


class TestMultiSeed:
    def test_single_seed_mean_is_that_run(self, tmp_path):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=4)
        config.seeds = [1111]
        agg = multi_seed_run(config, bundle, run_dir=tmp_path / "runs")
        assert agg.metrics_mean["acc2"] == agg.per_seed[0].test_metrics.acc2
        assert agg.metrics_std["acc2"] == 0.0

    def test_mean_is_arithmetic_mean(self, tmp_path):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=3)
        config.seeds = [1, 2, 3]
        agg = multi_seed_run(config, bundle, run_dir=tmp_path / "runs")
        vals = [r.test_metrics.acc2 for r in agg.per_seed]
        assert abs(agg.metrics_mean["acc2"] - sum(vals) / 3) < 1e-12

    def test_aggregate_json_written(self, tmp_path):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=3)
        config.seeds = [7, 8]
        agg = multi_seed_run(config, bundle, run_dir=tmp_path / "runs")
        doc = json.loads((tmp_path / "runs" / "aggregate.json").read_text())
        assert doc["model"] == "lf_dnn"
        assert doc["seeds"] == [7, 8]
        assert set(doc["metrics"]) == {"acc2", "f1", "mae", "corr"}
        assert (tmp_path / "runs" / "seed_7" / "history.jsonl").exists()

    def test_rerun_aggregates_identically(self, tmp_path):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=3)
        config.seeds = [5, 6]
        a = multi_seed_run(config, bundle, run_dir=tmp_path / "a")
        b = multi_seed_run(config, bundle, run_dir=tmp_path / "b")
        assert a.metrics_mean == b.metrics_mean
        assert a.metrics_std == b.metrics_std
        for seed in (5, 6):
            ha = (tmp_path / "a" / f"seed_{seed}" / "history.jsonl").read_bytes()
            hb = (tmp_path / "b" / f"seed_{seed}" / "history.jsonl").read_bytes()
            assert ha == hb

    def test_parallel_matches_sequential(self, tmp_path, monkeypatch):
        bundle = small_bundle()
        config = fast_config("lf_dnn", max_epochs=3)
        config.seeds = [1, 2]
        seq = multi_seed_run(config, bundle, run_dir=tmp_path / "seq")
        monkeypatch.setenv("MSA_FORGE_THREADS", "2")
        par = multi_seed_run(config, bundle, run_dir=tmp_path / "par")
        assert seq.metrics_mean == par.metrics_mean
        for seed in (1, 2):
            ha = (tmp_path / "seq" / f"seed_{seed}" / "history.jsonl").read_bytes()
            hb = (tmp_path / "par" / f"seed_{seed}" / "history.jsonl").read_bytes()
            assert ha == hb

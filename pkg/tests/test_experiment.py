import numpy as np
import pytest

from strokecast.config import read_kv
from strokecast.errors import ConfigError
from strokecast.experiment import RunConfig, run_experiment
from strokecast.model import ClinicDNN, ModelConfig, OutcomeNet, build_model
from strokecast.synthetic import SignalSpec, generate_synthetic_cohort
from strokecast.training import TrainConfig

COUNTS = (2, 3, 4, 4, 5, 3, 4)  # 25 patients


def tiny_cohort(tmp_path, seed=0, kind="metadata"):
    return generate_synthetic_cohort(tmp_path / f"cohort{seed}", n=sum(COUNTS),
                                     class_counts=COUNTS,
                                     signal=SignalSpec(kind=kind, label_noise=0.0),
                                     seed=seed, dims=(8, 16, 16))


def tiny_run_config(tmp_path, out=None, **kw):
    base = dict(
        experiment="dichotomised",
        mode="multimodal",
        seed=0,
        model=ModelConfig(conv_channels=(2, 3, 4), image_feature_size=4,
                          metadata_feature_size=2),
        train=TrainConfig(batch_size=8, max_epochs=3, patience=3, lr_init=1e-3,
                          validation_fraction=0.2, augment=False),
    )
    base.update(kw)
    rc = RunConfig(**base)
    rc.pipeline.target_dims = (8, 16, 16)
    if out:
        rc.out_dir = str(out)
    return rc


class TestRunConfig:
    def test_experiment_fixes_class_count(self, tmp_path):
        rc = tiny_run_config(tmp_path, experiment="individual")
        assert rc.resolved_model_config().num_classes == 7
        rc = tiny_run_config(tmp_path, experiment="dichotomised")
        assert rc.resolved_model_config().num_classes == 2

    def test_mode_fixes_metadata_width(self, tmp_path):
        assert tiny_run_config(tmp_path, mode="image_only").resolved_model_config().metadata_dim == 2
        assert tiny_run_config(tmp_path, mode="multimodal").resolved_model_config().metadata_dim == 52

    def test_kv_round_trip(self, tmp_path):
        rc = tiny_run_config(tmp_path, experiment="individual", mode="image_only",
                             attention_enabled=False, seed=5)
        back = RunConfig.from_kv(rc.to_kv())
        assert back.experiment == "individual"
        assert back.mode == "image_only"
        assert back.attention_enabled is False
        assert back.seed == 5
        assert back.model.conv_channels == (2, 3, 4)
        assert back.train.max_epochs == 3
        assert back.pipeline.target_dims == (8, 16, 16)

    def test_invalid_experiment_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny_run_config(tmp_path, experiment="triage").validate()


class TestRunExperiment:
    def test_dichotomised_report_fields(self, tmp_path):
        m = tiny_cohort(tmp_path)
        report, _ = run_experiment(tiny_run_config(tmp_path), manifest=m)
        assert report.auc is not None and report.f1 is not None
        assert report.one_nearest_accuracy is None
        assert report.confusion.shape == (2, 2)
        assert report.confusion.sum() == report.n_samples

    def test_individual_report_fields(self, tmp_path):
        m = tiny_cohort(tmp_path)
        report, _ = run_experiment(tiny_run_config(tmp_path, experiment="individual"),
                                   manifest=m)
        assert report.one_nearest_accuracy is not None
        assert report.auc is None and report.f1 is None
        assert report.confusion.shape == (7, 7)
        assert report.one_nearest_accuracy >= report.accuracy

    def test_metadata_only_builds_clinic_dnn(self, tmp_path):
        cfg = tiny_run_config(tmp_path, mode="metadata_only").resolved_model_config()
        assert isinstance(build_model(cfg, 0), ClinicDNN)
        multi = tiny_run_config(tmp_path).resolved_model_config()
        assert isinstance(build_model(multi, 0), OutcomeNet)

    def test_artifacts_written(self, tmp_path):
        m = tiny_cohort(tmp_path)
        out = tmp_path / "run"
        rc = tiny_run_config(tmp_path, out=out)
        report, artifacts = run_experiment(rc, manifest=m)
        assert set(artifacts) == {"config", "history", "checkpoint", "report"}
        for path in artifacts.values():
            assert path.exists()
        resolved = read_kv(artifacts["config"])
        assert resolved["experiment"] == "dichotomised"
        assert resolved["conv_channels"] == "2,3,4"
        header = artifacts["history"].read_text().splitlines()[0]
        assert header == "epoch,train_loss,val_loss,lr"

    def test_seeded_runs_are_bit_identical(self, tmp_path):
        m1 = tiny_cohort(tmp_path, seed=1)
        m2 = tiny_cohort(tmp_path / "again", seed=1)
        outs = []
        for tag, m in (("a", m1), ("b", m2)):
            out = tmp_path / f"run_{tag}"
            rc = tiny_run_config(tmp_path, out=out, seed=3)
            run_experiment(rc, manifest=m)
            outs.append(out)
        for name in ("report.txt", "history.csv", "model.stkf"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

    def test_missing_split_tags_get_assigned(self, tmp_path):
        m = tiny_cohort(tmp_path)
        for r in m.records:
            r.split = ""
        report, _ = run_experiment(tiny_run_config(tmp_path), manifest=m)
        assert report.n_samples > 0


class TestAblationPair:
    def test_attention_toggle_shrinks_model_and_keeps_report_shape(self, tmp_path):
        m = tiny_cohort(tmp_path)
        rc_on = tiny_run_config(tmp_path, attention_enabled=True)
        rc_off = tiny_run_config(tmp_path, attention_enabled=False)
        n_on = build_model(rc_on.resolved_model_config(), 0).param_count()
        n_off = build_model(rc_off.resolved_model_config(), 0).param_count()
        assert n_off < n_on
        rep_on, _ = run_experiment(rc_on, manifest=m)
        rep_off, _ = run_experiment(rc_off, manifest=m)
        # same metric columns either way
        assert (rep_on.f1 is None) == (rep_off.f1 is None)
        assert (rep_on.auc is None) == (rep_off.auc is None)
        assert rep_on.confusion.shape == rep_off.confusion.shape

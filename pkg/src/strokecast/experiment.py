"""Experiment orchestration: train, evaluate, and write run artifacts.

A run takes a cohort manifest, trains the model its mode calls for, evaluates
on the held-out test split, and writes four artifacts into the output
directory: the resolved config (config.txt), the training history
(history.csv), the best checkpoint (model.stkf), and the metrics report
(report.txt).  Identical seeded runs produce bit-identical artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import write_kv
from .data import CohortManifest, CohortSampleSet, PipelineConfig
from .errors import ConfigError
from .layers import softmax_rows
from .metrics import (
    GOOD,
    MetricsReport,
    accuracy,
    auc,
    confusion_matrix,
    dichotomize_array,
    f1,
    one_nearest_accuracy,
)
from .model import ModelConfig, build_model
from .training import TrainConfig, history_to_csv, train

EXPERIMENTS = ("dichotomised", "individual")


@dataclass
class RunConfig:
    """One experiment run: protocol choice plus component config overrides."""

    experiment: str = "dichotomised"
    mode: str = "multimodal"
    attention_enabled: bool = True
    manifest_path: str = ""
    out_dir: str = ""
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.mode not in ("image_only", "metadata_only", "multimodal"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def resolved_model_config(self) -> ModelConfig:
        cfg = replace(
            self.model,
            num_classes=2 if self.experiment == "dichotomised" else 7,
            metadata_dim=2 if self.mode == "image_only" else 52,
            attention_enabled=self.attention_enabled,
            mode=self.mode,
        )
        cfg.validate()
        return cfg

    def to_kv(self) -> dict[str, str]:
        kv = {
            "experiment": self.experiment,
            "mode": self.mode,
            "attention_enabled": str(self.attention_enabled),
            "manifest": self.manifest_path,
            "out_dir": self.out_dir,
            "seed": str(self.seed),
        }
        for k, v in self.model.to_kv().items():
            if k not in ("mode", "attention_enabled", "num_classes", "metadata_dim"):
                kv[k] = v
        for k, v in self.train.to_kv().items():
            if k != "seed":
                kv[k] = v
        p = self.pipeline
        kv["target_spacing"] = ",".join(repr(float(s)) for s in p.target_spacing)
        kv["hu_window"] = ",".join(repr(float(s)) for s in p.hu_window)
        kv["target_dims"] = ",".join(str(int(s)) for s in p.target_dims)
        return kv

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "RunConfig":
        rc = cls(
            experiment=kv.get("experiment", "dichotomised"),
            mode=kv.get("mode", "multimodal"),
            attention_enabled=kv.get("attention_enabled", "True").lower() in ("true", "1", "yes"),
            manifest_path=kv.get("manifest", ""),
            out_dir=kv.get("out_dir", ""),
            seed=int(kv.get("seed", "0")),
            model=ModelConfig.from_kv(kv),
            train=TrainConfig.from_kv(kv),
        )
        pipe = PipelineConfig()
        if "target_spacing" in kv:
            pipe.target_spacing = tuple(float(x) for x in kv["target_spacing"].split(","))
        if "hu_window" in kv:
            pipe.hu_window = tuple(float(x) for x in kv["hu_window"].split(","))
        if "target_dims" in kv:
            pipe.target_dims = tuple(int(x) for x in kv["target_dims"].split(","))
        rc.pipeline = pipe
        rc.train.seed = rc.seed
        rc.validate()
        return rc


def _labels_for(records, experiment: str) -> np.ndarray:
    mrs = np.array([r.mrs for r in records], dtype=np.int64)
    return dichotomize_array(mrs) if experiment == "dichotomised" else mrs


def predict_probs(model, dataset: CohortSampleSet, batch_size: int = 8) -> np.ndarray:
    """Eval-mode class probabilities for every sample in the set."""
    chunks = []
    for start in range(0, len(dataset), batch_size):
        rows = range(start, min(start + batch_size, len(dataset)))
        samples = [dataset.sample(i, epoch=0, training=False) for i in rows]
        vols = [s[0] for s in samples]
        x = None if vols[0] is None else np.concatenate(vols, axis=0)
        meta = np.concatenate([s[1] for s in samples], axis=0)
        chunks.append(softmax_rows(model.forward_logits(x, meta, training=False)))
    return np.concatenate(chunks, axis=0)


def evaluate(probs: np.ndarray, labels: np.ndarray, experiment: str, mode: str) -> MetricsReport:
    """Score predictions: dichotomised runs report F1/AUC, individual runs
    report 1-nearest accuracy."""
    pred = probs.argmax(axis=1)
    num_classes = probs.shape[1]
    report = MetricsReport(
        experiment=experiment,
        mode=mode,
        accuracy=accuracy(pred, labels),
        confusion=confusion_matrix(pred, labels, num_classes),
        n_samples=len(labels),
    )
    if experiment == "dichotomised":
        report.f1 = f1(pred, labels, positive_class=GOOD)
        report.auc = auc(probs[:, GOOD], labels == GOOD)
    else:
        report.one_nearest_accuracy = one_nearest_accuracy(pred, labels)
    return report


def run_experiment(rc: RunConfig, manifest: CohortManifest | None = None
                   ) -> tuple[MetricsReport, dict[str, Path]]:
    """Train per the run config, evaluate on the test split, write artifacts."""
    rc.validate()
    if manifest is None:
        manifest = CohortManifest.load(rc.manifest_path)
    if not any(r.split == "train" for r in manifest.records):
        from .data import split as split_cohort
        split_cohort(manifest, seed=rc.seed)
    if not manifest.stats and not manifest.levels and manifest.feature_names:
        manifest.compute_stats()

    model_config = rc.resolved_model_config()
    train_config = replace(rc.train, seed=rc.seed)

    train_records = [r for r in manifest.records if r.split == "train"]
    test_records = [r for r in manifest.records if r.split == "test"]
    if not train_records or not test_records:
        raise ConfigError("cohort must contain both train and test rows")

    load_volumes = rc.mode != "metadata_only"
    train_set = CohortSampleSet(manifest, train_records, rc.mode, rc.pipeline, rc.seed,
                                labels=_labels_for(train_records, rc.experiment),
                                load_volumes=load_volumes)
    test_set = CohortSampleSet(manifest, test_records, rc.mode, rc.pipeline, rc.seed,
                               labels=_labels_for(test_records, rc.experiment),
                               load_volumes=load_volumes)

    model = build_model(model_config, seed=rc.seed)
    best_params, history = train(model, train_set, train_config)
    model.set_params(best_params)

    probs = predict_probs(model, test_set, batch_size=train_config.batch_size)
    report = evaluate(probs, test_set.labels, rc.experiment, rc.mode)

    artifacts: dict[str, Path] = {}
    if rc.out_dir:
        out = Path(rc.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        artifacts["config"] = out / "config.txt"
        write_kv(artifacts["config"], rc.to_kv())
        artifacts["history"] = out / "history.csv"
        artifacts["history"].write_text(history_to_csv(history))
        artifacts["checkpoint"] = out / "model.stkf"
        save_checkpoint(model.param_dict(), model_config, artifacts["checkpoint"])
        artifacts["report"] = out / "report.txt"
        artifacts["report"].write_text(report.to_text())
    return report, artifacts

"""strokecast: multimodal CT + clinical-metadata outcome prediction.

A from-scratch, gradient-checked stack: dense tensor core, 3D conv layers
with channel/spatial attention, focal-loss training, CT preprocessing, and a
planted-signal synthetic cohort harness for end-to-end verification.
"""

from .data import (
    AugmentConfig,
    CohortManifest,
    PatientRecord,
    PipelineConfig,
    Volume,
    augment,
    clip_hu,
    crop_or_pad,
    encode_metadata,
    normalize,
    preprocess_volume,
    read_volume,
    resample,
    split,
    write_volume,
)
from .experiment import RunConfig, evaluate, run_experiment
from .metrics import (
    MetricsReport,
    accuracy,
    auc,
    confusion_matrix,
    dichotomize,
    f1,
    one_nearest_accuracy,
)
from .model import ClinicDNN, ModelConfig, OutcomeNet, build_model, predict
from .synthetic import MRCLEAN_CLASS_COUNTS, SignalSpec, generate_synthetic_cohort
from .tensor import Tensor, elementwise, matmul, reduce
from .training import (
    SGDMomentum,
    TrainConfig,
    cosine_lr,
    default_alpha,
    focal_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "ClinicDNN", "CohortManifest", "MetricsReport", "ModelConfig",
    "MRCLEAN_CLASS_COUNTS", "OutcomeNet", "PatientRecord", "PipelineConfig", "RunConfig",
    "SGDMomentum", "SignalSpec", "Tensor", "TrainConfig", "Volume",
    "accuracy", "auc", "augment", "build_model", "clip_hu", "confusion_matrix",
    "cosine_lr", "crop_or_pad", "default_alpha", "dichotomize", "elementwise",
    "encode_metadata", "evaluate", "f1", "focal_loss", "generate_synthetic_cohort",
    "matmul", "normalize", "one_nearest_accuracy", "predict", "preprocess_volume",
    "read_volume", "reduce", "resample", "run_experiment", "split", "train",
    "write_volume",
]

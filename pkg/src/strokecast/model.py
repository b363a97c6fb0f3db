"""Model assembly: the attention CNN for volumes plus the metadata-only DNN.

The volume network runs three strided conv blocks (conv -> instance norm ->
leaky relu), recalibrates the final feature maps with channel and spatial
attention gates added residually, pools them globally, and fuses the pooled
image vector with an encoded metadata vector through parallel FC+ReLU
branches whose outputs are concatenated and classified.

The metadata-only network is a two-layer DNN (hidden width 128) with dropout
after the first layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError
from .layers import (
    Activation,
    ChannelSE,
    Conv3d,
    Dropout,
    GlobalAvgPool,
    InstanceNorm3d,
    Linear,
    SpatialSE,
    softmax_rows,
)
from .tensor import Tensor, as_array

MODES = ("image_only", "metadata_only", "multimodal")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults give the full-size network."""

    conv_channels: tuple[int, int, int] = (16, 32, 64)
    block_strides: tuple[tuple[int, int, int], ...] = ((2, 2, 2), (2, 2, 2), (1, 1, 1))
    image_feature_size: int = 64   # J
    metadata_feature_size: int = 32  # L
    metadata_dim: int = 52         # V
    num_classes: int = 2           # C
    attention_enabled: bool = True
    se_ratio: int = 2
    dropout_rate: float = 0.5
    leaky_slope: float = 0.01
    clinic_hidden: int = 128
    mode: str = "multimodal"

    def validate(self) -> None:
        problems = []
        if self.metadata_feature_size > self.image_feature_size:
            problems.append(
                f"metadata_feature_size {self.metadata_feature_size} exceeds "
                f"image_feature_size {self.image_feature_size}"
            )
        if self.num_classes not in (2, 7):
            problems.append(f"num_classes must be 2 or 7, got {self.num_classes}")
        if self.metadata_dim not in (2, 52):
            problems.append(f"metadata_dim must be 2 or 52, got {self.metadata_dim}")
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.conv_channels) != 3 or any(c < 1 for c in self.conv_channels):
            problems.append(f"conv_channels needs 3 positive ints, got {self.conv_channels}")
        if len(self.block_strides) != 3:
            problems.append(f"block_strides needs 3 stride triples, got {self.block_strides}")
        if self.se_ratio < 1:
            problems.append(f"se_ratio must be >= 1, got {self.se_ratio}")
        if not 0.0 <= self.dropout_rate < 1.0:
            problems.append(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "block_strides":
                v = ";".join(",".join(str(i) for i in s) for s in v)
            elif isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            out[f.name] = str(v)
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            if f.name == "conv_channels":
                kwargs[f.name] = tuple(int(x) for x in raw.split(","))
            elif f.name == "block_strides":
                kwargs[f.name] = tuple(tuple(int(x) for x in s.split(",")) for s in raw.split(";"))
            elif f.name in ("attention_enabled",):
                kwargs[f.name] = raw.strip().lower() in ("true", "1", "yes")
            elif f.name in ("mode",):
                kwargs[f.name] = raw.strip()
            elif f.name in ("dropout_rate", "leaky_slope"):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


class _NetBase:
    """Shared naming/iteration plumbing for both networks."""

    layers: dict[str, object]
    num_classes: int

    def named_parameters(self):
        for lname, layer in self.layers.items():
            for pname, arr in layer.params.items():
                yield f"{lname}.{pname}", arr

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.named_parameters())

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.param_dict()
        missing = sorted(set(own) - set(params))
        extra = sorted(set(params) - set(own))
        if missing or extra:
            raise ConfigError(
                f"parameter set mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
            )
        for lname, layer in self.layers.items():
            for pname in layer.params:
                src = np.asarray(params[f"{lname}.{pname}"], dtype=np.float64)
                if src.shape != layer.params[pname].shape:
                    raise ConfigError(
                        f"shape mismatch for {lname}.{pname}: "
                        f"{src.shape} vs {layer.params[pname].shape}"
                    )
                layer.params[pname] = src.copy()


class OutcomeNet(_NetBase):
    """Volume encoder + metadata fusion + classification head."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        config.validate()
        if config.mode == "metadata_only":
            raise ConfigError("metadata_only mode uses ClinicDNN, not OutcomeNet")
        self.config = config
        self.num_classes = config.num_classes
        c1, c2, c3 = config.conv_channels
        j, ell = config.image_feature_size, config.metadata_feature_size

        layers: dict[str, object] = {}
        in_ch = 1
        for b, (out_ch, stride) in enumerate(zip(config.conv_channels, config.block_strides), start=1):
            layers[f"conv{b}"] = Conv3d(in_ch, out_ch, 3, stride=stride, padding=(1, 1, 1), rng=rng)
            layers[f"norm{b}"] = InstanceNorm3d(out_ch)
            layers[f"act{b}"] = Activation("leaky_relu", config.leaky_slope)
            in_ch = out_ch
        if config.attention_enabled:
            layers["cse"] = ChannelSE(c3, config.se_ratio, rng=rng)
            layers["sse"] = SpatialSE(c3, rng=rng)
        layers["gap"] = GlobalAvgPool()
        layers["fc_image"] = Linear(c3, j, rng=rng)
        layers["act_image"] = Activation("relu")
        layers["fc_meta"] = Linear(config.metadata_dim, ell, rng=rng)
        layers["act_meta"] = Activation("relu")
        layers["head"] = Linear(j + ell, config.num_classes, rng=rng)
        self.layers = layers

    # -- forward pieces -------------------------------------------------

    def encode_image(self, x) -> np.ndarray:
        """Conv blocks -> optional attention residual -> global pooling."""
        h = as_array(x)
        if h.ndim != 5 or h.shape[1] != 1:
            raise ShapeError(f"expected a (N,1,D,H,W) volume batch, got {h.shape}")
        for b in range(1, 4):
            try:
                h = self.layers[f"conv{b}"].forward(h)
                h = self.layers[f"norm{b}"].forward(h)
            except (ShapeError, DegenerateInputError) as e:
                raise ShapeError(f"block {b}: spatial dims collapsed ({e})") from e
            h = self.layers[f"act{b}"].forward(h)
        if self.config.attention_enabled:
            h = h + self.layers["cse"].forward(h) + self.layers["sse"].forward(h)
        return self.layers["gap"].forward(h)

    def fuse(self, img_feat, meta) -> np.ndarray:
        fi = self.layers["act_image"].forward(self.layers["fc_image"].forward(img_feat))
        fm = self.layers["act_meta"].forward(self.layers["fc_meta"].forward(meta))
        return np.concatenate([fi, fm], axis=1)

    def forward_logits(self, x, meta, training: bool = False,
                       rng: np.random.Generator | None = None) -> np.ndarray:
        meta = as_array(meta)
        if meta.ndim != 2 or meta.shape[1] != self.config.metadata_dim:
            raise ShapeError(
                f"metadata width {meta.shape} does not match config V={self.config.metadata_dim}"
            )
        fused = self.fuse(self.encode_image(x), meta)
        return self.layers["head"].forward(fused)

    # -- backward --------------------------------------------------------

    def backward(self, grad_logits) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}

        def take(lname: str, g):
            bundle = self.layers[lname].backward(g)
            for pname, arr in bundle.param_grads.items():
                grads[f"{lname}.{pname}"] = arr
            return bundle.grad_input

        j = self.config.image_feature_size
        gz = take("head", as_array(grad_logits))
        gfi, gfm = gz[:, :j], gz[:, j:]
        take("fc_meta", take("act_meta", gfm))
        gg = take("fc_image", take("act_image", gfi))
        gf = take("gap", gg)
        if self.config.attention_enabled:
            gh = gf + take("cse", gf) + take("sse", gf)
        else:
            gh = gf
        for b in (3, 2, 1):
            gh = take(f"conv{b}", take(f"norm{b}", take(f"act{b}", gh)))
        return grads


class ClinicDNN(_NetBase):
    """Two FC layers (hidden 128) with dropout after the first."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.num_classes = config.num_classes
        self.layers = {
            "fc1": Linear(config.metadata_dim, config.clinic_hidden, rng=rng),
            "act1": Activation("relu"),
            "drop": Dropout(config.dropout_rate),
            "fc2": Linear(config.clinic_hidden, config.num_classes, rng=rng),
        }

    def forward_logits(self, x, meta, training: bool = False,
                       rng: np.random.Generator | None = None) -> np.ndarray:
        h = self.layers["act1"].forward(self.layers["fc1"].forward(as_array(meta)))
        h = self.layers["drop"].forward(h, training=training, rng=rng)
        return self.layers["fc2"].forward(h)

    def backward(self, grad_logits) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        g = as_array(grad_logits)
        for lname in ("fc2", "drop", "act1", "fc1"):
            bundle = self.layers[lname].backward(g)
            for pname, arr in bundle.param_grads.items():
                grads[f"{lname}.{pname}"] = arr
            g = bundle.grad_input
        return grads


def build_model(config: ModelConfig, seed: int = 0):
    """Construct and He-initialize the network the config's mode calls for.

    Deterministic: a fixed seed yields bit-identical parameters.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    if config.mode == "metadata_only":
        return ClinicDNN(config, rng)
    return OutcomeNet(config, rng)


def predict(model, x, meta) -> tuple[Tensor, np.ndarray]:
    """Class probabilities and the predicted outcome score per sample.

    Ties in the probability row resolve to the lowest class index.
    """
    logits = model.forward_logits(x, meta, training=False)
    probs = softmax_rows(logits)
    scores = probs.argmax(axis=1)  # argmax returns the first (lowest) maximizer
    return Tensor._wrap(probs), scores

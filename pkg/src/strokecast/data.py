"""Volume I/O, CT preprocessing, augmentation, metadata encoding, splitting.

The canonical preprocessing order is fixed and asserted at runtime:

    resample -> clip -> crop_or_pad -> (augment, training only) -> normalize

Volumes travel as Hounsfield-unit float arrays in z-major order (D, H, W)
with per-axis spacing in millimetres, z first.  Files use the SVOL binary
layout documented in :func:`write_volume`.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, FileFormatError, ParameterError
from .tensor import Tensor
from .training import _RNG_AUGMENT, derive_rng

PIPELINE_STAGES = ("resample", "clip", "crop_or_pad", "augment", "normalize")

HU_WINDOW = (40.0, 100.0)
TARGET_SPACING_ZYX = (5.0, 1.0, 1.0)   # 1x1 mm in-plane, 5 mm slices
TARGET_DIMS = (32, 192, 192)
PAD_FILL_HU = 40.0  # background fill = clip floor

_SVOL_MAGIC = b"SVOL"
_SVOL_VERSION = 1


@dataclass
class Volume:
    """3D CT scan: voxels in HU, z-major, with (z, y, x) spacing in mm."""

    voxels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float64)
        if self.voxels.ndim != 3 or any(d < 1 for d in self.voxels.shape):
            raise ParameterError(f"volume must be 3D with positive dims, got {self.voxels.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ParameterError(f"spacing must be 3 positive mm values, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


def write_volume(path, volume: Volume) -> None:
    """SVOL: magic, version u32, dims 3xu32 (D,H,W), spacing 3xf32 (z,y,x) mm,
    then D*H*W little-endian f32 voxels in z-major order."""
    d, h, w = volume.dims
    header = _SVOL_MAGIC + struct.pack("<I", _SVOL_VERSION)
    header += struct.pack("<3I", d, h, w)
    header += struct.pack("<3f", *volume.spacing)
    data = volume.voxels.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + data)


def read_volume(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != _SVOL_MAGIC:
        raise FileFormatError(f"{path}: bad magic, not an SVOL file")
    if len(raw) < 32:
        raise FileFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    version, = struct.unpack_from("<I", raw, 4)
    if version != _SVOL_VERSION:
        raise FileFormatError(f"{path}: unsupported SVOL version {version}")
    d, h, w = struct.unpack_from("<3I", raw, 8)
    spacing = struct.unpack_from("<3f", raw, 20)
    expected = 32 + 4 * d * h * w
    if len(raw) != expected:
        raise FileFormatError(f"{path}: expected {expected} bytes for dims {(d, h, w)}, got {len(raw)}")
    voxels = np.frombuffer(raw, dtype="<f4", offset=32).astype(np.float64).reshape(d, h, w)
    return Volume(voxels, spacing)


# -- preprocessing stages -------------------------------------------------

def resample(volume: Volume, target_spacing=TARGET_SPACING_ZYX, trace: list | None = None) -> Volume:
    """Trilinear resample onto the target (z, y, x) voxel spacing.

    New dim per axis = round(old_dim * old_spacing / target_spacing); sampling
    at lattice points is exact, so a volume already at target spacing passes
    through unchanged.
    """
    if any(s <= 0 for s in target_spacing):
        raise ParameterError(f"target spacing must be positive, got {target_spacing}")
    if trace is not None:
        trace.append("resample")
    new_dims = tuple(
        max(1, int(round(dim * old / tgt)))
        for dim, old, tgt in zip(volume.dims, volume.spacing, target_spacing)
    )
    if new_dims == volume.dims and tuple(volume.spacing) == tuple(target_spacing):
        return Volume(volume.voxels.copy(), target_spacing)
    grids = [
        np.arange(n) * (tgt / old)
        for n, old, tgt in zip(new_dims, volume.spacing, target_spacing)
    ]
    coords = np.meshgrid(*grids, indexing="ij")
    out = ndimage.map_coordinates(volume.voxels, np.stack(coords), order=1, mode="nearest")
    return Volume(out, target_spacing)


def clip_hu(volume: Volume, lo: float = HU_WINDOW[0], hi: float = HU_WINDOW[1],
            trace: list | None = None) -> Volume:
    """Window intensities into [lo, hi] HU."""
    if not lo < hi:
        raise ParameterError(f"require lo < hi, got [{lo}, {hi}]")
    if trace is not None:
        trace.append("clip")
    return Volume(np.clip(volume.voxels, lo, hi), volume.spacing)


def crop_or_pad(volume: Volume, target_dims=TARGET_DIMS, fill: float = PAD_FILL_HU,
                trace: list | None = None) -> Volume:
    """Center-crop axes that are too large, pad with `fill` axes that are too
    small; any odd remainder lands on the high-index side."""
    if trace is not None:
        trace.append("crop_or_pad")
    vox = volume.voxels
    for axis, (size, target) in enumerate(zip(vox.shape, target_dims)):
        if size > target:
            lo = (size - target) // 2
            vox = np.take(vox, np.arange(lo, lo + target), axis=axis)
        elif size < target:
            lo = (target - size) // 2
            pad = [(0, 0)] * 3
            pad[axis] = (lo, target - size - lo)
            vox = np.pad(vox, pad, constant_values=fill)
    return Volume(np.ascontiguousarray(vox), volume.spacing)


def normalize(volume: Volume, trace: list | None = None) -> Tensor:
    """Standardize to zero mean, unit std (per volume) -> Tensor (1, D, H, W)."""
    if trace is not None:
        trace.append("normalize")
    vox = volume.voxels
    std = vox.std()
    t = (vox - vox.mean()) / max(std, 1e-8)
    return Tensor._wrap(t[np.newaxis])


# -- augmentation ----------------------------------------------------------

@dataclass
class AugmentConfig:
    """Training-time augmentation: kinds are fixed, magnitudes configurable."""

    flip_prob: float = 0.5
    rotate: bool = True
    max_rotation_deg: float = 10.0
    elastic_prob: float = 0.5
    elastic_sigma: float = 4.0        # smoothing of the displacement noise, voxels
    elastic_max_disp: float = 8.0     # peak in-plane displacement, voxels
    noise_sigma_hu: float = 2.0
    clip: tuple[float, float] = HU_WINDOW
    fill: float = PAD_FILL_HU


def flip_x(volume: Volume) -> Volume:
    return Volume(volume.voxels[:, :, ::-1].copy(), volume.spacing)


def flip_y(volume: Volume) -> Volume:
    return Volume(volume.voxels[:, ::-1, :].copy(), volume.spacing)


def rotate_inplane(volume: Volume, angle_deg: float, fill: float = PAD_FILL_HU) -> Volume:
    """Rotate about the z axis by angle_deg, trilinear, constant fill."""
    vox = volume.voxels
    d, h, w = vox.shape
    theta = math.radians(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    # inverse rotation: sample source coords for each output voxel
    dy, dx = yy - cy, xx - cx
    src_y = cy + math.cos(theta) * dy + math.sin(theta) * dx
    src_x = cx - math.sin(theta) * dy + math.cos(theta) * dx
    zz = np.broadcast_to(np.arange(d, dtype=np.float64)[:, None, None], (d, h, w))
    coords = np.stack([zz, np.broadcast_to(src_y, (d, h, w)), np.broadcast_to(src_x, (d, h, w))])
    out = ndimage.map_coordinates(vox, coords, order=1, mode="constant", cval=fill)
    return Volume(out, volume.spacing)


def elastic_deform(volume: Volume, rng: np.random.Generator,
                   sigma: float = 4.0, max_disp: float = 8.0,
                   fill: float = PAD_FILL_HU) -> Volume:
    """In-plane elastic warp: smoothed uniform noise scaled to a peak
    displacement of `max_disp` voxels.  Through-plane displacement is zero."""
    vox = volume.voxels
    d, h, w = vox.shape
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(d, h, w)), sigma=(0, sigma, sigma))
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(d, h, w)), sigma=(0, sigma, sigma))
    mag = np.sqrt(dy ** 2 + dx ** 2).max()
    if mag > 0:
        scale = max_disp / mag
        dy, dx = dy * scale, dx * scale
    zz, yy, xx = np.meshgrid(np.arange(d, dtype=np.float64),
                             np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    coords = np.stack([zz, yy + dy, xx + dx])
    out = ndimage.map_coordinates(vox, coords, order=1, mode="constant", cval=fill)
    return Volume(out, volume.spacing)


def augment(volume: Volume, rng: np.random.Generator,
            config: AugmentConfig | None = None, trace: list | None = None) -> Volume:
    """Random flips, in-plane rotation, elastic warp, additive HU noise.

    Applied post-clip: the result is re-clipped to the HU window, so outputs
    always stay inside it.
    """
    cfg = config or AugmentConfig()
    if trace is not None:
        trace.append("augment")
    v = volume
    if rng.random() < cfg.flip_prob:
        v = flip_x(v)
    if rng.random() < cfg.flip_prob:
        v = flip_y(v)
    if cfg.rotate:
        angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
        v = rotate_inplane(v, angle, fill=cfg.fill)
    if rng.random() < cfg.elastic_prob:
        v = elastic_deform(v, rng, sigma=cfg.elastic_sigma,
                           max_disp=cfg.elastic_max_disp, fill=cfg.fill)
    noisy = v.voxels + rng.normal(0.0, cfg.noise_sigma_hu, size=v.voxels.shape)
    return Volume(np.clip(noisy, *cfg.clip), v.spacing)


# -- full pipeline ----------------------------------------------------------

@dataclass
class PipelineConfig:
    target_spacing: tuple[float, float, float] = TARGET_SPACING_ZYX
    hu_window: tuple[float, float] = HU_WINDOW
    target_dims: tuple[int, int, int] = TARGET_DIMS
    augment: AugmentConfig = field(default_factory=AugmentConfig)


def preprocess_volume(volume: Volume, config: PipelineConfig | None = None, *,
                      training: bool = False, rng: np.random.Generator | None = None,
                      trace: list | None = None) -> Tensor:
    """Run the full canonical pipeline on one volume.

    Augmentation runs only when `training` is true (and then requires an rng).
    The executed stage sequence is asserted against the canonical order.
    """
    cfg = config or PipelineConfig()
    own_trace = [] if trace is None else trace
    start = len(own_trace)
    v = resample(volume, cfg.target_spacing, trace=own_trace)
    v = clip_hu(v, *cfg.hu_window, trace=own_trace)
    v = crop_or_pad(v, cfg.target_dims, fill=cfg.hu_window[0], trace=own_trace)
    if training:
        if rng is None:
            raise ParameterError("training-mode preprocessing requires a seeded rng")
        v = augment(v, rng, cfg.augment, trace=own_trace)
    t = normalize(v, trace=own_trace)
    expected = [s for s in PIPELINE_STAGES if training or s != "augment"]
    assert own_trace[start:] == expected, f"pipeline order violated: {own_trace[start:]}"
    return t


# -- cohort manifest ---------------------------------------------------------

MISSING = "NA"
_BASE_COLUMNS = ("id", "volume_path", "treatment", "mrs", "split")


@dataclass
class PatientRecord:
    """One cohort row: volume reference, metadata, outcome label, split tag."""

    id: str
    volume_path: str
    treatment: int
    mrs: int
    split: str = ""
    fields: dict[str, float | str | None] = field(default_factory=dict)

    def __post_init__(self):
        if self.treatment not in (0, 1):
            raise ParameterError(f"{self.id}: treatment must be 0 or 1, got {self.treatment}")
        if not 0 <= self.mrs <= 6:
            raise ParameterError(f"{self.id}: outcome score must be 0..6, got {self.mrs}")


@dataclass
class FeatureStats:
    mean: float
    std: float
    median: float


class CohortManifest:
    """Patient table plus the training-split feature statistics.

    Normalization statistics (mean/std/median per continuous feature,
    level sets per categorical feature) come from training rows only, so
    changing the test split never moves them.
    """

    def __init__(self, records: list[PatientRecord], feature_names: list[str],
                 root: Path | str = ".", declared_width: int = 52):
        widths = {len(r.fields) for r in records}
        if len(widths) > 1:
            raise ConfigError(f"inconsistent metadata widths across cohort: {sorted(widths)}")
        self.records = records
        self.feature_names = list(feature_names)
        self.root = Path(root)
        self.declared_width = declared_width
        self.stats: dict[str, FeatureStats] = {}
        self.levels: dict[str, list[str]] = {}
        self.unknown_level_events = 0

    # stats ---------------------------------------------------------------

    def _is_continuous(self, name: str) -> bool:
        for r in self.records:
            v = r.fields.get(name)
            if v is None:
                continue
            try:
                float(v)
            except (TypeError, ValueError):
                return False
        return True

    def compute_stats(self) -> None:
        train_rows = [r for r in self.records if r.split == "train"]
        if not train_rows:
            raise ConfigError("cannot compute feature statistics: no training rows")
        self.stats.clear()
        self.levels.clear()
        for name in self.feature_names:
            if self._is_continuous(name):
                vals = np.array([float(r.fields[name]) for r in train_rows
                                 if r.fields.get(name) is not None])
                if vals.size == 0:
                    vals = np.array([0.0])
                self.stats[name] = FeatureStats(
                    float(vals.mean()), float(vals.std()), float(np.median(vals)))
            else:
                lv = sorted({str(r.fields[name]) for r in train_rows
                             if r.fields.get(name) is not None})
                self.levels[name] = lv

    # bookkeeping -----------------------------------------------------------

    def class_counts(self, split: str | None = None) -> np.ndarray:
        rows = [r for r in self.records if split is None or r.split == split]
        return np.bincount([r.mrs for r in rows], minlength=7)

    def volume_file(self, record: PatientRecord) -> Path:
        return self.root / record.volume_path

    # persistence -----------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(_BASE_COLUMNS) + self.feature_names)
            for r in self.records:
                row = [r.id, r.volume_path, r.treatment, r.mrs, r.split]
                for name in self.feature_names:
                    v = r.fields.get(name)
                    row.append(MISSING if v is None else v)
                writer.writerow(row)

    @classmethod
    def load(cls, path, declared_width: int = 52) -> "CohortManifest":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header[:5]) != _BASE_COLUMNS:
                raise FileFormatError(f"{path}: manifest header must start with {_BASE_COLUMNS}")
            feature_names = header[5:]
            records = []
            for row in reader:
                if not row:
                    continue
                fields_map: dict[str, float | str | None] = {}
                for name, raw in zip(feature_names, row[5:]):
                    if raw == MISSING or raw == "":
                        fields_map[name] = None
                    else:
                        try:
                            fields_map[name] = float(raw)
                        except ValueError:
                            fields_map[name] = raw
                records.append(PatientRecord(row[0], row[1], int(row[2]), int(row[3]),
                                             row[4], fields_map))
        return cls(records, feature_names, root=path.parent, declared_width=declared_width)


# -- metadata encoding --------------------------------------------------------

def encode_metadata(record: PatientRecord, manifest: CohortManifest, mode: str) -> Tensor:
    """Encode one record's metadata as a (1, V) tensor.

    image_only: treatment one-hot only (V = 2).  Otherwise: treatment one-hot,
    then per continuous feature a z-scored value (training statistics; missing
    values imputed with the training median) plus a missing flag, then one-hot
    categorical levels (unknown levels at test time encode to zeros and are
    counted), padded or truncated to the manifest's declared width.
    """
    onehot = [1.0, 0.0] if record.treatment == 0 else [0.0, 1.0]
    if mode == "image_only":
        return Tensor([onehot])
    if not manifest.stats and not manifest.levels and manifest.feature_names:
        raise ConfigError("manifest statistics not computed; call compute_stats() first")
    vec = list(onehot)
    for name in manifest.feature_names:
        if name in manifest.stats:
            st = manifest.stats[name]
            v = record.fields.get(name)
            missing = v is None
            val = st.median if missing else float(v)
            vec.append((val - st.mean) / max(st.std, 1e-8))
            vec.append(1.0 if missing else 0.0)
        else:
            levels = manifest.levels.get(name, [])
            v = record.fields.get(name)
            hot = [0.0] * len(levels)
            if v is not None:
                sv = str(v)
                if sv in levels:
                    hot[levels.index(sv)] = 1.0
                else:
                    manifest.unknown_level_events += 1
            vec.extend(hot)
    width = manifest.declared_width
    if len(vec) < width:
        vec.extend([0.0] * (width - len(vec)))
    return Tensor([vec[:width]])


# -- splitting ---------------------------------------------------------------

def split(manifest: CohortManifest, train_fraction: float = 0.8, seed: int = 0) -> CohortManifest:
    """Stratified train/test tagging, deterministic in the seed.

    Per class, round(train_fraction * count) records go to training; a class
    with a single sample always trains.
    """
    from .training import stratified_indices

    labels = np.array([r.mrs for r in manifest.records])
    if labels.size == 0:
        raise ConfigError("cannot split an empty cohort")
    rng = derive_rng(seed, 0, 99)
    train_idx, test_idx = stratified_indices(labels, train_fraction, rng, lone_to_first=True)
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise ConfigError(
            f"stratified split produced an empty side (train {len(train_idx)}, test {len(test_idx)})"
        )
    for i in train_idx:
        manifest.records[i].split = "train"
    for i in test_idx:
        manifest.records[i].split = "test"
    return manifest


# -- training-facing sample sets ------------------------------------------------

class ArraySampleSet:
    """In-memory sample set: metadata rows (and optional volumes) plus labels."""

    def __init__(self, meta: np.ndarray, labels: np.ndarray, volumes: np.ndarray | None = None):
        self.meta = np.asarray(meta, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.volumes = None if volumes is None else np.asarray(volumes, dtype=np.float64)
        if len(self.meta) != len(self.labels):
            raise ConfigError("meta and labels must have equal length")

    def __len__(self):
        return len(self.labels)

    def sample(self, i: int, *, epoch: int, training: bool):
        x = None if self.volumes is None else self.volumes[i:i + 1]
        return x, self.meta[i:i + 1], int(self.labels[i])


class CohortSampleSet:
    """Loads one split of a cohort as (volume tensor, metadata, label) samples.

    Deterministic augmentation: the per-sample rng stream derives from
    (seed, epoch, sample id), so sample order never changes the result.
    Post-crop volumes are cached; augmentation and normalization re-run per
    epoch for training samples.
    """

    def __init__(self, manifest: CohortManifest, records: list[PatientRecord],
                 mode: str, pipeline: PipelineConfig, seed: int,
                 labels: np.ndarray | None = None, load_volumes: bool = True,
                 cache: bool = True):
        self.manifest = manifest
        self.records = records
        self.mode = mode
        self.pipeline = pipeline
        self.seed = seed
        self.load_volumes = load_volumes
        self.labels = (np.array([r.mrs for r in records], dtype=np.int64)
                       if labels is None else np.asarray(labels, dtype=np.int64))
        self._cache: dict[int, Volume] = {} if cache else None
        self._meta: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.records)

    def _prepared(self, i: int) -> Volume:
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        vol = read_volume(self.manifest.volume_file(self.records[i]))
        v = resample(vol, self.pipeline.target_spacing)
        v = clip_hu(v, *self.pipeline.hu_window)
        v = crop_or_pad(v, self.pipeline.target_dims, fill=self.pipeline.hu_window[0])
        if self._cache is not None:
            self._cache[i] = v
        return v

    def sample(self, i: int, *, epoch: int, training: bool):
        rec = self.records[i]
        if i not in self._meta:
            self._meta[i] = encode_metadata(rec, self.manifest, self.mode).array
        meta = self._meta[i]
        x = None
        if self.load_volumes:
            v = self._prepared(i)
            if training:
                rng = derive_rng(self.seed, epoch, _RNG_AUGMENT, i)
                v = augment(v, rng, self.pipeline.augment)
            x = normalize(v).array[np.newaxis]  # (1, 1, D, H, W)
        return x, meta[np.newaxis] if meta.ndim == 1 else meta, int(self.labels[i])

    def subset(self, indices) -> "CohortSampleSet":
        indices = np.asarray(indices, dtype=np.int64)
        sub = CohortSampleSet(self.manifest, [self.records[i] for i in indices],
                              self.mode, self.pipeline, self.seed,
                              labels=self.labels[indices],
                              load_volumes=self.load_volumes,
                              cache=self._cache is not None)
        return sub

"""Synthetic cohort generator with planted, modality-selectable signal.

Real registry data is private, so verification runs on generated cohorts
whose labels follow a chosen class profile exactly and whose volumes and
metadata carry signal only where the signal spec says so:

    image     - lesion size/contrast track the (latent) outcome
    metadata  - a subset of clinical fields tracks the outcome
    split     - the outcome is split across modalities: each carries the
                latent severity plus an anticorrelated deviation, so either
                alone is noisy but together they reconstruct it
    none      - features are label-independent; any model should score at
                chance

Label noise never changes the recorded labels (the class profile stays
exact); instead each patient's features are generated from a latent outcome
that differs from the recorded one for a configurable fraction of patients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CohortManifest, PatientRecord, Volume, split, write_volume
from .errors import ParameterError
from .training import derive_rng

MRCLEAN_CLASS_COUNTS = (7, 36, 84, 87, 133, 45, 108)  # outcome scores 0..6

_N_CLASSES = 7


@dataclass
class SignalSpec:
    """Which modality carries outcome signal, and how strongly."""

    kind: str = "none"                # image | metadata | split | none
    image_strength: float = 1.0
    metadata_strength: float = 1.0
    split_noise: float = 0.25        # anticorrelated per-modality deviation for kind="split"
    label_noise: float = 0.10        # fraction of patients with a scrambled latent outcome
    n_meta_fields: int = 25          # 2 + 25*(z, flag) fills the declared 52-wide layout
    n_informative: int = 5
    missing_rate: float = 0.02
    treatment_interaction: bool = False

    def validate(self) -> None:
        if self.kind not in ("image", "metadata", "split", "none"):
            raise ParameterError(f"unknown signal kind {self.kind!r}")
        if not 0.0 <= self.label_noise < 1.0:
            raise ParameterError(f"label_noise must be in [0, 1), got {self.label_noise}")
        if not 0 <= self.n_informative <= self.n_meta_fields:
            raise ParameterError("n_informative must not exceed n_meta_fields")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ParameterError(f"missing_rate must be in [0, 1), got {self.missing_rate}")


def _ellipsoid_mask(dims, center, semi_axes) -> np.ndarray:
    zz, yy, xx = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
    return ((zz - center[0]) / semi_axes[0]) ** 2 + \
           ((yy - center[1]) / semi_axes[1]) ** 2 + \
           ((xx - center[2]) / semi_axes[2]) ** 2 <= 1.0


def _lesion_params(severity: float, strength: float, rng: np.random.Generator,
                   dims) -> tuple[np.ndarray, float, float]:
    """Ellipsoid mask plus contrast for a severity in [0, 1].

    Volume fraction grows from ~0.5% to ~10% and contrast from +6 to +26 HU
    as severity rises (scaled by `strength`).
    """
    frac = 0.005 + (0.095 * severity + 0.01 * rng.random()) * strength
    frac = min(max(frac, 0.002), 0.25)
    contrast = (6.0 + 20.0 * severity) * strength + rng.normal(0.0, 1.0)
    # semi-axes from the target volume fraction with mild random anisotropy
    target_voxels = frac * float(np.prod(dims))
    base = (target_voxels / ((4.0 / 3.0) * math.pi)) ** (1.0 / 3.0)
    ratios = rng.uniform(0.7, 1.4, size=3)
    ratios /= ratios.prod() ** (1.0 / 3.0)
    semi = np.maximum(base * ratios, 1.0)
    semi = np.minimum(semi, np.array(dims, dtype=np.float64) / 2.5)
    margin = semi + 1.0
    center = [rng.uniform(m, n - 1 - m) if n - 1 - m > m else (n - 1) / 2.0
              for m, n in zip(margin, dims)]
    return _ellipsoid_mask(dims, center, semi), frac, contrast


def generate_synthetic_cohort(out_dir, n: int, class_counts, signal: SignalSpec,
                              seed: int = 0, dims=(16, 48, 48),
                              spacing=(5.0, 1.0, 1.0),
                              train_fraction: float = 0.8,
                              background_hu: float = 70.0,
                              background_sigma: float = 6.0) -> CohortManifest:
    """Write a cohort (SVOL volumes + manifest.csv) and return its manifest.

    Bit-reproducible from (seed, spec): identical inputs rewrite identical
    files.  Recorded labels realize `class_counts` exactly.
    """
    signal.validate()
    counts = np.asarray(class_counts, dtype=np.int64)
    if counts.ndim != 1 or len(counts) != _N_CLASSES or (counts < 0).any():
        raise ParameterError(f"class_counts must be 7 non-negative ints, got {class_counts}")
    if counts.sum() != n:
        raise ParameterError(f"class counts sum to {counts.sum()}, expected n={n}")

    out_dir = Path(out_dir)
    vol_dir = out_dir / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)

    rng = derive_rng(seed, 7)
    labels = np.repeat(np.arange(_N_CLASSES), counts)
    labels = labels[rng.permutation(n)]

    feature_names = [f"feat{j:02d}" for j in range(signal.n_meta_fields)]
    coefs = 1.0 - 0.08 * np.arange(signal.n_informative)  # fixed informative loadings
    records: list[PatientRecord] = []

    for i in range(n):
        prng = derive_rng(seed, 11, i)
        y = int(labels[i])
        latent = y
        if prng.random() < signal.label_noise:
            latent = int(prng.integers(0, _N_CLASSES))
        t = latent / (_N_CLASSES - 1)

        # per-modality severities
        if signal.kind == "image":
            s_img, s_meta = t, None
        elif signal.kind == "metadata":
            s_img, s_meta = None, t
        elif signal.kind == "split":
            # anticorrelated deviations: the mean of the two severities is t
            e = prng.normal(0.0, signal.split_noise)
            s_img = float(np.clip(t + e, 0.0, 1.0))
            s_meta = float(np.clip(t - e, 0.0, 1.0))
        else:
            s_img = s_meta = None

        vox = prng.normal(background_hu, background_sigma, size=dims)
        lesion_severity = s_img if s_img is not None else prng.random()
        mask, frac, contrast = _lesion_params(lesion_severity, signal.image_strength, prng, dims)
        vox[mask] += contrast

        if signal.treatment_interaction:
            p_treat = 1.0 / (1.0 + math.exp(-(1.5 * (0.5 - t) + 1.5 * (0.5 - frac / 0.1))))
            treatment = int(prng.random() < p_treat)
        else:
            treatment = int(prng.random() < 0.5)

        meta_sev = s_meta if s_meta is not None else prng.random()
        fields: dict[str, float | None] = {}
        for j, name in enumerate(feature_names):
            if j < signal.n_informative:
                shift = coefs[j] * (meta_sev - 0.5) * 2.0 * signal.metadata_strength
                val = shift + prng.normal(0.0, 1.0)
            else:
                val = prng.normal(0.0, 1.0)
            fields[name] = None if prng.random() < signal.missing_rate else float(val)

        pid = f"p{i:04d}"
        rel = f"volumes/{pid}.svol"
        write_volume(vol_dir / f"{pid}.svol", Volume(vox, spacing))
        records.append(PatientRecord(pid, rel, treatment, y, "", fields))

    manifest = CohortManifest(records, feature_names, root=out_dir)
    split(manifest, train_fraction=train_fraction, seed=seed)
    manifest.compute_stats()
    manifest.save(out_dir / "manifest.csv")
    return manifest

"""Command-line surface: synth, preprocess, train, eval, predict, report.

Every command accepts --config (flat key=value file, '#' comments) plus
repeatable --set KEY=VALUE overrides; explicit flags win over both.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import synthetic
from .checkpoint import load_checkpoint
from .config import merge, read_kv
from .data import (
    CohortManifest,
    PipelineConfig,
    clip_hu,
    crop_or_pad,
    encode_metadata,
    read_volume,
    resample,
    write_volume,
)
from .experiment import RunConfig, run_experiment
from .layers import softmax_rows
from .metrics import MetricsReport
from .model import build_model


def _collect_kv(args) -> dict[str, str]:
    kv: dict[str, str] = {}
    if getattr(args, "config", None):
        kv = read_kv(args.config)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, _, v = item.partition("=")
        kv[k.strip()] = v.strip()
    return kv


def _run_config(args, kv: dict[str, str]) -> RunConfig:
    flag_kv = {}
    for name, key in (("manifest", "manifest"), ("out", "out_dir"), ("mode", "mode"),
                      ("experiment", "experiment"), ("seed", "seed")):
        v = getattr(args, name, None)
        if v is not None:
            flag_kv[key] = str(v)
    if getattr(args, "no_attention", False):
        flag_kv["attention_enabled"] = "False"
    return RunConfig.from_kv(merge(kv, flag_kv))


def cmd_synth(args) -> int:
    counts = tuple(int(x) for x in args.class_counts.split(","))
    spec = synthetic.SignalSpec(kind=args.signal, label_noise=args.label_noise)
    manifest = synthetic.generate_synthetic_cohort(
        args.out, n=sum(counts), class_counts=counts, signal=spec, seed=args.seed,
        dims=tuple(int(x) for x in args.dims.split(",")),
    )
    counts_str = ",".join(str(c) for c in manifest.class_counts())
    print(f"wrote cohort of {len(manifest.records)} patients to {args.out} "
          f"(class counts {counts_str})")
    return 0


def cmd_preprocess(args) -> int:
    manifest = CohortManifest.load(args.manifest)
    pipe = PipelineConfig()
    if args.dims:
        pipe.target_dims = tuple(int(x) for x in args.dims.split(","))
    out = Path(args.out)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    for rec in manifest.records:
        v = read_volume(manifest.volume_file(rec))
        v = resample(v, pipe.target_spacing)
        v = clip_hu(v, *pipe.hu_window)
        v = crop_or_pad(v, pipe.target_dims, fill=pipe.hu_window[0])
        write_volume(out / rec.volume_path, v)
    manifest.root = out
    manifest.save(out / "manifest.csv")
    print(f"preprocessed {len(manifest.records)} volumes into {out}")
    return 0


def cmd_train(args) -> int:
    rc = _run_config(args, _collect_kv(args))
    if not rc.manifest_path:
        raise SystemExit("train requires a manifest (--manifest or manifest= in config)")
    report, artifacts = run_experiment(rc)
    print(report.to_text(), end="")
    for name, path in artifacts.items():
        print(f"{name}: {path}")
    return 0


def cmd_eval(args) -> int:
    from .experiment import _labels_for, evaluate, predict_probs
    from .data import CohortSampleSet

    params, model_config = load_checkpoint(args.checkpoint)
    model = build_model(model_config, seed=0)
    model.set_params(params)
    manifest = CohortManifest.load(args.manifest)
    manifest.compute_stats()
    experiment = "dichotomised" if model_config.num_classes == 2 else "individual"
    records = [r for r in manifest.records if r.split == args.split]
    if not records:
        raise SystemExit(f"no records tagged {args.split!r} in {args.manifest}")
    dataset = CohortSampleSet(manifest, records, model_config.mode, PipelineConfig(),
                              seed=0, labels=_labels_for(records, experiment),
                              load_volumes=model_config.mode != "metadata_only")
    dataset.pipeline.target_dims = read_volume(manifest.volume_file(records[0])).dims
    probs = predict_probs(model, dataset)
    report = evaluate(probs, dataset.labels, experiment, model_config.mode)
    print(report.to_text(), end="")
    if args.out:
        Path(args.out).write_text(report.to_text())
    return 0


def cmd_predict(args) -> int:
    params, model_config = load_checkpoint(args.checkpoint)
    model = build_model(model_config, seed=0)
    model.set_params(params)
    manifest = CohortManifest.load(args.manifest)
    manifest.compute_stats()
    by_id = {r.id: r for r in manifest.records}
    ids = args.ids.split(",") if args.ids else list(by_id)
    pipe = PipelineConfig()
    from .data import normalize

    for pid in ids:
        rec = by_id.get(pid)
        if rec is None:
            raise SystemExit(f"unknown patient id {pid!r}")
        meta = encode_metadata(rec, manifest, model_config.mode).array
        x = None
        if model_config.mode != "metadata_only":
            v = read_volume(manifest.volume_file(rec))
            v = resample(v, pipe.target_spacing)
            v = clip_hu(v, *pipe.hu_window)
            v = crop_or_pad(v, v.dims if args.keep_dims else pipe.target_dims,
                            fill=pipe.hu_window[0])
            x = normalize(v).array[np.newaxis]
        probs = softmax_rows(model.forward_logits(x, meta, training=False))[0]
        pred = int(probs.argmax())
        probs_str = ",".join(f"{p:.4f}" for p in probs)
        print(f"{pid}: predicted={pred} probs=[{probs_str}] true={rec.mrs}")
    return 0


def cmd_report(args) -> int:
    report = MetricsReport.from_text(Path(args.report).read_text())
    print(report.to_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strokecast",
        description="Multimodal CT + metadata outcome prediction toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--class-counts", default=",".join(str(c) for c in synthetic.MRCLEAN_CLASS_COUNTS))
    p.add_argument("--signal", default="none", choices=["image", "metadata", "split", "none"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="16,48,48")
    p.add_argument("--label-noise", type=float, default=0.10)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="resample, window and crop cohort volumes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model and evaluate the test split")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--mode", default=None, choices=["image_only", "metadata_only", "multimodal"])
    p.add_argument("--experiment", default=None, choices=["dichotomised", "individual"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-attention", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a cohort split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict outcomes for cohort patients")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ids", default=None, help="comma-separated patient ids (default: all)")
    p.add_argument("--keep-dims", action="store_true",
                   help="skip crop/pad to the canonical grid")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="print a saved metrics report")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

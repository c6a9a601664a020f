"""Command-line entry point.

Subcommands: prepare, synth, train, ablate, infer, eval, track. All file
outputs stay under --out. Exit codes: 0 success, 1 internal failure,
2 input/config error.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, synth
from .config import RunConfig, load_config, save_config
from .errors import ConfigError, LayoutError, MissingAnnotationError, PipelineError
from .io_ctc import (
    normalize_sequence,
    read_image,
    read_label_mask,
    scan_dataset,
    slice_stack,
    write_image,
    write_label_mask,
    write_track_file,
)
from .nnkit import MiniUNet, UNetConfig, load_checkpoint
from .reconstruct import PostParams
from .targetgen import MorphParams, build_tertiary
from .track import MatchParams, track_sequence
from .trainer import (
    find_dataset_roots,
    predict_labels,
    run_ablation,
    run_training,
    split_checkpoint,
)

_SEG_GLOB = "man_seg*"
_MASK_GLOB = "mask*"


def _resolve_seed(args, manifest: dict) -> int:
    if args.seed is not None:
        seed = int(args.seed)
    else:
        seed = secrets.randbits(31)
    manifest["seed"] = seed
    return seed


# ---------------------------------------------------------------------------
# prepare


def _cmd_prepare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    roots = find_dataset_roots(Path(args.data))
    manifest = {"params": vars(args).copy(), "targets": []}
    manifest["params"].pop("func", None)
    total = 0
    for root in roots:
        desc = scan_dataset(root)
        overrides = {
            "erode_iters": args.erode_iters,
            "contact_distance": args.contact,
            "element": args.element,
        }
        if args.dilate_iters is not None:
            overrides["dilate_iters"] = args.dilate_iters
        morph = MorphParams.for_dimensionality(desc.dimensionality, **overrides)
        for seq in desc.sequences:
            paths = seq.gt_paths if args.kind == "GT" else seq.st_paths
            if not paths:
                raise MissingAnnotationError(
                    f"dataset {desc.name} sequence {seq.id} has no {args.kind} annotations"
                )
            target_dir = out / desc.name / seq.id
            target_dir.mkdir(parents=True, exist_ok=True)
            for frame, path in sorted(paths.items()):
                labels = read_label_mask(path)
                if labels.ndim == 3:
                    target = np.stack(
                        [build_tertiary(p, morph) for p in slice_stack(labels)]
                    )
                else:
                    target = build_tertiary(labels, morph)
                target_path = target_dir / f"tert{frame:03d}.tif"
                write_image(target_path, target.astype(np.uint8))
                manifest["targets"].append(
                    {
                        "dataset": desc.name,
                        "sequence": seq.id,
                        "frame": frame,
                        "source": str(path),
                        "target": str(target_path),
                    }
                )
                total += 1
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {total} tertiary targets to {out}")
    return 0


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    manifest: dict = {}
    seed = _resolve_seed(args, manifest)
    specs = synth.default_corpus()
    if args.spec:
        raw = json.loads(Path(args.spec).read_text())
        specs = [synth.BlobDatasetSpec(**{**entry, "frames_per_sequence": tuple(entry.get("frames_per_sequence", (20, 20)))}) for entry in raw]
    synth.make_synthetic_corpus(specs, Path(args.out), seed)
    print(f"synthetic corpus with {len(specs)} datasets written to {args.out} (seed {seed})")
    return 0


# ---------------------------------------------------------------------------
# train / ablate


def _load_run_config(args) -> RunConfig:
    cfg = load_config(Path(args.config)) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=int(args.seed))
    return cfg


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    best, history = run_training(cfg, Path(args.data), out_dir=out)
    save_config(cfg, out / "config.json")
    seg = "n/a" if best.mean_seg is None else f"{best.mean_seg:.4f}"
    print(f"training done: {len(history.draws)} draws, best mean SEG {seg} "
          f"at iteration {best.iteration}")
    return 0


def _cmd_ablate(args) -> int:
    base = _load_run_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0, 1, 2]
    variants: list[tuple[str, RunConfig]] = []
    if args.variants:
        spec = json.loads(Path(args.variants).read_text())
        for entry in spec:
            overrides = dict(entry.get("overrides", {}))
            cfg = base
            model_over = overrides.pop("model", None)
            lr_over = overrides.pop("lr", None)
            if model_over:
                cfg = replace(cfg, model=replace(cfg.model, **model_over))
            if lr_over:
                cfg = replace(cfg, lr=replace(cfg.lr, **lr_over))
            if overrides.get("class_weights"):
                overrides["class_weights"] = tuple(overrides["class_weights"])
            cfg = replace(cfg, **overrides)
            variants.append((entry["name"], cfg))
    elif args.schemes:
        for scheme in args.schemes.split(","):
            variants.append((scheme, replace(base, scheme=scheme)))
    else:
        raise ConfigError("ablate needs --schemes or --variants")
    rows, _ = run_ablation(variants, Path(args.data), seeds, out_dir=Path(args.out))
    width = max(len(r.variant) for r in rows)
    print(f"{'variant'.ljust(width)}  best SEG (mean +/- std)  iters    recall  loss")
    for r in rows:
        recall = "-" if r.boundary_recall_mean is None else f"{r.boundary_recall_mean:.3f}"
        print(
            f"{r.variant.ljust(width)}  {r.best_seg_mean:.4f} +/- {r.best_seg_std:.4f}     "
            f"{r.best_iter_mean:7.0f}  {recall}  {r.final_loss_mean:.4f}"
        )
    return 0


# ---------------------------------------------------------------------------
# infer


def _load_model(args) -> tuple[MiniUNet, dict, dict, PostParams]:
    ckpt_path = Path(args.checkpoint)
    meta_path = Path(args.model_config) if args.model_config else ckpt_path.parent / "model.json"
    if not meta_path.exists():
        raise ConfigError(f"model metadata not found at {meta_path} (use --model-config)")
    meta = json.loads(meta_path.read_text())
    model = MiniUNet(UNetConfig(in_channels=1, n_classes=3, **meta["model"]))
    params, buffers = split_checkpoint(load_checkpoint(ckpt_path))
    missing = set(model.param_shapes()) - set(params)
    if missing:
        raise ConfigError(f"checkpoint is missing parameters: {sorted(missing)[:5]}")
    post_meta = dict(meta.get("post", {}))
    if args.min_area is not None:
        post_meta["min_area"] = args.min_area
    if args.max_hole is not None:
        post_meta["max_hole"] = args.max_hole
    post = PostParams(**post_meta)
    return model, params, buffers, post


def _cmd_infer(args) -> int:
    model, params, buffers, post = _load_model(args)
    out = Path(args.out)
    roots = find_dataset_roots(Path(args.data))
    n_masks = 0
    for root in roots:
        desc = scan_dataset(root)
        for seq in desc.sequences:
            frames = [read_image(seq.frame_paths[f]) for f in sorted(seq.frame_paths)]
            normalized, _ = normalize_sequence(frames)
            res_dir = out / desc.name / f"{seq.id}_RES"
            res_dir.mkdir(parents=True, exist_ok=True)
            for frame_idx, image in zip(sorted(seq.frame_paths), normalized):
                if image.ndim == 3:
                    planes = [
                        predict_labels(model, params, buffers, p, post)
                        for p in slice_stack(image)
                    ]
                    labels = np.stack(planes)
                else:
                    labels = predict_labels(model, params, buffers, image, post)
                write_label_mask(labels, res_dir / f"mask{frame_idx:03d}.tif")
                n_masks += 1
    print(f"wrote {n_masks} masks to {out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _index_masks(directory: Path, patterns: tuple[str, ...]) -> dict[int, Path]:
    import re

    rx = re.compile(r"(\d+)\.(tif|tiff|pgm)$", re.IGNORECASE)
    found = {}
    for pattern in patterns:
        for path in sorted(Path(directory).glob(pattern)):
            m = rx.search(path.name)
            if m:
                found[int(m.group(1))] = path
    return found


def _eval_pairs(gt_root: Path, pred_root: Path) -> list[tuple[str, str, int, Path, Path]]:
    """Yield (dataset, sequence, frame, gt_path, pred_path) for both layouts."""
    gt_root, pred_root = Path(gt_root), Path(pred_root)
    flat_gt = _index_masks(gt_root, (f"{_SEG_GLOB}.tif", f"{_SEG_GLOB}.pgm", f"{_MASK_GLOB}.tif", f"{_MASK_GLOB}.pgm"))
    if flat_gt:
        flat_pred = _index_masks(pred_root, (f"{_MASK_GLOB}.tif", f"{_MASK_GLOB}.pgm", f"{_SEG_GLOB}.tif", f"{_SEG_GLOB}.pgm"))
        missing = sorted(set(flat_gt) - set(flat_pred))
        if missing:
            raise LayoutError(f"prediction masks missing for frame(s) {missing[:5]}")
        return [("dataset", "01", f, flat_gt[f], flat_pred[f]) for f in sorted(flat_gt)]

    pairs = []
    for root in find_dataset_roots(gt_root):
        desc = scan_dataset(root)
        for seq in desc.sequences:
            if not seq.gt_paths:
                continue
            pred_dir = pred_root / desc.name / f"{seq.id}_RES"
            if not pred_dir.is_dir():
                raise LayoutError(f"missing prediction directory {pred_dir}")
            pred_masks = _index_masks(pred_dir, (f"{_MASK_GLOB}.tif", f"{_MASK_GLOB}.pgm"))
            for frame, gt_path in sorted(seq.gt_paths.items()):
                if frame not in pred_masks:
                    raise LayoutError(
                        f"{desc.name}/{seq.id}: no prediction for frame {frame}"
                    )
                pairs.append((desc.name, seq.id, frame, gt_path, pred_masks[frame]))
    if not pairs:
        raise LayoutError(f"no ground-truth masks found under {gt_root}")
    return pairs


def _cmd_eval(args) -> int:
    pairs = _eval_pairs(Path(args.gt), Path(args.pred))
    frames = []
    for dataset, seq, frame, gt_path, pred_path in pairs:
        gt = read_label_mask(gt_path)
        pred = read_label_mask(pred_path)
        gt_planes = slice_stack(gt) if gt.ndim == 3 else [gt]
        pred_planes = slice_stack(pred) if pred.ndim == 3 else [pred]
        for gp, pp in zip(gt_planes, pred_planes):
            score, n_gt, n_matched = metrics.frame_detail(gp, pp)
            frames.append(metrics.FrameScore(dataset, seq, frame, score, n_gt, n_matched))
    report = metrics.aggregate(frames)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        metrics.write_report_csv(report, out / "seg_report.csv")
        metrics.write_report_json(report, out / "seg_report.json")
    for dataset, mean in report.per_dataset.items():
        print(f"{dataset}: SEG {mean:.6f}")
    mean = report.mean
    print(f"mean SEG: {'n/a' if mean is None else f'{mean:.6f}'}")
    if args.min_seg is not None:
        if mean is None or mean < args.min_seg:
            print(f"below threshold {args.min_seg}")
            return 2
    return 0


# ---------------------------------------------------------------------------
# track


def _cmd_track(args) -> int:
    masks_dir = Path(args.masks)
    mask_paths = _index_masks(masks_dir, (f"{_MASK_GLOB}.tif", f"{_MASK_GLOB}.pgm", f"{_SEG_GLOB}.tif", f"{_SEG_GLOB}.pgm"))
    if not mask_paths:
        raise LayoutError(f"no masks found under {masks_dir}")
    frames = sorted(mask_paths)
    masks = [read_label_mask(mask_paths[f]) for f in frames]
    images = None
    if args.images:
        image_dir = Path(args.images)
        image_paths = _index_masks(image_dir, ("t*.tif", "t*.pgm"))
        missing = [f for f in frames if f not in image_paths]
        if missing:
            raise LayoutError(f"images missing for frame(s) {missing[:5]}")
        raw = [read_image(image_paths[f]) for f in frames]
        images, _ = normalize_sequence(raw)
    params = MatchParams(gate_radius=args.gate)
    trackset, relabeled = track_sequence(masks, images, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for frame, mask in zip(frames, relabeled):
        write_label_mask(mask, out / f"mask{frame:03d}.tif")
    write_track_file(trackset.tracks, out / "res_track.txt")
    print(f"{len(trackset.tracks)} tracks over {len(frames)} frames written to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellseg", description="Cell segmentation and tracking pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="generate tertiary training targets")
    p.add_argument("--data", required=True, help="dataset root (or directory of datasets)")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("GT", "ST"), default="GT")
    p.add_argument("--dilate-iters", type=int, default=None, help="default: 2 for 2D, 5 for 3D")
    p.add_argument("--erode-iters", type=int, default=2)
    p.add_argument("--contact", type=int, default=2, help="cell contact distance in pixels")
    p.add_argument("--element", choices=("square", "cross"), default="square")
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("synth", help="write a synthetic blob corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--spec", help="JSON list of blob dataset specs")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="run config JSON (defaults used when omitted)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ablate", help="train variant x seed matrix and summarize")
    p.add_argument("--config", help="base run config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schemes", help="comma-separated scheme list")
    p.add_argument("--variants", help="JSON file: [{name, overrides}, ...]")
    p.add_argument("--seeds", help="comma-separated seed list (default 0,1,2)")
    p.add_argument("--seed", type=int, default=None, help="overrides the base config seed")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("infer", help="segment frames with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", help="model.json (default: next to the checkpoint)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-area", type=int, default=None)
    p.add_argument("--max-hole", type=int, default=None)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="SEG evaluation of predicted masks")
    p.add_argument("--gt", required=True, help="ground-truth root (dataset tree or flat dir)")
    p.add_argument("--pred", required=True)
    p.add_argument("--out", help="directory for CSV/JSON reports")
    p.add_argument("--min-seg", type=float, default=None, help="exit 2 below this mean SEG")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("track", help="track instances through a mask sequence")
    p.add_argument("--masks", required=True, help="directory of per-frame instance masks")
    p.add_argument("--images", help="raw frame directory for intensity features")
    p.add_argument("--out", required=True)
    p.add_argument("--gate", type=float, default=50.0, help="max centroid displacement")
    p.set_defaults(func=_cmd_track)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())

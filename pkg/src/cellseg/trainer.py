"""End-to-end training orchestration.

The training loop consumes the scheme's event stream: Draw(d) pulls an augmented
minibatch from dataset d's loader, runs the network, and accumulates the
loss gradient; Step applies one AdamW update at the scheduled learning
rate. Every validation period (and at the final epoch) the current model
segments all validation frames, SEG is averaged per dataset and across
datasets, and the best-model record updates on strict improvement.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .augment import LoaderState, SamplePair, make_loader, next_minibatch
from .config import RunConfig, config_to_dict
from .errors import ConfigError, LayoutError, TrainingError
from .io_ctc import (
    DatasetDescriptor,
    build_split,
    normalize_sequence,
    read_image,
    read_label_mask,
    scan_dataset,
    slice_stack,
)
from .metrics import FrameScore, aggregate, frame_detail
from .nnkit import ClassWeights, MiniUNet, UNetConfig, save_checkpoint, weighted_ce
from .optim import AdamWConfig, AdamWState, GradBuffer, LrSchedule, accumulate, adamw_step, lr_at
from .reconstruct import PostParams, argmax_classes, reconstruct_instances
from .schedule import SchemeSpec, make_stream
from .targetgen import MorphParams, build_tertiary


# ---------------------------------------------------------------------------
# data loading


@dataclass
class ValidFrame:
    sequence: str
    frame: int
    image: np.ndarray  # normalized float64 2D
    gt_labels: np.ndarray
    gt_tertiary: np.ndarray


@dataclass
class DatasetBundle:
    name: str
    descriptor: DatasetDescriptor
    train_samples: list[SamplePair]
    valid_frames: list[ValidFrame]
    short_side: int


def find_dataset_roots(data_root: Path) -> list[Path]:
    """data_root is either one dataset or a directory of datasets."""
    data_root = Path(data_root)
    if any(d.is_dir() and d.name.isdigit() for d in data_root.iterdir()):
        return [data_root]
    roots = sorted(
        d
        for d in data_root.iterdir()
        if d.is_dir() and any(s.is_dir() and s.name.isdigit() for s in d.iterdir())
    )
    if not roots:
        raise LayoutError(f"{data_root}: no dataset directories found")
    return roots


def _as_planes(array: np.ndarray) -> list[np.ndarray]:
    return slice_stack(array) if array.ndim == 3 else [array]


def load_bundles(data_root: Path, cfg: RunConfig) -> list[DatasetBundle]:
    roots = find_dataset_roots(data_root)
    descriptors = [scan_dataset(r) for r in roots]
    plan = build_split(descriptors, cfg.data_config)

    bundles = []
    for desc in descriptors:
        morph_kwargs = {
            "erode_iters": cfg.morph.erode_iters,
            "contact_distance": cfg.morph.contact_distance,
            "element": cfg.morph.element,
        }
        if cfg.morph.dilate_iters is not None:
            morph_kwargs["dilate_iters"] = cfg.morph.dilate_iters
        morph = MorphParams.for_dimensionality(desc.dimensionality, **morph_kwargs)

        train_items = [it for it in plan.train if it.dataset == desc.name]
        valid_items = [it for it in plan.valid if it.dataset == desc.name]
        needed_seqs = sorted({it.sequence for it in train_items + valid_items})
        normalized: dict[str, list] = {}
        for seq_id in needed_seqs:
            seq = desc.sequence(seq_id)
            raw = [read_image(seq.frame_paths[f]) for f in sorted(seq.frame_paths)]
            frames, (lo, hi) = normalize_sequence(raw)
            seq.intensity_min, seq.intensity_max = lo, hi
            normalized[seq_id] = frames

        train_samples = []
        for it in sorted(train_items, key=lambda s: (s.sequence, s.frame, s.kind)):
            seq = desc.sequence(it.sequence)
            ann_path = (seq.gt_paths if it.kind == "GT" else seq.st_paths)[it.frame]
            labels = read_label_mask(ann_path)
            image = normalized[it.sequence][it.frame]
            for plane_img, plane_lab in zip(_as_planes(image), _as_planes(labels)):
                train_samples.append(
                    SamplePair(
                        image=plane_img,
                        target=build_tertiary(plane_lab, morph),
                        dataset=desc.name,
                        sequence=it.sequence,
                        frame=it.frame,
                    )
                )
        valid_frames = []
        for it in sorted(valid_items, key=lambda s: (s.sequence, s.frame, s.kind)):
            seq = desc.sequence(it.sequence)
            ann_path = (seq.gt_paths if it.kind == "GT" else seq.st_paths)[it.frame]
            labels = read_label_mask(ann_path)
            image = normalized[it.sequence][it.frame]
            for plane_img, plane_lab in zip(_as_planes(image), _as_planes(labels)):
                valid_frames.append(
                    ValidFrame(
                        sequence=it.sequence,
                        frame=it.frame,
                        image=plane_img,
                        gt_labels=plane_lab,
                        gt_tertiary=build_tertiary(plane_lab, morph),
                    )
                )
        short = min(min(s.resolution) for s in desc.sequences)
        bundles.append(
            DatasetBundle(
                name=desc.name,
                descriptor=desc,
                train_samples=train_samples,
                valid_frames=valid_frames,
                short_side=short,
            )
        )
    return bundles


# ---------------------------------------------------------------------------
# inference helpers (shared with the CLI)


def predict_scores(
    model: MiniUNet,
    params: dict[str, np.ndarray],
    buffers: dict[str, np.ndarray],
    image: np.ndarray,
    mode: str = "eval",
) -> np.ndarray:
    """Class scores (3, h, w) for one normalized frame; the frame is
    reflect-padded up to the network's divisibility requirement and the
    scores cropped back."""
    h, w = image.shape
    div = 1 << model.cfg.depth
    ph = (-h) % div
    pw = (-w) % div
    padded = np.pad(image, ((0, ph), (0, pw)), mode="reflect") if (ph or pw) else image
    scores, _ = model.forward(padded[None, None], params, buffers, mode=mode)
    return scores.data[0, :, :h, :w]


def predict_labels(
    model: MiniUNet,
    params: dict[str, np.ndarray],
    buffers: dict[str, np.ndarray],
    image: np.ndarray,
    post: PostParams,
    mode: str = "eval",
) -> np.ndarray:
    return reconstruct_instances(predict_scores(model, params, buffers, image, mode), post)


# ---------------------------------------------------------------------------
# histories and records


@dataclass
class DrawRow:
    iteration: int
    epoch: int
    dataset: str
    lr: float
    loss: float


@dataclass
class ValidationRow:
    iteration: int
    epoch: int
    mean_seg: float | None
    per_dataset: dict[str, float | None]
    boundary_recall: float | None
    is_best: bool


@dataclass
class TrainingHistory:
    draws: list[DrawRow] = field(default_factory=list)
    validations: list[ValidationRow] = field(default_factory=list)


@dataclass
class BestModelRecord:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    mean_seg: float | None
    iteration: int


def _write_history(history: TrainingHistory, dataset_names: list[str], out_dir: Path) -> None:
    with open(out_dir / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "epoch", "dataset", "lr", "loss"])
        for row in history.draws:
            writer.writerow([row.iteration, row.epoch, row.dataset, repr(row.lr), repr(row.loss)])
    with open(out_dir / "validation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["iteration", "epoch", "mean_seg", "boundary_recall", "is_best"]
        header += [f"seg_{name}" for name in dataset_names]
        writer.writerow(header)
        for row in history.validations:
            csv_row = [
                row.iteration,
                row.epoch,
                "" if row.mean_seg is None else repr(row.mean_seg),
                "" if row.boundary_recall is None else repr(row.boundary_recall),
                int(row.is_best),
            ]
            for name in dataset_names:
                value = row.per_dataset.get(name)
                csv_row.append("" if value is None else repr(value))
            writer.writerow(csv_row)


# ---------------------------------------------------------------------------
# training


def _validate(
    model: MiniUNet,
    params: dict[str, np.ndarray],
    buffers: dict[str, np.ndarray],
    bundles: list[DatasetBundle],
    post: PostParams,
) -> tuple[float | None, dict[str, float | None], float | None]:
    """(mean SEG over datasets, per-dataset SEG, boundary-class recall)."""
    frames: list[FrameScore] = []
    boundary_hits = 0
    boundary_total = 0
    for bundle in bundles:
        for vf in bundle.valid_frames:
            scores = predict_scores(model, params, buffers, vf.image)
            pred_tert = argmax_classes(scores)
            pred_labels = reconstruct_instances(scores, post)
            score, n_gt, n_matched = frame_detail(vf.gt_labels, pred_labels)
            frames.append(
                FrameScore(bundle.name, vf.sequence, vf.frame, score, n_gt, n_matched)
            )
            gt_boundary = vf.gt_tertiary == 1
            boundary_total += int(gt_boundary.sum())
            boundary_hits += int((pred_tert[gt_boundary] == 1).sum())
    report = aggregate(frames)
    per_dataset = {b.name: report.per_dataset.get(b.name) for b in bundles}
    recall = None if boundary_total == 0 else boundary_hits / boundary_total
    return report.mean, per_dataset, recall


def run_training(
    cfg: RunConfig, data_root: Path, out_dir: Path | None = None
) -> tuple[BestModelRecord, TrainingHistory]:
    bundles = load_bundles(data_root, cfg)
    n = len(bundles)
    names = [b.name for b in bundles]
    for b in bundles:
        if not b.train_samples:
            raise ConfigError(f"dataset {b.name} has no training samples under {cfg.data_config}")

    draws_per_epoch = cfg.draws_per_dataset * n
    total_draws = cfg.epochs * draws_per_epoch
    draws_per_step = n if cfg.scheme == "Acc" else 1
    steps_per_epoch = draws_per_epoch // draws_per_step
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    restart_steps = tuple(int(e) * steps_per_epoch for e in cfg.lr.restart_epochs)
    schedule = LrSchedule(
        kind=cfg.lr.kind,
        lr_max=cfg.lr.lr_max,
        lr_min=cfg.lr.lr_min,
        total_steps=total_steps,
        restart_steps=restart_steps,
    )

    model = MiniUNet(
        UNetConfig(
            in_channels=1,
            n_classes=3,
            base_channels=cfg.model.base_channels,
            depth=cfg.model.depth,
            norm=cfg.model.norm,
            groups=cfg.model.groups,
            down=cfg.model.down,
            up=cfg.model.up,
            aspp=cfg.model.aspp,
        )
    )
    params = model.init_params(cfg.seed)
    buffers = model.init_buffers()
    opt_state = AdamWState.init(params)
    grad_buf = GradBuffer.zeros_like(params)
    adam_cfg = AdamWConfig()
    weights = ClassWeights(*cfg.class_weights)
    post = PostParams(
        min_area=cfg.post.min_area,
        max_hole=cfg.post.max_hole,
        connectivity=cfg.post.connectivity,
    )

    spec = SchemeSpec(
        scheme=cfg.scheme,
        n_datasets=n,
        dataset_sizes=tuple(len(b.train_samples) for b in bundles),
        per_dataset_quota=(
            (cfg.seq_quota or max(1, total_draws // n)) if cfg.scheme == "Seq" else None
        ),
        mix_weights=cfg.mix_weights,
        seed=cfg.seed,
    )
    stream = make_stream(spec)
    loaders: list[LoaderState] = [make_loader(b.train_samples, b.name, cfg.seed) for b in bundles]
    aug_rngs = [rngmod.stream(cfg.seed, "loader", b.name, "augment") for b in bundles]
    crop_sizes = [
        cfg.crop_overrides.get(b.name, cfg.crop_size or b.short_side) for b in bundles
    ]
    batch_sizes = [cfg.batch_overrides.get(b.name, cfg.batch_size) for b in bundles]

    history = TrainingHistory()
    best = BestModelRecord(
        params=copy.deepcopy(params), buffers=copy.deepcopy(buffers), mean_seg=None, iteration=0
    )
    draw_idx = 0
    step_idx = 0
    validated_epoch = -1

    def maybe_validate():
        nonlocal best, validated_epoch
        if draw_idx == 0 or draw_idx % draws_per_epoch:
            return
        epoch = draw_idx // draws_per_epoch
        if epoch == validated_epoch:
            return
        if epoch % cfg.validation_period and epoch != cfg.epochs:
            return
        validated_epoch = epoch
        mean_seg, per_dataset, recall = _validate(model, params, buffers, bundles, post)
        is_best = mean_seg is not None and (best.mean_seg is None or mean_seg > best.mean_seg)
        if is_best:
            best = BestModelRecord(
                params=copy.deepcopy(params),
                buffers=copy.deepcopy(buffers),
                mean_seg=mean_seg,
                iteration=draw_idx,
            )
        history.validations.append(
            ValidationRow(draw_idx, epoch, mean_seg, per_dataset, recall, is_best)
        )

    while draw_idx < total_draws or grad_buf.batches_absorbed > 0:
        event = next(stream)
        if event.kind == "draw":
            d = event.dataset
            pairs, _ = next_minibatch(
                loaders[d], batch_sizes[d], crop_sizes[d], aug_rngs[d], cfg.pad
            )
            x = np.stack([p.image for p in pairs])[:, None]
            target = np.stack([p.target for p in pairs]).astype(np.int64)
            scores, leaves = model.forward(x, params, buffers, mode="train")
            loss_node = weighted_ce(scores, target, weights)
            loss = loss_node.item()
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at draw {draw_idx + 1} on dataset {names[d]}"
                )
            loss_node.backward()
            grads = {
                name: (leaves[name].grad if leaves[name].grad is not None else np.zeros_like(p))
                for name, p in params.items()
            }
            accumulate(grad_buf, grads)
            draw_idx += 1
            history.draws.append(
                DrawRow(
                    iteration=draw_idx,
                    epoch=(draw_idx + draws_per_epoch - 1) // draws_per_epoch,
                    dataset=names[d],
                    lr=lr_at(schedule, min(step_idx, total_steps)),
                    loss=loss,
                )
            )
        else:
            if grad_buf.batches_absorbed:
                adamw_step(params, grad_buf, opt_state, lr_at(schedule, step_idx), adam_cfg)
                step_idx += 1
            maybe_validate()

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_history(history, names, out_dir)
        save_checkpoint(out_dir / "final.ckpt", _flatten(params, buffers))
        save_checkpoint(out_dir / "best.ckpt", _flatten(best.params, best.buffers))
        manifest = {
            "config": config_to_dict(cfg),
            "datasets": names,
            "best_mean_seg": best.mean_seg,
            "best_iteration": best.iteration,
            "total_draws": total_draws,
            "optimizer_steps": step_idx,
        }
        (out_dir / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        model_meta = {
            "model": {
                "norm": cfg.model.norm,
                "down": cfg.model.down,
                "up": cfg.model.up,
                "aspp": cfg.model.aspp,
                "depth": cfg.model.depth,
                "base_channels": cfg.model.base_channels,
                "groups": cfg.model.groups,
            },
            "post": {
                "min_area": cfg.post.min_area,
                "max_hole": cfg.post.max_hole,
                "connectivity": cfg.post.connectivity,
            },
        }
        (out_dir / "model.json").write_text(json.dumps(model_meta, indent=2, sort_keys=True) + "\n")
    return best, history


def _flatten(params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]) -> dict:
    flat = {f"param/{k}": v for k, v in params.items()}
    flat.update({f"buffer/{k}": v for k, v in buffers.items()})
    return flat


def split_checkpoint(flat: dict[str, np.ndarray]) -> tuple[dict, dict]:
    params = {k[6:]: v for k, v in flat.items() if k.startswith("param/")}
    buffers = {k[7:]: v for k, v in flat.items() if k.startswith("buffer/")}
    return params, buffers


# ---------------------------------------------------------------------------
# ablations


@dataclass
class AblationRow:
    variant: str
    n_seeds: int
    best_seg_mean: float
    best_seg_std: float
    best_iter_mean: float
    boundary_recall_mean: float | None
    final_loss_mean: float


def run_ablation(
    variants: list[tuple[str, RunConfig]],
    data_root: Path,
    seeds: list[int],
    out_dir: Path | None = None,
) -> tuple[list[AblationRow], dict]:
    """Train every variant with every seed; summarize best SEG per variant."""
    rows = []
    details = {}
    for name, cfg in variants:
        segs, iters, recalls, losses = [], [], [], []
        for seed in seeds:
            best, history = run_training(replace(cfg, seed=seed), data_root)
            details[(name, seed)] = (best, history)
            segs.append(best.mean_seg if best.mean_seg is not None else 0.0)
            iters.append(best.iteration)
            tail = [r.loss for r in history.draws[-20:]]
            losses.append(float(np.mean(tail)) if tail else float("nan"))
            val_recalls = [
                r.boundary_recall for r in history.validations if r.boundary_recall is not None
            ]
            recalls.append(val_recalls[-1] if val_recalls else None)
        known_recalls = [r for r in recalls if r is not None]
        rows.append(
            AblationRow(
                variant=name,
                n_seeds=len(seeds),
                best_seg_mean=float(np.mean(segs)),
                best_seg_std=float(np.std(segs)),
                best_iter_mean=float(np.mean(iters)),
                boundary_recall_mean=(
                    float(np.mean(known_recalls)) if known_recalls else None
                ),
                final_loss_mean=float(np.mean(losses)),
            )
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "ablation.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "variant",
                    "n_seeds",
                    "best_seg_mean",
                    "best_seg_std",
                    "best_iter_mean",
                    "boundary_recall_mean",
                    "final_loss_mean",
                ]
            )
            for row in rows:
                writer.writerow(
                    [
                        row.variant,
                        row.n_seeds,
                        repr(row.best_seg_mean),
                        repr(row.best_seg_std),
                        repr(row.best_iter_mean),
                        "" if row.boundary_recall_mean is None else repr(row.boundary_recall_mean),
                        repr(row.final_loss_mean),
                    ]
                )
    return rows, details

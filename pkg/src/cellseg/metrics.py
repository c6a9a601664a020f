"""SEG / Jaccard evaluation of predicted instance masks.

A ground-truth object is matched to the unique predicted object covering
strictly more than half of it (at most one can exist); its score is the
Jaccard index of the pair, or 0 without a match. Frame score is the mean
over ground-truth objects; frames without objects are excluded from
per-dataset means; the global score is the unweighted mean over datasets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two pixel sets (boolean masks).

    The empty/empty case is defined as 0.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def seg_score(gt: np.ndarray, pred: np.ndarray) -> float | None:
    """Frame-level SEG: mean matched-Jaccard over ground-truth objects.

    Returns None when the frame has no ground-truth objects.
    """
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ShapeError(f"seg_score: shape mismatch {gt.shape} vs {pred.shape}")
    gt_ids = np.unique(gt)
    gt_ids = gt_ids[gt_ids > 0]
    if gt_ids.size == 0:
        return None

    gt_flat = gt.ravel().astype(np.int64)
    pred_flat = pred.ravel().astype(np.int64)
    gt_sizes = np.bincount(gt_flat)
    pred_sizes = np.bincount(pred_flat)

    # joint histogram of (gt id, pred id) over pixels where both are positive
    both = (gt_flat > 0) & (pred_flat > 0)
    n_pred = pred_sizes.size
    pairs = gt_flat[both] * n_pred + pred_flat[both]
    pair_counts = np.bincount(pairs)
    pair_ids = np.nonzero(pair_counts)[0]

    overlaps: dict[int, list[tuple[int, int]]] = {}
    for pid in pair_ids:
        g, p = divmod(int(pid), n_pred)
        overlaps.setdefault(g, []).append((p, int(pair_counts[pid])))

    total = 0.0
    for g in gt_ids:
        g = int(g)
        size_r = int(gt_sizes[g])
        score = 0.0
        for p, inter in overlaps.get(g, ()):
            if 2 * inter > size_r:  # strictly more than half of R
                union = size_r + int(pred_sizes[p]) - inter
                score = inter / union
                break  # at most one predicted object can qualify
        total += score
    return total / gt_ids.size


@dataclass
class FrameScore:
    dataset: str
    sequence: str
    frame: int
    score: float | None  # None: no ground-truth objects in the frame
    n_gt: int = 0
    n_matched: int = 0


@dataclass
class SegReport:
    frames: list[FrameScore] = field(default_factory=list)
    per_dataset: dict[str, float] = field(default_factory=dict)
    mean: float | None = None
    matched: int = 0
    unmatched: int = 0


def frame_detail(gt: np.ndarray, pred: np.ndarray) -> tuple[float | None, int, int]:
    """(score, number of gt objects, number matched) for one frame."""
    gt_ids = np.unique(gt)
    gt_ids = gt_ids[gt_ids > 0]
    if gt_ids.size == 0:
        return None, 0, 0
    score = seg_score(gt, pred)
    matched = 0
    gt_flat = gt.ravel().astype(np.int64)
    pred_flat = pred.ravel().astype(np.int64)
    gt_sizes = np.bincount(gt_flat)
    both = (gt_flat > 0) & (pred_flat > 0)
    n_pred = int(pred_flat.max()) + 1 if both.any() else 1
    pair_counts = np.bincount(gt_flat[both] * n_pred + pred_flat[both]) if both.any() else []
    for pid in np.nonzero(pair_counts)[0]:
        g, _ = divmod(int(pid), n_pred)
        if 2 * int(pair_counts[pid]) > int(gt_sizes[g]):
            matched += 1
    return score, int(gt_ids.size), matched


def aggregate(frames: list[FrameScore]) -> SegReport:
    """Roll frame scores up to per-dataset means and their unweighted mean."""
    report = SegReport(frames=list(frames))
    by_dataset: dict[str, list[float]] = {}
    for fs in frames:
        report.matched += fs.n_matched
        report.unmatched += fs.n_gt - fs.n_matched
        if fs.score is not None:
            by_dataset.setdefault(fs.dataset, []).append(fs.score)
    report.per_dataset = {d: float(np.mean(s)) for d, s in sorted(by_dataset.items())}
    if report.per_dataset:
        report.mean = float(np.mean(list(report.per_dataset.values())))
    return report


def write_report_csv(report: SegReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "sequence", "frame", "seg", "n_gt", "n_matched"])
        for fs in report.frames:
            score = "" if fs.score is None else repr(fs.score)
            writer.writerow([fs.dataset, fs.sequence, fs.frame, score, fs.n_gt, fs.n_matched])


def write_report_json(report: SegReport, path: Path) -> None:
    payload = {
        "mean_seg": report.mean,
        "per_dataset": report.per_dataset,
        "matched_gt_objects": report.matched,
        "unmatched_gt_objects": report.unmatched,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

"""From 3-class score maps to instance label maps.

Pipeline per frame: per-pixel argmax over class scores, connected-component
labelling of the cell class (boundary pixels separate touching cells, so no
watershed or splitting is needed), then area-based cleanup: small instances
removed, small fully-enclosed holes filled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import PipelineError, ShapeError
from .targetgen import CLASS_BOUNDARY, CLASS_CELL

_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT8 = np.ones((3, 3), dtype=bool)


@dataclass
class PostParams:
    min_area: int = 20
    max_hole: int = 20
    connectivity: int = 4
    reclaim_boundary_iters: int = 0  # off by default

    def __post_init__(self):
        if self.min_area < 0 or self.max_hole < 0:
            raise PipelineError("area thresholds must be >= 0")
        if self.connectivity not in (4, 8):
            raise PipelineError("connectivity must be 4 or 8")


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return _STRUCT4
    if connectivity == 8:
        return _STRUCT8
    raise PipelineError("connectivity must be 4 or 8")


def argmax_classes(scores: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over scores (k, h, w); ties go to the smallest class code."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 3:
        raise ShapeError(f"argmax_classes: expected (classes, h, w), got {scores.shape}")
    if not np.isfinite(scores).all():
        raise PipelineError("argmax_classes: scores contain non-finite values")
    return scores.argmax(axis=0).astype(np.uint8)


def label_instances(tertiary: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Connected components of cell-class pixels, ids 1..K assigned in raster
    order of each component's first pixel."""
    cell = np.asarray(tertiary) == CLASS_CELL
    raw, count = ndimage.label(cell, structure=_structure(connectivity))
    if count == 0:
        return np.zeros(cell.shape, dtype=np.int32)
    # canonical id order: first raster-scan occurrence of each component
    flat = raw.ravel()
    first = np.full(count + 1, flat.size, dtype=np.int64)
    nz = np.nonzero(flat)[0]
    np.minimum.at(first, flat[nz], nz)
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, count + 1, dtype=np.int32)
    return remap[raw]


def remove_small(labels: np.ndarray, min_area: int) -> np.ndarray:
    """Drop instances with fewer than min_area pixels; survivors keep ids."""
    labels = np.asarray(labels, dtype=np.int32)
    if min_area <= 1 or labels.max() == 0:
        return labels.copy()
    counts = np.bincount(labels.ravel())
    lut = np.arange(counts.size, dtype=np.int32)
    lut[counts < min_area] = 0
    lut[0] = 0
    return lut[labels]


def fill_holes(labels: np.ndarray, max_hole: int) -> np.ndarray:
    """Absorb small background components enclosed by a single instance.

    A hole qualifies if its area is <= max_hole, it does not touch the image
    border, and all of its 4-adjacent non-background pixels belong to one
    instance. Background components are detected with 8-connectivity.
    """
    labels = np.asarray(labels, dtype=np.int32)
    out = labels.copy()
    if max_hole <= 0 or labels.max() == 0:
        return out
    bg = labels == 0
    holes, count = ndimage.label(bg, structure=_STRUCT8)
    if count == 0:
        return out
    areas = np.bincount(holes.ravel())[1:]  # hole id -> pixel count

    border = np.zeros(count + 1, dtype=bool)
    for edge in (holes[0, :], holes[-1, :], holes[:, 0], holes[:, -1]):
        border[np.unique(edge)] = True

    # 4-adjacent instance ids per hole; a hole is single-owner iff the
    # smallest and largest adjacent id agree
    lo = np.full(count + 1, np.iinfo(np.int64).max)
    hi = np.zeros(count + 1, dtype=np.int64)
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        hs = holes[max(dy, 0) : holes.shape[0] + min(dy, 0), max(dx, 0) : holes.shape[1] + min(dx, 0)]
        ls = labels[max(-dy, 0) : labels.shape[0] + min(-dy, 0), max(-dx, 0) : labels.shape[1] + min(-dx, 0)]
        touch = (hs > 0) & (ls > 0)
        np.minimum.at(lo, hs[touch], ls[touch].astype(np.int64))
        np.maximum.at(hi, hs[touch], ls[touch].astype(np.int64))

    fill = np.zeros(count + 1, dtype=np.int32)
    eligible = (~border) & (hi > 0) & (lo == hi)
    eligible[1:] &= areas <= max_hole
    eligible[0] = False
    fill[eligible] = hi[eligible]
    filled = fill[holes]
    out[filled > 0] = filled[filled > 0]
    return out


def reclaim_boundary(labels: np.ndarray, tertiary: np.ndarray, iters: int) -> np.ndarray:
    """Optionally grow instances back into the boundary band.

    Each round, every boundary-class pixel 8-adjacent to exactly one instance
    joins it; pixels adjacent to several instances stay unassigned. Rounds
    update simultaneously, so the result does not depend on pixel order.
    """
    labels = np.asarray(labels, dtype=np.int32)
    out = labels.copy()
    boundary = np.asarray(tertiary) == CLASS_BOUNDARY
    h, w = out.shape
    for _ in range(iters):
        lo = np.full((h, w), np.iinfo(np.int32).max, dtype=np.int64)
        hi = np.zeros((h, w), dtype=np.int64)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                shifted = np.zeros((h, w), dtype=np.int64)
                ys = slice(max(dy, 0), h + min(dy, 0))
                xs = slice(max(dx, 0), w + min(dx, 0))
                ys_src = slice(max(-dy, 0), h + min(-dy, 0))
                xs_src = slice(max(-dx, 0), w + min(-dx, 0))
                shifted[ys, xs] = out[ys_src, xs_src]
                positive = shifted > 0
                lo[positive] = np.minimum(lo[positive], shifted[positive])
                hi = np.maximum(hi, shifted)
        claim = boundary & (out == 0) & (hi > 0) & (lo == hi)
        if not claim.any():
            break
        out[claim] = hi[claim].astype(np.int32)
    return out


def reconstruct_instances(scores: np.ndarray, params: PostParams | None = None) -> np.ndarray:
    """Full reconstruction: argmax -> components -> remove_small -> fill_holes."""
    params = params or PostParams()
    tert = argmax_classes(scores)
    labels = label_instances(tert, params.connectivity)
    labels = remove_small(labels, params.min_area)
    labels = fill_holes(labels, params.max_hole)
    if params.reclaim_boundary_iters:
        labels = reclaim_boundary(labels, tert, params.reclaim_boundary_iters)
    return labels

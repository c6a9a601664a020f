"""Seeded augmentation and minibatch assembly.

Samples are (image, target) pairs. The loader yields an infinite stream:
each epoch is a fresh permutation of the sample indices drawn from the
loader's own random stream, so batches are a pure function of
(dataset content, seed, call sequence). Per sample the trainer applies
random_crop, random_flip_rot, reflect_pad in that order.

Index convention is row-major (row, col); 90 degree rotations are
counterclockwise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .errors import PipelineError, ShapeError


@dataclass
class SamplePair:
    image: np.ndarray  # float64 (h, w)
    target: np.ndarray  # uint8 (h, w) class codes
    dataset: str = ""
    sequence: str = ""
    frame: int = -1
    crop_origin: tuple[int, int] | None = None

    def __post_init__(self):
        if self.image.shape != self.target.shape:
            raise ShapeError(
                f"image/target shape mismatch: {self.image.shape} vs {self.target.shape}"
            )


def reflect_pad(pair: SamplePair, k: int) -> SamplePair:
    """Grow both grids by k pixels per side via mirror reflection.

    The edge pixel is not duplicated: a row [a, b, c] padded by 2 becomes
    [c, b, a, b, c, b, a].
    """
    if k < 0:
        raise PipelineError("pad must be >= 0")
    if k == 0:
        return pair
    h, w = pair.image.shape
    if k >= min(h, w):
        raise ShapeError(f"pad {k} exceeds size of {h}x{w} image")
    return replace(
        pair,
        image=np.pad(pair.image, k, mode="reflect"),
        target=np.pad(pair.target, k, mode="reflect"),
    )


def _pad_to(pair: SamplePair, size: int) -> SamplePair:
    """Symmetric reflect padding of any side shorter than size."""
    h, w = pair.image.shape
    pads = []
    for dim in (h, w):
        missing = max(0, size - dim)
        pads.append((missing // 2, missing - missing // 2))
    if pads == [(0, 0), (0, 0)]:
        return pair
    return replace(
        pair,
        image=np.pad(pair.image, pads, mode="reflect"),
        target=np.pad(pair.target, pads, mode="reflect"),
    )


def random_crop(pair: SamplePair, size: int, rng: np.random.Generator) -> SamplePair:
    """Square crop at an origin drawn uniformly over all valid origins.

    Images whose short side is below `size` are reflect-padded symmetrically
    first. The row origin is drawn before the column origin.
    """
    if size < 1:
        raise PipelineError("crop size must be >= 1")
    pair = _pad_to(pair, size)
    h, w = pair.image.shape
    row = int(rng.integers(0, h - size + 1))
    col = int(rng.integers(0, w - size + 1))
    return replace(
        pair,
        image=pair.image[row : row + size, col : col + size],
        target=pair.target[row : row + size, col : col + size],
        crop_origin=(row, col),
    )


def random_flip_rot(pair: SamplePair, rng: np.random.Generator) -> SamplePair:
    """Independent fair horizontal/vertical mirrors, then a uniform k*90 CCW rotation."""
    h, w = pair.image.shape
    if h != w:
        raise ShapeError(f"random_flip_rot requires a square pair, got {h}x{w}")
    flip_h = bool(rng.integers(0, 2))
    flip_v = bool(rng.integers(0, 2))
    k = int(rng.integers(0, 4))
    img, tgt = pair.image, pair.target
    if flip_h:
        img, tgt = img[:, ::-1], tgt[:, ::-1]
    if flip_v:
        img, tgt = img[::-1, :], tgt[::-1, :]
    if k:
        img, tgt = np.rot90(img, k), np.rot90(tgt, k)
    return replace(pair, image=np.ascontiguousarray(img), target=np.ascontiguousarray(tgt))


@dataclass
class LoaderState:
    """Infinite, reshuffling sample stream for one dataset."""

    dataset_id: str
    samples: list[SamplePair]
    permutation: np.ndarray
    cursor: int
    shuffle_rng: np.random.Generator


def make_loader(samples: list[SamplePair], dataset_id: str, seed: int) -> LoaderState:
    if not samples:
        raise PipelineError(f"empty loader for dataset {dataset_id!r}")
    shuffle_rng = rngmod.stream(seed, "loader", dataset_id, "shuffle")
    perm = shuffle_rng.permutation(len(samples))
    return LoaderState(
        dataset_id=dataset_id,
        samples=samples,
        permutation=perm,
        cursor=0,
        shuffle_rng=shuffle_rng,
    )


def next_minibatch(
    state: LoaderState,
    batch: int,
    size: int,
    rng: np.random.Generator,
    pad: int = 8,
) -> tuple[list[SamplePair], LoaderState]:
    """Draw `batch` augmented samples, reshuffling on exhaustion."""
    if not state.samples:
        raise PipelineError("empty loader")
    out = []
    for _ in range(batch):
        if state.cursor >= len(state.samples):
            state.permutation = state.shuffle_rng.permutation(len(state.samples))
            state.cursor = 0
        pair = state.samples[int(state.permutation[state.cursor])]
        state.cursor += 1
        pair = random_crop(pair, size, rng)
        pair = random_flip_rot(pair, rng)
        pair = reflect_pad(pair, pad)
        out.append(pair)
    return out, state

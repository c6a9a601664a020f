"""Synthetic blob corpora in the CTC on-disk layout.

Each pseudo-dataset draws random ellipse cells with its own intensity
regime, size range, density, and noise level, writes raw frames as 16-bit
TIFF and full instance annotations under <seq>_GT/SEG, so the whole
pipeline runs on it unmodified. The default corpus has four regimes chosen
to be visually distinct (bright-on-dark, inverted, dense, dim) with very
unequal frame counts, which is what makes size-biased sampling schemes and
sequential training measurably worse than balanced ones.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .io_ctc import write_image, write_label_mask


@dataclass
class BlobDatasetSpec:
    name: str
    frames_per_sequence: tuple[int, int] = (20, 20)
    height: int = 72
    width: int = 72
    cells: tuple[int, int] = (3, 6)  # inclusive range per frame
    radius: tuple[float, float] = (6.0, 10.0)
    axis_ratio: tuple[float, float] = (1.0, 1.8)  # major/minor
    bg_level: float = 500.0
    fg_level: float = 4200.0
    noise_sd: float = 120.0
    max_overlap: float = 0.25  # reject cells overlapping more than this


def default_corpus() -> list[BlobDatasetSpec]:
    """Four regimes in deliberate (alphabetical) training order.

    The large easy dataset comes first and an inverted-contrast one second,
    so sequential training forgets the first regime quickly; the two rare
    datasets (8 frames each) are also the hard ones (inverted, dim), which
    is what penalizes size-proportional sampling.
    """
    return [
        BlobDatasetSpec(
            name="blobs-a-bright",
            frames_per_sequence=(48, 48),
            cells=(3, 6),
            radius=(6.0, 10.0),
            bg_level=500.0,
            fg_level=4200.0,
            noise_sd=120.0,
        ),
        BlobDatasetSpec(
            name="blobs-b-inverted",
            frames_per_sequence=(4, 4),
            cells=(4, 8),
            radius=(4.0, 7.0),
            bg_level=210.0,
            fg_level=70.0,
            noise_sd=12.0,
        ),
        BlobDatasetSpec(
            name="blobs-c-dense",
            frames_per_sequence=(20, 20),
            cells=(8, 14),
            radius=(4.0, 6.0),
            bg_level=900.0,
            fg_level=2800.0,
            noise_sd=180.0,
            max_overlap=0.4,
        ),
        BlobDatasetSpec(
            name="blobs-d-dim",
            frames_per_sequence=(4, 4),
            cells=(3, 5),
            radius=(8.0, 12.0),
            bg_level=30000.0,
            fg_level=33200.0,
            noise_sd=800.0,
        ),
    ]


def _draw_frame(spec: BlobDatasetSpec, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(raw uint16 image, int32 instance labels) for one frame."""
    h, w = spec.height, spec.width
    labels = np.zeros((h, w), dtype=np.int32)
    yy, xx = np.mgrid[0:h, 0:w]
    n_cells = int(gen.integers(spec.cells[0], spec.cells[1] + 1))
    next_id = 1
    for _ in range(n_cells):
        r_minor = gen.uniform(*spec.radius)
        r_major = r_minor * gen.uniform(*spec.axis_ratio)
        theta = gen.uniform(0, np.pi)
        cy = gen.uniform(r_major, h - r_major)
        cx = gen.uniform(r_major, w - r_major)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        mask = (u / r_major) ** 2 + (v / r_minor) ** 2 <= 1.0
        if not mask.any():
            continue
        overlap = (mask & (labels > 0)).sum() / mask.sum()
        if overlap > spec.max_overlap:
            continue
        labels[mask & (labels == 0)] = next_id
        next_id += 1
    raw = np.where(labels > 0, spec.fg_level, spec.bg_level)
    raw = raw + gen.normal(0.0, spec.noise_sd, size=(h, w))
    raw = np.clip(np.rint(raw), 0, 65535).astype(np.uint16)
    return raw, labels


def make_synthetic_corpus(
    specs: list[BlobDatasetSpec], root: Path, seed: int
) -> dict:
    """Write the corpus under root; returns the manifest (also saved there)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": int(seed), "datasets": []}
    for spec in specs:
        ds_root = root / spec.name
        for seq_idx, n_frames in enumerate(spec.frames_per_sequence, start=1):
            seq = f"{seq_idx:02d}"
            (ds_root / seq).mkdir(parents=True, exist_ok=True)
            seg_dir = ds_root / f"{seq}_GT" / "SEG"
            seg_dir.mkdir(parents=True, exist_ok=True)
            gen = rngmod.stream(seed, "synth", spec.name, seq)
            for frame in range(n_frames):
                raw, labels = _draw_frame(spec, gen)
                write_image(ds_root / seq / f"t{frame:03d}.tif", raw)
                write_label_mask(labels, seg_dir / f"man_seg{frame:03d}.tif")
        manifest["datasets"].append(asdict(spec))
    (root / "corpus.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest

"""CTC-style dataset ingestion and result writers.

On-disk layout (one dataset root):

    <root>/
        01/ t000.tif ...            raw frames (2D pages or multi-page 3D stacks)
        02/ ...
        01_GT/SEG/ man_seg000.tif   human ground-truth instance masks (sparse)
        01_ST/SEG/ man_seg000.tif   silver-truth instance masks (dense)

Frames may also be stored as plain-text PGM (P2) files, which keeps test
fixtures free of binary tooling. Raw intensities are read as unsigned
integers (up to 16 bit) and promoted to float64 before normalization.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DecodeError, LayoutError, MissingAnnotationError, PipelineError

_FRAME_RE = re.compile(r"^t(\d+)\.(tif|tiff|pgm)$", re.IGNORECASE)
_SEG_RE = re.compile(r"^man_seg(\d+)\.(tif|tiff|pgm)$", re.IGNORECASE)

SPLIT_CONFIGS = ("GT-only", "ST-only", "GT+ST", "allGT", "allST", "allGT+allST")


# ---------------------------------------------------------------------------
# image files


def read_pgm(path: Path) -> np.ndarray:
    """Read an ASCII (P2) portable graymap as a uint array."""
    try:
        tokens = []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    except OSError as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from exc
    if not tokens or tokens[0] != "P2":
        raise DecodeError(f"{path}: not an ASCII PGM (P2) file")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        values = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise DecodeError(f"{path}: malformed PGM header or data") from exc
    if values.size != width * height:
        raise DecodeError(f"{path}: expected {width * height} pixels, got {values.size}")
    dtype = np.uint8 if maxval < 256 else np.uint16
    return values.reshape(height, width).astype(dtype)


def write_pgm(path: Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise PipelineError("PGM supports 2D images only")
    maxval = 255 if image.dtype == np.uint8 else 65535
    lines = [f"P2\n{image.shape[1]} {image.shape[0]}\n{maxval}"]
    for row in image:
        lines.append(" ".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_image(path: Path) -> np.ndarray:
    """Read a raw frame. Returns a 2D array, or 3D (z, y, x) for stacks."""
    path = Path(path)
    if not path.exists():
        raise DecodeError(f"image file not found: {path}")
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    import tifffile

    try:
        data = tifffile.imread(path)
    except Exception as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    data = np.asarray(data)
    if data.ndim not in (2, 3):
        raise DecodeError(f"{path}: expected a 2D image or 3D stack, got shape {data.shape}")
    return data


def write_image(path: Path, image: np.ndarray) -> None:
    """Write a 2D image or a 3D stack (multi-page TIFF)."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, image)
        return
    import tifffile

    tifffile.imwrite(path, np.asarray(image))


# ---------------------------------------------------------------------------
# dataset descriptors


@dataclass
class SequenceDescriptor:
    id: str
    frame_count: int
    resolution: tuple[int, int]  # (width, height)
    gt_frames: tuple[int, ...]
    st_frames: tuple[int, ...]
    frame_paths: dict[int, Path] = field(default_factory=dict)
    gt_paths: dict[int, Path] = field(default_factory=dict)
    st_paths: dict[int, Path] = field(default_factory=dict)
    intensity_min: float | None = None
    intensity_max: float | None = None


@dataclass
class DatasetDescriptor:
    name: str
    root: Path
    dimensionality: str  # "2D" or "3D"
    sequences: list[SequenceDescriptor]

    def sequence(self, seq_id: str) -> SequenceDescriptor:
        for seq in self.sequences:
            if seq.id == seq_id:
                return seq
        raise LayoutError(f"dataset {self.name}: no sequence {seq_id!r}")


def _index_files(directory: Path, pattern: re.Pattern) -> dict[int, Path]:
    found = {}
    for entry in sorted(directory.iterdir()):
        m = pattern.match(entry.name)
        if m:
            found[int(m.group(1))] = entry
    return found


def scan_dataset(root: Path) -> DatasetDescriptor:
    """Enumerate sequences, frames, and available annotations under root.

    Intensity extrema stay unset until a normalization pass reads the pixels.
    """
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"dataset root does not exist: {root}")
    seq_dirs = sorted(d for d in root.iterdir() if d.is_dir() and d.name.isdigit())
    if not seq_dirs:
        raise LayoutError(f"{root}: no sequence directories (expected e.g. 01/, 02/)")

    sequences = []
    dimensionality = "2D"
    for seq_dir in seq_dirs:
        frames = _index_files(seq_dir, _FRAME_RE)
        if not frames:
            raise LayoutError(f"{seq_dir}: sequence directory contains no frames (tNNN.tif)")
        first = read_image(frames[min(frames)])
        if first.ndim == 3:
            dimensionality = "3D"
            resolution = (first.shape[2], first.shape[1])
        else:
            resolution = (first.shape[1], first.shape[0])
        gt_dir = root / f"{seq_dir.name}_GT" / "SEG"
        st_dir = root / f"{seq_dir.name}_ST" / "SEG"
        gt_paths = _index_files(gt_dir, _SEG_RE) if gt_dir.is_dir() else {}
        st_paths = _index_files(st_dir, _SEG_RE) if st_dir.is_dir() else {}
        n_frames = len(frames)
        for kind, paths in (("GT", gt_paths), ("ST", st_paths)):
            bad = [f for f in paths if f not in frames]
            if bad:
                raise LayoutError(
                    f"{root.name}/{seq_dir.name}: {kind} annotation for missing frame(s) {bad}"
                )
        sequences.append(
            SequenceDescriptor(
                id=seq_dir.name,
                frame_count=n_frames,
                resolution=resolution,
                gt_frames=tuple(sorted(gt_paths)),
                st_frames=tuple(sorted(st_paths)),
                frame_paths=frames,
                gt_paths=gt_paths,
                st_paths=st_paths,
            )
        )
    return DatasetDescriptor(
        name=root.name, root=root, dimensionality=dimensionality, sequences=sequences
    )


# ---------------------------------------------------------------------------
# normalization and slicing


def normalize_sequence(frames: list[np.ndarray]) -> tuple[list[np.ndarray], tuple[float, float]]:
    """Map a whole sequence affinely to [0, 1] by its global intensity extrema.

    The extrema are taken over all pixels of all frames, so relative
    brightness between frames is preserved.
    """
    if not frames:
        raise PipelineError("normalize_sequence: empty sequence")
    lo = min(float(np.min(f)) for f in frames)
    hi = max(float(np.max(f)) for f in frames)
    if not lo < hi:
        raise PipelineError(
            f"degenerate intensity range: sequence is constant at {lo}, cannot normalize"
        )
    scale = 1.0 / (hi - lo)
    out = [(np.asarray(f, dtype=np.float64) - lo) * scale for f in frames]
    return out, (lo, hi)


def slice_stack(volume: np.ndarray) -> list[np.ndarray]:
    """Split a (z, y, x) stack into its z-planes, order preserved."""
    volume = np.asarray(volume)
    if volume.ndim != 3 or volume.shape[0] < 1:
        raise PipelineError(f"slice_stack: expected a (z, y, x) stack, got shape {volume.shape}")
    return [volume[z] for z in range(volume.shape[0])]


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitItem:
    dataset: str
    sequence: str
    frame: int
    kind: str  # "GT" or "ST"


@dataclass
class SplitPlan:
    config: str
    train: list[SplitItem]
    valid: list[SplitItem]


def _annotated(desc: DatasetDescriptor, kind: str) -> list[tuple[str, int]]:
    frames = []
    for seq in desc.sequences:
        have = seq.gt_frames if kind == "GT" else seq.st_frames
        frames.extend((seq.id, f) for f in have)
    return sorted(frames)


def _ninety_ten(desc: DatasetDescriptor, kind: str) -> tuple[list[SplitItem], list[SplitItem]]:
    # Deterministic 90/10: rank frames by (sequence, frame index); every rank
    # divisible by 10 goes to validation, starting with rank 0.
    frames = _annotated(desc, kind)
    if not frames:
        raise MissingAnnotationError(f"dataset {desc.name} has no {kind} annotations")
    train, valid = [], []
    for rank, (seq, frame) in enumerate(frames):
        item = SplitItem(desc.name, seq, frame, kind)
        (valid if rank % 10 == 0 else train).append(item)
    return train, valid


def build_split(descriptors: list[DatasetDescriptor], config: str) -> SplitPlan:
    """Apply the per-configuration train/validation splitting rules."""
    if config not in SPLIT_CONFIGS:
        raise PipelineError(f"unknown split config {config!r}; expected one of {SPLIT_CONFIGS}")
    train: list[SplitItem] = []
    valid: list[SplitItem] = []
    for desc in descriptors:
        if config in ("GT-only", "allGT"):
            t, v = _ninety_ten(desc, "GT")
        elif config in ("ST-only", "allST"):
            t, v = _ninety_ten(desc, "ST")
        else:  # GT+ST, allGT+allST: train on all ST frames, validate on all GT frames
            st = _annotated(desc, "ST")
            gt = _annotated(desc, "GT")
            if not st:
                raise MissingAnnotationError(f"dataset {desc.name} has no ST annotations")
            if not gt:
                raise MissingAnnotationError(f"dataset {desc.name} has no GT annotations")
            t = [SplitItem(desc.name, s, f, "ST") for s, f in st]
            v = [SplitItem(desc.name, s, f, "GT") for s, f in gt]
        train.extend(t)
        valid.extend(v)
    plan = SplitPlan(config=config, train=train, valid=valid)
    overlap = set(plan.train) & set(plan.valid)
    if overlap:
        raise PipelineError(f"split overlap between train and valid: {sorted(overlap)[:3]}")
    return plan


# ---------------------------------------------------------------------------
# result writers


def read_label_mask(path: Path) -> np.ndarray:
    """Read an instance mask as int32 (2D, or 3D for stacks)."""
    data = read_image(path)
    return np.asarray(data, dtype=np.int32)


def write_label_mask(labels: np.ndarray, path: Path) -> None:
    """Write an instance mask as a 16-bit image; pixel value = instance id."""
    labels = np.asarray(labels)
    if labels.size and int(labels.max()) >= 65536:
        raise PipelineError(f"id overflow: instance id {int(labels.max())} does not fit in 16 bits")
    if labels.size and int(labels.min()) < 0:
        raise PipelineError("negative instance id in label mask")
    write_image(Path(path), labels.astype(np.uint16))


def write_track_file(tracks, path: Path) -> None:
    """Write one "L B E P" line per track record, sorted by label.

    Accepts any iterable of records with (id, begin, end, parent) fields or
    4-tuples.
    """
    rows = []
    for rec in tracks:
        if hasattr(rec, "id"):
            row = (int(rec.id), int(rec.begin), int(rec.end), int(rec.parent))
        else:
            row = tuple(int(v) for v in rec)
        if row[1] > row[2]:
            raise PipelineError(f"track {row[0]}: begin {row[1]} > end {row[2]}")
        rows.append(row)
    labels = [r[0] for r in rows]
    if len(set(labels)) != len(labels):
        dup = sorted({l for l in labels if labels.count(l) > 1})
        raise PipelineError(f"duplicate track id(s): {dup}")
    rows.sort()
    text = "".join(f"{l} {b} {e} {p}\n" for l, b, e, p in rows)
    Path(path).write_text(text)


def read_track_file(path: Path) -> list[tuple[int, int, int, int]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            l, b, e, p = line.split()
            rows.append((int(l), int(b), int(e), int(p)))
    return rows

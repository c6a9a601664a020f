"""Frame-to-frame cell tracking.

Each segmented instance is summarized by morphological features (centroid,
intensity-weighted centroid, area, max intensity, equivalent radius,
convex-hull solidity, second-moment ellipse aspect ratio). Candidate pairs
between consecutive frames are gated by centroid displacement; the returned
matching is the gated assignment of maximum cardinality with minimum total
cost, where cost is a weighted Euclidean distance in z-scored feature space.
Unmatched instances end or start tracks; masks are finally renumbered by
track id with their pixel support untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from skimage.measure import regionprops

from .errors import ShapeError, TrackingError

_FORBIDDEN = 1e12


@dataclass
class CellFeatures:
    instance_id: int
    centroid: tuple[float, float]  # (row, col)
    weighted_centroid: tuple[float, float]
    area: float
    max_intensity: float
    equivalent_radius: float  # sqrt(area / pi)
    solidity: float
    aspect_ratio: float  # major / minor axis of the moment ellipse, >= 1

    def vector(self) -> np.ndarray:
        return np.array(
            [
                self.centroid[0],
                self.centroid[1],
                self.weighted_centroid[0],
                self.weighted_centroid[1],
                self.area,
                self.max_intensity,
                self.equivalent_radius,
                self.solidity,
                self.aspect_ratio,
            ]
        )


#: weight per feature-vector entry: centroids full weight, shape features half
DEFAULT_FEATURE_WEIGHTS = np.array([1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5])


@dataclass
class MatchParams:
    gate_radius: float = 50.0
    feature_weights: np.ndarray = field(default_factory=lambda: DEFAULT_FEATURE_WEIGHTS.copy())
    normalize: bool = True  # z-score features over the frame pair

    def __post_init__(self):
        if self.gate_radius <= 0:
            raise TrackingError("gate_radius must be > 0")
        self.feature_weights = np.asarray(self.feature_weights, dtype=np.float64)
        if self.feature_weights.min() < 0:
            raise TrackingError("feature weights must be non-negative")


def extract_features(labels: np.ndarray, image: np.ndarray | None = None) -> list[CellFeatures]:
    """One feature record per instance, ordered by instance id."""
    labels = np.asarray(labels, dtype=np.int32)
    if image is None:
        image = np.ones(labels.shape)
    image = np.asarray(image, dtype=np.float64)
    if image.shape != labels.shape:
        raise ShapeError(f"label/image shape mismatch: {labels.shape} vs {image.shape}")
    out = []
    for region in regionprops(labels, intensity_image=image):
        area = float(region.area)
        centroid = (float(region.centroid[0]), float(region.centroid[1]))
        wc = region.centroid_weighted
        if np.any(np.isnan(wc)):  # zero total intensity
            wc = centroid
        major, minor = float(region.axis_major_length), float(region.axis_minor_length)
        if minor < 1e-9:
            # degenerate (single pixel or collinear): fall back to a
            # round shape rather than an infinite ratio
            aspect = 1.0 if major < 1e-9 else max(1.0, area)
        else:
            aspect = max(1.0, major / minor)
        out.append(
            CellFeatures(
                instance_id=int(region.label),
                centroid=centroid,
                weighted_centroid=(float(wc[0]), float(wc[1])),
                area=area,
                max_intensity=float(region.intensity_max),
                equivalent_radius=float(np.sqrt(area / np.pi)),
                solidity=float(region.solidity),
                aspect_ratio=float(aspect),
            )
        )
    return out


def _cost_matrix(
    a: list[CellFeatures], b: list[CellFeatures], params: MatchParams
) -> tuple[np.ndarray, np.ndarray]:
    """(cost, candidate mask); non-candidates get a forbidding cost."""
    fa = np.stack([c.vector() for c in a])
    fb = np.stack([c.vector() for c in b])
    ca = fa[:, :2]
    cb = fb[:, :2]
    dist = np.sqrt(((ca[:, None, :] - cb[None, :, :]) ** 2).sum(-1))
    candidates = dist <= params.gate_radius

    if params.normalize:
        stacked = np.vstack([fa, fb])
        mu = stacked.mean(axis=0)
        sd = stacked.std(axis=0)
        sd[sd == 0] = 1.0  # constant feature carries no information
        fa = (fa - mu) / sd
        fb = (fb - mu) / sd
    diff = fa[:, None, :] - fb[None, :, :]
    cost = np.sqrt((params.feature_weights * diff**2).sum(-1))
    cost = np.where(candidates, cost, _FORBIDDEN)
    return cost, candidates


def match_frames(
    a: list[CellFeatures], b: list[CellFeatures], params: MatchParams | None = None
) -> list[tuple[int, int]]:
    """Optimal gated one-to-one matching between two frames.

    Among all matchings restricted to gated candidate pairs, returns one of
    maximum cardinality and minimum total cost. Unmatched cells on either
    side are allowed.
    """
    params = params or MatchParams()
    if not a or not b:
        return []
    cost, candidates = _cost_matrix(a, b, params)
    if not candidates.any():
        return []
    rows, cols = linear_sum_assignment(cost)
    pairs = []
    for i, j in zip(rows, cols):
        if candidates[i, j]:
            pairs.append((a[i].instance_id, b[j].instance_id))
    return pairs


@dataclass
class TrackRecord:
    id: int
    begin: int
    end: int
    parent: int = 0


@dataclass
class TrackSet:
    tracks: list[TrackRecord]
    frame_maps: list[dict[int, int]]  # per frame: instance id -> track id


def build_tracks(
    matches_per_pair: list[list[tuple[int, int]]],
    instances_per_frame: list[list[int]],
) -> TrackSet:
    """Chain frame-pair matches into tracks.

    instances_per_frame lists instance ids in birth-priority order (raster
    order in this pipeline). Track ids are assigned in order of track birth.
    """
    n_frames = len(instances_per_frame)
    if len(matches_per_pair) != max(0, n_frames - 1):
        raise TrackingError(
            f"need {max(0, n_frames - 1)} match lists for {n_frames} frames, "
            f"got {len(matches_per_pair)}"
        )
    tracks: list[TrackRecord] = []
    frame_maps: list[dict[int, int]] = []
    next_id = 1

    for frame in range(n_frames):
        mapping: dict[int, int] = {}
        if frame > 0:
            prev_map = frame_maps[frame - 1]
            seen_a: set[int] = set()
            seen_b: set[int] = set()
            for ida, idb in matches_per_pair[frame - 1]:
                if ida in seen_a or idb in seen_b:
                    raise TrackingError(
                        f"inconsistent matches at frame pair {frame - 1}->{frame}: "
                        f"instance reused"
                    )
                seen_a.add(ida)
                seen_b.add(idb)
                if ida not in prev_map:
                    raise TrackingError(
                        f"match references unknown instance {ida} in frame {frame - 1}"
                    )
                if idb not in instances_per_frame[frame]:
                    raise TrackingError(
                        f"match references unknown instance {idb} in frame {frame}"
                    )
                track_id = prev_map[ida]
                mapping[idb] = track_id
                tracks[track_id - 1].end = frame
        for inst in instances_per_frame[frame]:
            if inst not in mapping:
                tracks.append(TrackRecord(id=next_id, begin=frame, end=frame, parent=0))
                mapping[inst] = next_id
                next_id += 1
        frame_maps.append(mapping)
    return TrackSet(tracks=tracks, frame_maps=frame_maps)


def relabel_by_track(masks: list[np.ndarray], trackset: TrackSet) -> list[np.ndarray]:
    """Replace instance ids by track ids; pixel support is untouched."""
    if len(masks) != len(trackset.frame_maps):
        raise TrackingError(
            f"{len(masks)} masks vs {len(trackset.frame_maps)} tracked frames"
        )
    out = []
    for frame, (mask, mapping) in enumerate(zip(masks, trackset.frame_maps)):
        mask = np.asarray(mask, dtype=np.int32)
        ids = np.unique(mask)
        ids = ids[ids > 0]
        missing = [int(i) for i in ids if int(i) not in mapping]
        if missing:
            raise TrackingError(f"frame {frame}: unmapped instance id(s) {missing}")
        lut_size = int(ids.max()) + 1 if ids.size else 1
        lut = np.zeros(lut_size, dtype=np.int32)
        for inst, track in mapping.items():
            if inst < lut_size:
                lut[inst] = track
        out.append(lut[mask])
    return out


def track_sequence(
    masks: list[np.ndarray],
    images: list[np.ndarray] | None = None,
    params: MatchParams | None = None,
) -> tuple[TrackSet, list[np.ndarray]]:
    """Feature extraction + matching + track building + relabeling."""
    params = params or MatchParams()
    if images is None:
        images = [None] * len(masks)
    features = [extract_features(m, img) for m, img in zip(masks, images)]
    instances = [[f.instance_id for f in frame] for frame in features]
    matches = [
        match_frames(features[t], features[t + 1], params) for t in range(len(masks) - 1)
    ]
    trackset = build_tracks(matches, instances)
    return trackset, relabel_by_track(masks, trackset)

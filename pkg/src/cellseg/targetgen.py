"""Tertiary training targets from instance label maps.

Each annotated frame is converted into a 3-class map (background / boundary /
cell). Per instance: the dilation ring that falls on true background becomes
boundary, the instance body becomes cell, and body pixels inside the erosion
band that lie close to a different instance are flipped back to boundary so
that touching cells stay separable as connected components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import PipelineError

CLASS_BACKGROUND = 0
CLASS_BOUNDARY = 1
CLASS_CELL = 2

_SQUARE = np.ones((3, 3), dtype=bool)
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def structuring_element(name: str) -> np.ndarray:
    if name == "square":
        return _SQUARE
    if name == "cross":
        return _CROSS
    raise PipelineError(f"unknown structuring element {name!r} (use 'square' or 'cross')")


@dataclass
class MorphParams:
    """Morphology settings for target generation.

    dilate_iters defaults to 2 for 2D data and 5 for data sliced from 3D
    stacks. contact_distance is in Chebyshev pixels.
    """

    dilate_iters: int = 2
    erode_iters: int = 2
    contact_distance: int = 2
    element: str = "square"

    def __post_init__(self):
        if self.dilate_iters < 0 or self.erode_iters < 0:
            raise PipelineError("morphology iteration counts must be >= 0")
        if self.contact_distance < 1:
            raise PipelineError("contact_distance must be >= 1")
        structuring_element(self.element)

    @classmethod
    def for_dimensionality(cls, dimensionality: str, **overrides) -> "MorphParams":
        dilate = 5 if dimensionality == "3D" else 2
        params = {"dilate_iters": dilate}
        params.update(overrides)
        return cls(**params)


def dilate(mask: np.ndarray, iters: int = 1, element: str = "square") -> np.ndarray:
    """Iterated binary dilation; pixels outside the image are background."""
    mask = np.asarray(mask, dtype=bool)
    if iters == 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=structuring_element(element), iterations=iters)


def erode(mask: np.ndarray, iters: int = 1, element: str = "square") -> np.ndarray:
    """Iterated binary erosion; pixels outside the image count as unset."""
    mask = np.asarray(mask, dtype=bool)
    if iters == 0:
        return mask.copy()
    return ndimage.binary_erosion(
        mask, structure=structuring_element(element), iterations=iters, border_value=0
    )


def build_tertiary(labels: np.ndarray, params: MorphParams | None = None) -> np.ndarray:
    """Convert an instance LabelMap into a 3-class target map (uint8).

    The result is independent of instance iteration order: boundary writes
    land either on true background (dilation rings) or on the instance's own
    erosion band, and cell writes only touch the instance's own pixels.
    """
    params = params or MorphParams()
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise PipelineError(f"build_tertiary: expected a 2D label map, got shape {labels.shape}")
    out = np.full(labels.shape, CLASS_BACKGROUND, dtype=np.uint8)
    background = labels == 0
    ids = np.unique(labels)
    ids = ids[ids > 0]
    foreground = labels > 0
    for cid in ids:
        mask = labels == cid
        ring = dilate(mask, params.dilate_iters, params.element) & background
        band = mask & ~erode(mask, params.erode_iters, params.element)
        out[ring] = CLASS_BOUNDARY
        out[mask] = CLASS_CELL
        # contact check uses the Chebyshev metric regardless of the
        # dilation/erosion element
        near_other = dilate(foreground & ~mask, params.contact_distance, "square")
        out[band & near_other] = CLASS_BOUNDARY
    return out

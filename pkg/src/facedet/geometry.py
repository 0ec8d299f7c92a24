"""Axis-aligned boxes in continuous pixel coordinates.

The convention everywhere in this package is exclusive: width = x2 - x1,
no +1 correction. Zero-area boxes are valid inputs and have IoU 0 against
everything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """A rectangle with x2 >= x1 and y2 >= y1, all coordinates finite."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate in {self!r}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"negative extent in {self!r}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


def boxes_to_array(boxes: list[Box]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array of x1, y1, x2, y2 rows."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.stack([b.as_array() for b in boxes])


def iou(a: Box, b: Box) -> float:
    """Intersection over union, 0.0 when the union has zero area.

    Uses the exact same arithmetic as `iou_matrix` so the two agree
    bit for bit.
    """
    iw = max(min(a.x2, b.x2) - max(a.x1, b.x1), 0.0)
    ih = max(min(a.y2, b.y2) - max(a.y1, b.y1), 0.0)
    inter = iw * ih
    union = (a.area + b.area) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two (N, 4) / (M, 4) arrays, returned as (N, M).

    Entry (i, j) equals iou(a[i], b[j]) exactly.
    """
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.maximum(
        np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0.0
    )
    ih = np.maximum(
        np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0.0
    )
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = (area_a[:, None] + area_b[None, :]) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def box_areas(boxes: np.ndarray) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])


def clip(b: Box, width: float, height: float) -> Box:
    """Clamp a box to [0, width] x [0, height]."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image dims must be positive, got {width}x{height}")
    return Box(
        min(max(b.x1, 0.0), width),
        min(max(b.y1, 0.0), height),
        min(max(b.x2, 0.0), width),
        min(max(b.y2, 0.0), height),
    )


def clip_boxes(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    """Vectorised `clip` over an (N, 4) array. Returns a new array."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image dims must be positive, got {width}x{height}")
    out = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    out[:, 0::2] = np.clip(out[:, 0::2], 0.0, width)
    out[:, 1::2] = np.clip(out[:, 1::2], 0.0, height)
    return out


def validate_boxes(boxes: np.ndarray, *, require_positive_area: bool = False) -> np.ndarray:
    """Check an (N, 4) array holds finite, non-inverted boxes; return float64 view."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if not np.isfinite(b).all():
        raise ValueError("non-finite box coordinates")
    w = b[:, 2] - b[:, 0]
    h = b[:, 3] - b[:, 1]
    if (w < 0).any() or (h < 0).any():
        raise ValueError("boxes with negative extent")
    if require_positive_area and ((w <= 0).any() or (h <= 0).any()):
        raise ValueError("boxes with zero width or height")
    return b

"""Anchor-to-face assignment.

An anchor is positive iff its best IoU against the ground truth is
strictly above 0.5 and the anchor lies fully inside the image. Anchors
whose best IoU is strictly below 0.3 (and that are inside the image) are
negative. Everything else, including every cross-boundary anchor, is
ignored. There is deliberately no best-anchor-per-ground-truth fallback:
a face whose size matches none of a module's anchors produces no
positive in that module, which is what specialises the heads by scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxcodec
from .anchors import AnchorSet, cross_boundary_mask
from .geometry import iou_matrix, validate_boxes

LABEL_IGNORE = -1
LABEL_NEGATIVE = 0
LABEL_POSITIVE = 1

POSITIVE_IOU = 0.5
NEGATIVE_IOU = 0.3


@dataclass
class MatchResult:
    """Per-anchor labels, matched ground-truth indices and regression targets.

    gt_index is -1 and targets are zero wherever the label is not positive.
    """

    module_id: int
    labels: np.ndarray    # (A,) int8 in {LABEL_IGNORE, LABEL_NEGATIVE, LABEL_POSITIVE}
    gt_index: np.ndarray  # (A,) int64
    targets: np.ndarray   # (A, 4) float64

    @property
    def num_anchors(self) -> int:
        return self.labels.shape[0]

    @property
    def positive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == LABEL_POSITIVE)

    @property
    def negative_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == LABEL_NEGATIVE)


def assign(
    anchors: AnchorSet,
    gt_boxes: np.ndarray,
    image_w: float,
    image_h: float,
    positive_iou: float = POSITIVE_IOU,
    negative_iou: float = NEGATIVE_IOU,
) -> MatchResult:
    """Label every anchor of one module against the faces of one image.

    gt_boxes is (G, 4) and may be empty; degenerate rows (zero width or
    height) must have been dropped at ingestion and are rejected here.
    Ties in the argmax over ground truths resolve to the lowest index.
    """
    gts = validate_boxes(gt_boxes, require_positive_area=True)
    n = len(anchors)
    inside = cross_boundary_mask(anchors, image_w, image_h)

    labels = np.full(n, LABEL_IGNORE, dtype=np.int8)
    gt_index = np.full(n, -1, dtype=np.int64)
    targets = np.zeros((n, 4), dtype=np.float64)

    if gts.shape[0] == 0:
        labels[inside] = LABEL_NEGATIVE
        return MatchResult(anchors.module_id, labels, gt_index, targets)

    overlaps = iou_matrix(anchors.boxes, gts)
    best = overlaps.argmax(axis=1)  # argmax takes the first maximum, lowest gt wins ties
    best_iou = overlaps[np.arange(n), best]

    labels[inside & (best_iou < negative_iou)] = LABEL_NEGATIVE
    positive = inside & (best_iou > positive_iou)
    labels[positive] = LABEL_POSITIVE
    gt_index[positive] = best[positive]
    if positive.any():
        targets[positive] = boxcodec.encode(gts[best[positive]], anchors.boxes[positive])
    return MatchResult(anchors.module_id, labels, gt_index, targets)

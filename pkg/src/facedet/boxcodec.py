"""Box regression parameterisation: scale-invariant translation plus
log-space size shift, relative to an anchor.

tx = (gcx - acx) / aw      ty = (gcy - acy) / ah
tw = log(gw / aw)          th = log(gh / ah)
"""

from __future__ import annotations

import math

import numpy as np

# Bound on |tw|, |th| before exponentiation at decode time. Keeps an
# untrained regressor from overflowing; configurable per call.
LOG_SIZE_CLAMP = math.log(1000.0 / 16.0)


def _center_size(boxes: np.ndarray):
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    w = b[:, 2] - b[:, 0]
    h = b[:, 3] - b[:, 1]
    cx = b[:, 0] + 0.5 * w
    cy = b[:, 1] + 0.5 * h
    return cx, cy, w, h


def encode(gt_boxes: np.ndarray, anchor_boxes: np.ndarray) -> np.ndarray:
    """Deltas that move each anchor onto the matching ground-truth box.

    Both inputs are (N, 4); both must have strictly positive width and
    height per row. Returns (N, 4) float64 deltas (tx, ty, tw, th).
    """
    gcx, gcy, gw, gh = _center_size(gt_boxes)
    acx, acy, aw, ah = _center_size(anchor_boxes)
    if gcx.shape != acx.shape:
        raise ValueError(f"box count mismatch: {gcx.shape[0]} vs {acx.shape[0]}")
    if (aw <= 0).any() or (ah <= 0).any():
        raise ValueError("anchors must have positive width and height")
    if (gw <= 0).any() or (gh <= 0).any():
        raise ValueError("ground-truth boxes must have positive width and height")
    return np.stack(
        [(gcx - acx) / aw, (gcy - acy) / ah, np.log(gw / aw), np.log(gh / ah)], axis=1
    )


def decode(deltas: np.ndarray, anchor_boxes: np.ndarray, clamp: float = LOG_SIZE_CLAMP) -> np.ndarray:
    """Inverse of `encode`; size deltas are clamped to +-clamp first.

    The output may lie outside the image, callers clip downstream.
    """
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    acx, acy, aw, ah = _center_size(anchor_boxes)
    if d.shape[0] != acx.shape[0]:
        raise ValueError(f"delta count mismatch: {d.shape[0]} vs {acx.shape[0]}")
    if (aw <= 0).any() or (ah <= 0).any():
        raise ValueError("anchors must have positive width and height")
    cx = acx + d[:, 0] * aw
    cy = acy + d[:, 1] * ah
    w = np.exp(np.clip(d[:, 2], -clamp, clamp)) * aw
    h = np.exp(np.clip(d[:, 3], -clamp, clamp)) * ah
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)

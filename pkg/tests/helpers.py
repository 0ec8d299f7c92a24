"""Independent reference implementations shared by the unit tests and the
acceptance suite. Everything here is deliberately written the slow,
obvious way and stays decoupled from the production code paths.
"""

from __future__ import annotations

import math

import numpy as np

from facedet.anchors import AnchorConfig, AnchorSet, generate
from facedet.geometry import Box, iou
from facedet.matching import LABEL_IGNORE, LABEL_NEGATIVE, LABEL_POSITIVE


def rasterized_iou(a: Box, b: Box, cells_per_unit: int = 100) -> float:
    """Pixel-count IoU on a fine grid covering both boxes."""
    x_lo = min(a.x1, b.x1)
    y_lo = min(a.y1, b.y1)
    x_hi = max(a.x2, b.x2)
    y_hi = max(a.y2, b.y2)
    nx = max(1, int(round((x_hi - x_lo) * cells_per_unit)))
    ny = max(1, int(round((y_hi - y_lo) * cells_per_unit)))
    xs = x_lo + (np.arange(nx) + 0.5) / cells_per_unit
    ys = y_lo + (np.arange(ny) + 0.5) / cells_per_unit
    gx, gy = np.meshgrid(xs, ys)

    def inside(box):
        return (gx >= box.x1) & (gx < box.x2) & (gy >= box.y1) & (gy < box.y2)

    in_a = inside(a)
    in_b = inside(b)
    union = (in_a | in_b).sum()
    if union == 0:
        return 0.0
    return float((in_a & in_b).sum() / union)


def naive_anchor_grid(config: AnchorConfig, module_id: int, fw: int, fh: int) -> np.ndarray:
    """Triple-loop anchor generator mirroring the documented layout."""
    stride = config.stride_for(module_id)
    scales = config.scales_for(module_id)
    rows = []
    for r in range(fh):
        for c in range(fw):
            cx = (c + 0.5) * stride
            cy = (r + 0.5) * stride
            for s in scales:
                half = s * config.base_size / 2.0
                rows.append([cx - half, cy - half, cx + half, cy + half])
    return np.asarray(rows, dtype=np.float64)


def brute_force_assign(
    anchors: AnchorSet, gts: np.ndarray, image_w: float, image_h: float
) -> tuple[np.ndarray, np.ndarray]:
    """Double-loop assignment oracle: labels and matched gt per anchor."""
    n = len(anchors)
    labels = np.full(n, LABEL_IGNORE, dtype=np.int8)
    matched = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        x1, y1, x2, y2 = anchors.boxes[i]
        if x1 < 0 or y1 < 0 or x2 > image_w or y2 > image_h:
            continue  # cross boundary, stays ignore
        best_iou = -1.0
        best_j = -1
        for j in range(gts.shape[0]):
            v = iou(Box(*anchors.boxes[i]), Box(*gts[j]))
            if v > best_iou:
                best_iou = v
                best_j = j
        if gts.shape[0] == 0 or best_iou < 0.3:
            labels[i] = LABEL_NEGATIVE
        elif best_iou > 0.5:
            labels[i] = LABEL_POSITIVE
            matched[i] = best_j
    return labels, matched


def full_sort_ohem(scores, labels, batch: int, positive_fraction: float) -> np.ndarray:
    """Sort-everything mining oracle."""
    quota = math.ceil(positive_fraction * batch)
    pos = [(scores[i], i) for i in range(len(scores)) if labels[i] == LABEL_POSITIVE]
    neg = [(-scores[i], i) for i in range(len(scores)) if labels[i] == LABEL_NEGATIVE]
    pos.sort()
    neg.sort()
    chosen = [i for _, i in pos[: min(quota, len(pos))]]
    chosen += [i for _, i in neg[: max(0, batch - len(chosen))]]
    return np.asarray(sorted(chosen), dtype=np.int64)


def random_boxes(rng: np.random.Generator, n: int, span: float = 100.0) -> np.ndarray:
    xy = rng.uniform(0, span, size=(n, 2))
    wh = rng.uniform(1.0, span / 3, size=(n, 2))
    return np.concatenate([xy, xy + wh], axis=1)

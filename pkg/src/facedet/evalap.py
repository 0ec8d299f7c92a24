"""Detection scoring: greedy matching against ground truth, precision,
recall and all-point interpolated average precision.

Matching walks detections in global descending score order; within its
image each detection takes the highest-IoU still-unmatched ground truth
at IoU >= 0.5 (a hit), otherwise it is a false positive. Ground truths
marked as ignored (outside the active difficulty subset) absorb
detections silently: such detections count neither way.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import iou_matrix, validate_boxes

MATCH_IOU = 0.5


@dataclass
class GroundTruthDB:
    """Per-image face boxes plus an optional per-box ignore mask."""

    boxes: dict[str, np.ndarray]
    ignore: dict[str, np.ndarray] | None = None

    def num_active(self) -> int:
        total = 0
        for key, b in self.boxes.items():
            if self.ignore is None:
                total += b.shape[0]
            else:
                total += int((~self.ignore[key]).sum())
        return total


@dataclass
class PRCurve:
    """Raw points over descending score thresholds plus the final AP."""

    thresholds: np.ndarray
    recalls: np.ndarray
    precisions: np.ndarray
    ap: float


def load_wider_annotations(path: str | Path) -> dict[str, np.ndarray]:
    """Parse the annotation format: image path line, face count line, then
    count lines of "x y w h". Rows with w <= 0 or h <= 0 are dropped with
    a warning. Boxes convert to x1 y1 x2 y2 = x, y, x+w, y+h."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    out: dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        image_path = lines[pos].strip()
        count = int(lines[pos + 1])
        rows = []
        for i in range(count):
            vals = [float(v) for v in lines[pos + 2 + i].split()[:4]]
            x, y, w, h = vals
            if w <= 0 or h <= 0:
                warnings.warn(f"{image_path}: dropping degenerate row {vals}")
                continue
            rows.append([x, y, x + w, y + h])
        if image_path in out:
            raise ValueError(f"duplicate image key {image_path!r}")
        out[image_path] = (
            np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, 4))
        )
        pos += 2 + count
    return out


def subset_ignore_masks(
    full: dict[str, np.ndarray], subset: dict[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """Ignore masks marking faces of `full` that are absent from `subset`
    (matched by exact coordinates)."""
    masks = {}
    for key, boxes in full.items():
        sub = subset.get(key, np.zeros((0, 4)))
        mask = np.ones(boxes.shape[0], dtype=bool)
        for i, b in enumerate(boxes):
            if sub.shape[0] and (np.abs(sub - b).max(axis=1) < 1e-9).any():
                mask[i] = False
        masks[key] = mask
    return masks


def match_detections(
    det_boxes: dict[str, np.ndarray],
    det_scores: dict[str, np.ndarray],
    gt: GroundTruthDB,
    iou_threshold: float = MATCH_IOU,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Flag every detection as hit (1) or false positive (0).

    Returns (flags, scores, total_gt) with flags and scores sorted by
    descending score globally. Detections swallowed by ignored ground
    truths are excluded from the output entirely.
    """
    for key in det_boxes:
        if key not in gt.boxes:
            raise KeyError(f"no ground truth for image {key!r}")

    entries = []  # (-score, seq, key, local index)
    seq = 0
    for key in sorted(det_boxes):
        boxes = validate_boxes(det_boxes[key])
        scores = np.asarray(det_scores[key], dtype=np.float64).reshape(-1)
        if boxes.shape[0] != scores.shape[0]:
            raise ValueError(f"{key}: boxes/scores length mismatch")
        for i in range(boxes.shape[0]):
            entries.append((-scores[i], seq, key, i))
            seq += 1
    entries.sort(key=lambda e: (e[0], e[1]))

    matched: dict[str, np.ndarray] = {
        key: np.zeros(b.shape[0], dtype=bool) for key, b in gt.boxes.items()
    }
    overlaps: dict[str, np.ndarray] = {}
    flags = []
    scores_out = []
    for neg_score, _, key, i in entries:
        if key not in overlaps:
            overlaps[key] = iou_matrix(det_boxes[key], gt.boxes[key])
        row = overlaps[key][i]
        ignore_mask = (
            gt.ignore[key]
            if gt.ignore is not None
            else np.zeros(gt.boxes[key].shape[0], dtype=bool)
        )

        active = ~ignore_mask & ~matched[key]
        hit = -1
        if active.any():
            cand = np.flatnonzero(active)
            j = cand[row[cand].argmax()]
            if row[j] >= iou_threshold:
                hit = j
        if hit >= 0:
            matched[key][hit] = True
            flags.append(1)
            scores_out.append(-neg_score)
            continue
        # absorbed by an ignored face: drop silently
        if ignore_mask.any() and row[ignore_mask].max(initial=0.0) >= iou_threshold:
            continue
        flags.append(0)
        scores_out.append(-neg_score)

    return (
        np.asarray(flags, dtype=np.int8),
        np.asarray(scores_out, dtype=np.float64),
        gt.num_active(),
    )


def greedy_match_indices(
    boxes: np.ndarray,
    scores: np.ndarray,
    gt_boxes: np.ndarray,
    iou_threshold: float = MATCH_IOU,
) -> np.ndarray:
    """Single-image greedy matching: per detection, the index of the
    ground truth it claims, or -1. Matching never crosses images, so this
    reproduces the global-order assignment restricted to one image."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    g = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    out = np.full(b.shape[0], -1, dtype=np.int64)
    if b.shape[0] == 0 or g.shape[0] == 0:
        return out
    overlaps = iou_matrix(b, g)
    taken = np.zeros(g.shape[0], dtype=bool)
    for i in np.lexsort((np.arange(s.size), -s)):
        free = np.flatnonzero(~taken)
        if free.size == 0:
            break
        j = free[overlaps[i, free].argmax()]
        if overlaps[i, j] >= iou_threshold:
            out[i] = j
            taken[j] = True
    return out


def average_precision(
    flags: np.ndarray, total_gt: int, scores: np.ndarray | None = None
) -> PRCurve:
    """All-point interpolated AP over a score-ranked hit/miss stream.

    Precision is monotonised from the right and AP is the area under the
    resulting step curve. total_gt == 0 yields AP 0 with an empty curve.
    """
    f = np.asarray(flags, dtype=np.float64).reshape(-1)
    if total_gt < 0:
        raise ValueError("total_gt must be >= 0")
    if total_gt == 0 or f.size == 0:
        return PRCurve(np.zeros(0), np.zeros(0), np.zeros(0), 0.0)

    tp = np.cumsum(f)
    fp = np.cumsum(1.0 - f)
    recalls = tp / total_gt
    precisions = tp / (tp + fp)

    mono = precisions.copy()
    for i in range(mono.size - 2, -1, -1):
        mono[i] = max(mono[i], mono[i + 1])
    prev_r = np.concatenate([[0.0], recalls[:-1]])
    ap = float(((recalls - prev_r) * mono).sum())

    thr = (
        np.asarray(scores, dtype=np.float64).reshape(-1)
        if scores is not None
        else np.zeros(f.size)
    )
    return PRCurve(thr, recalls, precisions, ap)


def average_precision_reference(flags: np.ndarray, total_gt: int) -> float:
    """Independent rectangle-sum oracle: every hit contributes the best
    precision at or beyond its rank, divided by the ground-truth count."""
    f = np.asarray(flags, dtype=np.int64).reshape(-1)
    if total_gt <= 0 or f.size == 0:
        return 0.0
    precisions = np.cumsum(f) / np.arange(1, f.size + 1)
    total = 0.0
    for rank in range(f.size):
        if f[rank] == 1:
            total += precisions[rank:].max()
    return total / total_gt


def evaluate(
    det_boxes: dict[str, np.ndarray],
    det_scores: dict[str, np.ndarray],
    gt: GroundTruthDB,
    iou_threshold: float = MATCH_IOU,
) -> PRCurve:
    flags, scores, total = match_detections(det_boxes, det_scores, gt, iou_threshold)
    return average_precision(flags, total, scores)


def write_pr_csv(path, curve: PRCurve) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("threshold,recall,precision\n")
        for t, r, p in zip(curve.thresholds, curve.recalls, curve.precisions):
            f.write(f"{t:.6f},{r:.6f},{p:.6f}\n")
        f.write(f"AP,{curve.ap:.6f}\n")

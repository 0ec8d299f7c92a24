"""From raw head outputs to final detections.

Each head's logits become per-anchor face probabilities, every anchor's
regression output is decoded against it, the best 1000 per head survive,
and everything (all heads, and all pyramid levels when a pyramid is used)
goes through one joint greedy NMS at IoU 0.3 in original image
coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxcodec
from .anchors import generate_grid
from .geometry import clip_boxes, iou_matrix
from .imageio import resize_bilinear
from .network import (
    DetectionModuleOutput,
    DetectionNetwork,
    flatten_cls_map,
    flatten_reg_map,
    pad_to_stride,
)
from .tensornet import ops

DEFAULT_NMS_IOU = 0.3
DEFAULT_TOP_K = 1000
DEFAULT_SCORE_FLOOR = 0.01


@dataclass
class DetectionSet:
    """Final scored boxes, sorted by descending score (ties keep the
    merge order: pyramid level, then module, then anchor rank)."""

    boxes: np.ndarray       # (N, 4) float64, clipped to the original image
    scores: np.ndarray      # (N,) float64 in [0, 1]
    module_ids: np.ndarray  # (N,) int32, -1 when unknown (e.g. parsed from file)
    levels: np.ndarray      # (N,) int32, pyramid level index, -1 when unknown

    def __len__(self) -> int:
        return self.boxes.shape[0]

    @staticmethod
    def empty() -> "DetectionSet":
        return DetectionSet(
            np.zeros((0, 4)), np.zeros(0), np.zeros(0, np.int32), np.zeros(0, np.int32)
        )

    def equals(self, other: "DetectionSet") -> bool:
        return (
            np.array_equal(self.boxes, other.boxes)
            and np.array_equal(self.scores, other.scores)
            and np.array_equal(self.module_ids, other.module_ids)
            and np.array_equal(self.levels, other.levels)
        )


@dataclass(frozen=True)
class PyramidLevel:
    min_side: int
    max_side: int
    modules: tuple[int, ...]


@dataclass(frozen=True)
class PyramidPlan:
    levels: tuple[PyramidLevel, ...]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("a pyramid plan needs at least one level")
        mins = [lv.min_side for lv in self.levels]
        if any(b <= a for a, b in zip(mins, mins[1:])):
            raise ValueError(f"level min sides must be strictly increasing, got {mins}")
        for lv in self.levels:
            if lv.min_side <= 0 or lv.max_side <= 0:
                raise ValueError(f"level sizes must be positive: {lv}")
            if not lv.modules or any(m not in (1, 2, 3) for m in lv.modules):
                raise ValueError(f"bad module set in {lv}")
        if len(self.levels) > 1 and 3 in self.levels[-1].modules:
            raise ValueError("the stride-32 head must be inactive at the largest pyramid level")


# Level sizes follow the published schedule; per-level long-side caps keep
# the 2:3 envelope of the base normalisation, except the 1200 level which
# pairs with 1600 exactly like single-scale operation.
DEFAULT_PYRAMID = PyramidPlan(
    (
        PyramidLevel(500, 750, (1, 2, 3)),
        PyramidLevel(800, 1200, (1, 2, 3)),
        PyramidLevel(1200, 1600, (1, 2, 3)),
        PyramidLevel(1600, 2400, (1, 2)),
    )
)


def single_scale_factor(
    image_w: float, image_h: float, min_target: float = 1200.0, max_cap: float = 1600.0
) -> float:
    """Resize factor that pushes the short side toward min_target while
    keeping the long side at or under max_cap."""
    if image_w <= 0 or image_h <= 0:
        raise ValueError(f"image dims must be positive, got {image_w}x{image_h}")
    short = min(image_w, image_h)
    long = max(image_w, image_h)
    return min(min_target / short, max_cap / long)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy suppression; returns kept input indices, best score first.

    Repeatedly keeps the highest-scoring remaining box (ties resolve to
    the earlier input index) and drops every remaining box whose IoU with
    it exceeds the threshold.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = b.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    order = np.lexsort((np.arange(n), -s))
    x1, y1, x2, y2 = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.maximum(np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]), 0.0)
        ih = np.maximum(np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]), 0.0)
        inter = iw * ih
        union = areas[i] + areas[rest] - inter
        overlap = np.zeros_like(inter)
        np.divide(inter, union, out=overlap, where=union > 0)
        order = rest[overlap <= iou_threshold]
    return np.asarray(keep, dtype=np.int64)


def nms_reference(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """O(n^2) oracle: materialises the full pairwise IoU matrix up front,
    then walks the score order masking out suppressed rows."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = b.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    full = iou_matrix(b, b)
    alive = np.ones(n, dtype=bool)
    keep = []
    for i in np.lexsort((np.arange(n), -s)):
        if not alive[i]:
            continue
        keep.append(i)
        suppress = full[i] > iou_threshold
        suppress[i] = False
        alive &= ~suppress
    return np.asarray(keep, dtype=np.int64)


def decode_module(
    out: DetectionModuleOutput,
    anchors,
    image_w: float,
    image_h: float,
    top_k: int = DEFAULT_TOP_K,
    score_floor: float = DEFAULT_SCORE_FLOOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Scored, decoded, clipped boxes of one head, best top_k by score.

    Ties in the score ranking resolve to the lower anchor index. Returns
    (boxes (M, 4), scores (M,)) in the coordinates of the forward image.
    """
    k = out.cls_map.shape[1] // 2
    if len(anchors) != out.cls_map.shape[2] * out.cls_map.shape[3] * k:
        raise ValueError(
            f"anchor count {len(anchors)} does not match head output {out.cls_map.shape}"
        )
    probs = ops.softmax_pairs(out.cls_map)
    face_scores = flatten_cls_map(probs, k)[:, 1].astype(np.float64)
    deltas = flatten_reg_map(out.reg_map, k).astype(np.float64)

    keep = np.flatnonzero(face_scores >= score_floor)
    if keep.size == 0:
        return np.zeros((0, 4)), np.zeros(0)
    order = np.lexsort((keep, -face_scores[keep]))[:top_k]
    chosen = keep[order]
    boxes = boxcodec.decode(deltas[chosen], anchors.boxes[chosen])
    return clip_boxes(boxes, image_w, image_h), face_scores[chosen]


def _forward_at_factor(
    net: DetectionNetwork,
    image: np.ndarray,
    factor: float,
    modules: tuple[int, ...],
    top_k: int,
    score_floor: float,
) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Resize, run the graph, decode the requested heads, map the boxes
    back to original coordinates. Returns (module_id, boxes, scores)."""
    _, h, w = image.shape
    out_h = max(1, int(round(h * factor)))
    out_w = max(1, int(round(w * factor)))
    resized = resize_bilinear(image, out_h, out_w)
    padded = pad_to_stride(resized[None])
    outputs = net.forward(padded.astype(np.float32))

    fx = out_w / w
    fy = out_h / h
    results = []
    for out in outputs:
        if out.module_id not in modules:
            continue
        anchor_set = generate_grid(
            net.anchor_config.base_size,
            net.scales_for(out.module_id),
            out.stride,
            out.module_id,
            out.cls_map.shape[3],
            out.cls_map.shape[2],
        )
        boxes, scores = decode_module(out, anchor_set, out_w, out_h, top_k, score_floor)
        boxes[:, 0::2] /= fx
        boxes[:, 1::2] /= fy
        boxes = clip_boxes(boxes, w, h)
        # a box that clips to zero width or height carries no evidence
        # (zero-area IoU is 0 against everything), so it cannot be kept
        alive = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
        results.append((out.module_id, boxes[alive], scores[alive]))
    return results


def _finalize(
    parts: list[tuple[int, int, np.ndarray, np.ndarray]], iou_threshold: float
) -> DetectionSet:
    if not parts:
        return DetectionSet.empty()
    boxes = np.concatenate([p[2] for p in parts])
    scores = np.concatenate([p[3] for p in parts])
    module_ids = np.concatenate(
        [np.full(len(p[3]), p[1], dtype=np.int32) for p in parts]
    )
    levels = np.concatenate([np.full(len(p[3]), p[0], dtype=np.int32) for p in parts])
    if boxes.shape[0] == 0:
        return DetectionSet.empty()
    keep = nms(boxes, scores, iou_threshold)
    return DetectionSet(boxes[keep], scores[keep], module_ids[keep], levels[keep])


def detect_single_scale(
    net: DetectionNetwork,
    image: np.ndarray,
    min_target: float = 1200.0,
    max_cap: float = 1600.0,
    nms_iou: float = DEFAULT_NMS_IOU,
    top_k: int = DEFAULT_TOP_K,
    score_floor: float = DEFAULT_SCORE_FLOOR,
) -> DetectionSet:
    """One forward pass at the standard resize rule, all active heads."""
    _, h, w = image.shape
    factor = single_scale_factor(w, h, min_target, max_cap)
    parts = [
        (0, mid, boxes, scores)
        for mid, boxes, scores in _forward_at_factor(
            net, image, factor, net.active_module_ids, top_k, score_floor
        )
    ]
    return _finalize(parts, nms_iou)


def pyramid_detect(
    net: DetectionNetwork,
    image: np.ndarray,
    plan: PyramidPlan = DEFAULT_PYRAMID,
    nms_iou: float = DEFAULT_NMS_IOU,
    top_k: int = DEFAULT_TOP_K,
    score_floor: float = DEFAULT_SCORE_FLOOR,
) -> DetectionSet:
    """Run every pyramid level and fuse all boxes with one joint NMS.

    Levels resize independently of each other: factor =
    min(min_side / short, max_side / long) against the original image.
    """
    _, h, w = image.shape
    parts = []
    for idx, level in enumerate(plan.levels):
        modules = tuple(m for m in level.modules if m in net.active_module_ids)
        if not modules:
            continue
        factor = single_scale_factor(w, h, level.min_side, level.max_side)
        for mid, boxes, scores in _forward_at_factor(
            net, image, factor, modules, top_k, score_floor
        ):
            parts.append((idx, mid, boxes, scores))
    return _finalize(parts, nms_iou)


# ---------------------------------------------------------------------------
# detection file format: per image, a path line, a count line, then
# "x1 y1 x2 y2 score" rows with six decimals.

def write_detection_file(path, detections: dict[str, DetectionSet]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for image_path in sorted(detections):
            ds = detections[image_path]
            f.write(f"{image_path}\n{len(ds)}\n")
            for box, score in zip(ds.boxes, ds.scores):
                f.write(
                    f"{box[0]:.6f} {box[1]:.6f} {box[2]:.6f} {box[3]:.6f} {score:.6f}\n"
                )


def read_detection_file(path) -> dict[str, DetectionSet]:
    out: dict[str, DetectionSet] = {}
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f]
    pos = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        image_path = lines[pos].strip()
        count = int(lines[pos + 1])
        rows = np.zeros((count, 5))
        for i in range(count):
            rows[i] = [float(v) for v in lines[pos + 2 + i].split()]
        out[image_path] = DetectionSet(
            rows[:, :4],
            rows[:, 4],
            np.full(count, -1, dtype=np.int32),
            np.full(count, -1, dtype=np.int32),
        )
        pos += 2 + count
    return out

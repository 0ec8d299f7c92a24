"""SGD training loop wiring assignment, hard example mining and the
multi-task loss, scaled down to run on synthetic scenes on a CPU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import evalap
from .anchors import AnchorConfig, generate
from .errors import ConfigError, TrainingDiverged
from .inference import DetectionSet, detect_single_scale
from .losses import ModuleLossInput, total_loss
from .matching import LABEL_IGNORE, MatchResult, assign
from .network import (
    DetectionNetwork,
    flatten_cls_map,
    flatten_reg_map,
    pad_to_stride,
    unflatten_cls_grad,
    unflatten_reg_grad,
)
from .imageio import resize_bilinear
from .sampler import OhemConfig, select
from .synthdata import SynthScene
from .tensornet import ops


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.004
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iterations: int = 21000
    lr_drop_iteration: int = 18000
    lr_drop_factor: float = 10.0
    images_per_step: int = 1
    loss_lambda: float = 1.0
    use_ohem: bool = True
    freeze_first_stage: bool = False
    # training-time resize rule, same semantics as inference
    input_min_side: float = 1200.0
    input_max_side: float = 1600.0
    seed: int = 0
    divergence_threshold: float = 1e3

    def __post_init__(self):
        # 0 is allowed as the degenerate "frozen" run; negatives are not
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")
        if self.iterations < 1 or self.images_per_step < 1:
            raise ConfigError("iterations and images_per_step must be >= 1")
        if self.lr_drop_factor <= 0:
            raise ConfigError("lr_drop_factor must be positive")
        if self.input_min_side <= 0 or self.input_max_side <= 0:
            raise ConfigError("input sides must be positive")


def learning_rate_at(config: TrainConfig, iteration: int) -> float:
    lr = config.learning_rate
    if iteration >= config.lr_drop_iteration:
        lr /= config.lr_drop_factor
    return lr


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """v <- momentum*v + (g + wd*theta); theta <- theta - lr*v, in place.

    `state` holds one velocity buffer per parameter and is created on
    first use. Iteration order is by sorted name, so updates are
    deterministic.
    """
    for name in sorted(params):
        theta = params[name]
        g = grads[name]
        if not np.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient in {name}")
        v = state.get(name)
        if v is None:
            v = np.zeros_like(theta)
            state[name] = v
        v *= momentum
        v += g + weight_decay * theta
        theta -= lr * v


@dataclass
class TraceRow:
    iteration: int
    learning_rate: float
    total: float
    cls: float
    reg: float


@dataclass
class PreparedScene:
    """Everything about one scene that does not change across iterations."""

    padded: np.ndarray                 # (1, 3, Hp, Wp) float32 network input
    matches: dict[int, MatchResult]
    anchors: dict[int, object]
    head_dims: dict[int, tuple[int, int]]  # module -> (H, W) of its maps


def prepare_scene(
    net: DetectionNetwork,
    scene: SynthScene,
    resize_min: float,
    resize_max: float,
) -> PreparedScene:
    """Resize a scene to the training input size and precompute the
    per-module anchor assignment (it only depends on geometry)."""
    from .inference import single_scale_factor

    _, h, w = scene.image.shape
    factor = single_scale_factor(w, h, resize_min, resize_max)
    out_h = max(1, int(round(h * factor)))
    out_w = max(1, int(round(w * factor)))
    resized = resize_bilinear(scene.image, out_h, out_w)
    padded = pad_to_stride(resized[None]).astype(np.float32)

    gts = scene.boxes.copy()
    gts[:, 0::2] *= out_w / w
    gts[:, 1::2] *= out_h / h

    matches: dict[int, MatchResult] = {}
    anchor_sets: dict[int, object] = {}
    head_dims: dict[int, tuple[int, int]] = {}
    for mid in net.active_module_ids:
        stride = net.anchor_config.stride_for(mid)
        fh, fw = padded.shape[2] // stride, padded.shape[3] // stride
        cfg = net.anchor_config
        if net.backbone_config.only_m2:
            from .anchors import generate_grid

            aset = generate_grid(cfg.base_size, net.scales_for(mid), stride, mid, fw, fh)
        else:
            aset = generate(cfg, mid, fw, fh)
        matches[mid] = assign(aset, gts, out_w, out_h)
        anchor_sets[mid] = aset
        head_dims[mid] = (fh, fw)
    return PreparedScene(padded, matches, anchor_sets, head_dims)


def _loss_inputs_for(
    net: DetectionNetwork,
    outputs,
    prepared: PreparedScene,
    ohem: OhemConfig,
    use_ohem: bool,
) -> list[ModuleLossInput]:
    inputs = []
    for out in outputs:
        k = net.num_scales(out.module_id)
        logits = flatten_cls_map(out.cls_map, k).astype(np.float64)
        deltas = flatten_reg_map(out.reg_map, k).astype(np.float64)
        match = prepared.matches[out.module_id]
        if use_ohem:
            probs = ops.softmax_pairs(out.cls_map)
            face_scores = flatten_cls_map(probs, k)[:, 1].astype(np.float64)
            sample = select(face_scores, match, ohem)
        else:
            sample = np.flatnonzero(match.labels != LABEL_IGNORE)
        inputs.append(ModuleLossInput(logits, deltas, match, sample))
    return inputs


def train(
    net: DetectionNetwork,
    scenes: list[SynthScene],
    config: TrainConfig,
    ohem: OhemConfig = OhemConfig(),
) -> list[TraceRow]:
    """Run the full schedule over the scene list, cycling deterministically.

    Returns the per-iteration loss trace. Raises TrainingDiverged on a
    non-finite gradient or once the loss passes the divergence threshold.
    """
    prepared = [
        prepare_scene(net, sc, config.input_min_side, config.input_max_side) for sc in scenes
    ]
    params = net.parameters()
    frozen = {
        name for name in params if config.freeze_first_stage and name.startswith("backbone.stage1.")
    }
    state: dict[str, np.ndarray] = {}
    trace: list[TraceRow] = []

    for iteration in range(config.iterations):
        net.zero_grads()
        tot = cls_sum = reg_sum = 0.0
        for sub in range(config.images_per_step):
            scene_idx = (iteration * config.images_per_step + sub) % len(prepared)
            prep = prepared[scene_idx]
            outputs = net.forward(prep.padded)
            inputs = _loss_inputs_for(net, outputs, prep, ohem, config.use_ohem)
            value, grads = total_loss(inputs, lam=config.loss_lambda)
            tot += value.total
            cls_sum += sum(value.cls_terms)
            reg_sum += sum(value.reg_terms)

            head_grads = {}
            for out, (gl, gd) in zip(outputs, grads):
                k = net.num_scales(out.module_id)
                fh, fw = prep.head_dims[out.module_id]
                head_grads[out.module_id] = (
                    unflatten_cls_grad(gl.astype(np.float32), k, fh, fw),
                    unflatten_reg_grad(gd.astype(np.float32), k, fh, fw),
                )
            net.backward(head_grads)

        n = config.images_per_step
        tot, cls_sum, reg_sum = tot / n, cls_sum / n, reg_sum / n
        if not math.isfinite(tot) or tot > config.divergence_threshold:
            raise TrainingDiverged(
                f"loss {tot} at iteration {iteration} (threshold {config.divergence_threshold})"
            )

        lr = learning_rate_at(config, iteration)
        grad_arrays = {}
        for name, tensor in params.items():
            if name in frozen:
                continue
            g = tensor.grad
            grad_arrays[name] = (np.zeros_like(tensor.data) if g is None else g) / n
        sgd_step(
            {k: params[k].data for k in grad_arrays},
            grad_arrays,
            state,
            lr,
            config.momentum,
            config.weight_decay,
        )
        trace.append(TraceRow(iteration, lr, tot, cls_sum, reg_sum))
    return trace


def write_trace_csv(path, trace: list[TraceRow]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("iteration,learning_rate,total,cls,reg\n")
        for row in trace:
            f.write(
                f"{row.iteration},{row.learning_rate:.8f},{row.total:.8f},"
                f"{row.cls:.8f},{row.reg:.8f}\n"
            )


# ---------------------------------------------------------------------------
# toy-run evaluation helpers

@dataclass
class ToyMetrics:
    ap_overall: float
    ap_per_band: dict[int, float]
    band_tp_counts: dict[int, int]
    band_designated_counts: dict[int, int]
    detections: dict[str, DetectionSet] = field(repr=False, default_factory=dict)

    def attribution(self, band: int) -> float:
        tp = self.band_tp_counts.get(band, 0)
        if tp == 0:
            return 0.0
        return self.band_designated_counts.get(band, 0) / tp


DESIGNATED_MODULE = {0: 1, 1: 2, 2: 3}  # band -> detection module


def evaluate_toy(
    net: DetectionNetwork,
    scenes: list[SynthScene],
    resize_min: float = 216.0,
    resize_max: float = 288.0,
    iou: float = 0.5,
) -> ToyMetrics:
    """Detect on every scene at the training scale and score against the
    exact ground truth, overall, per band, and per-band module share."""
    keys = [f"scene{(i):03d}" for i in range(len(scenes))]
    det_sets = {}
    det_boxes = {}
    det_scores = {}
    gt_boxes = {}
    for key, scene in zip(keys, scenes):
        ds = detect_single_scale(net, scene.image, resize_min, resize_max)
        det_sets[key] = ds
        det_boxes[key] = ds.boxes
        det_scores[key] = ds.scores
        gt_boxes[key] = scene.boxes

    curve = evalap.evaluate(det_boxes, det_scores, evalap.GroundTruthDB(gt_boxes), iou)

    ap_band = {}
    for band in (0, 1, 2):
        ignore = {
            key: scene.bands != band for key, scene in zip(keys, scenes)
        }
        db = evalap.GroundTruthDB(gt_boxes, ignore)
        ap_band[band] = evalap.evaluate(det_boxes, det_scores, db, iou).ap

    tp_counts = {0: 0, 1: 0, 2: 0}
    designated = {0: 0, 1: 0, 2: 0}
    for key, scene in zip(keys, scenes):
        ds = det_sets[key]
        matched = evalap.greedy_match_indices(ds.boxes, ds.scores, scene.boxes, iou)
        for det_i, gt_i in enumerate(matched):
            if gt_i < 0:
                continue
            band = int(scene.bands[gt_i])
            tp_counts[band] += 1
            if int(ds.module_ids[det_i]) == DESIGNATED_MODULE[band]:
                designated[band] += 1
    return ToyMetrics(curve.ap, ap_band, tp_counts, designated, det_sets)

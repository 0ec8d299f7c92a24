"""Command line entry points.

Subcommands: detect, eval, train-toy, gradcheck, anchors-dump, pr-plot.
Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evalap, gradcheck
from .anchors import csv_rows, generate
from .config import (
    RunConfig,
    apply_override,
    config_from_dict,
    config_to_dict,
    default_config,
    load_config,
    toy_config,
)
from .errors import ConfigError, FacedetError
from .imageio import read_image
from .inference import (
    DEFAULT_PYRAMID,
    DetectionSet,
    detect_single_scale,
    pyramid_detect,
    read_detection_file,
    write_detection_file,
)
from .network import DetectionNetwork
from .synthdata import generate_dataset
from .training import train, write_trace_csv

IMAGE_SUFFIXES = {".png", ".ppm"}


def _resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        base = config_to_dict(load_config(args.config))
    elif getattr(args, "toy_defaults", False):
        base = config_to_dict(toy_config())
    else:
        base = config_to_dict(default_config())
    for spec in getattr(args, "set", None) or []:
        apply_override(base, spec)
    if getattr(args, "seed", None) is not None:
        base["train"]["seed"] = args.seed
        base["synth"]["seed"] = args.seed
    return config_from_dict(base)


def _build_network(cfg: RunConfig, weights: str | None) -> DetectionNetwork:
    net = DetectionNetwork(cfg.backbone, cfg.anchors, seed=cfg.train.seed)
    if weights:
        net.load(weights)
    return net


# ---------------------------------------------------------------------------

def cmd_anchors_dump(args) -> int:
    cfg = _resolve_config(args)
    try:
        feat_w, feat_h = (int(v) for v in args.feat.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--feat must look like WxH, got {args.feat!r}")
    anchors = generate(cfg.anchors, args.module, feat_w, feat_h)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for module, r, c, scale, x1, y1, x2, y2 in csv_rows(anchors):
            out.write(f"{module},{r},{c},{scale:g},{x1:g},{y1:g},{x2:g},{y2:g}\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_detect(args) -> int:
    cfg = _resolve_config(args)
    paths = sorted(
        p for p in Path(args.input).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise FacedetError(f"no .png/.ppm images under {args.input}")

    min_side = args.min_side if args.min_side is not None else cfg.infer.min_side
    max_side = args.max_side if args.max_side is not None else cfg.infer.max_side

    def detect_chunk(chunk: list[Path]) -> dict[str, DetectionSet]:
        net = _build_network(cfg, args.weights)  # one graph per worker
        out = {}
        for p in chunk:
            image = read_image(p)
            if args.pyramid:
                out[str(p)] = pyramid_detect(net, image, DEFAULT_PYRAMID, cfg.infer.nms_iou,
                                             cfg.infer.top_k, cfg.infer.score_floor)
            else:
                out[str(p)] = detect_single_scale(net, image, min_side, max_side,
                                                  cfg.infer.nms_iou, cfg.infer.top_k,
                                                  cfg.infer.score_floor)
        return out

    workers = max(1, min(args.jobs, len(paths)))
    chunks = [paths[i::workers] for i in range(workers)]
    detections: dict[str, DetectionSet] = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for result in pool.map(detect_chunk, chunks):
            detections.update(result)
    write_detection_file(args.out, detections)
    print(f"wrote {sum(len(d) for d in detections.values())} detections "
          f"for {len(paths)} images to {args.out}")
    return 0


def cmd_eval(args) -> int:
    gt_boxes = evalap.load_wider_annotations(args.gt)
    ignore = None
    if args.subset_gt:
        subset = evalap.load_wider_annotations(args.subset_gt)
        ignore = evalap.subset_ignore_masks(gt_boxes, subset)
    db = evalap.GroundTruthDB(gt_boxes, ignore)

    parsed = read_detection_file(args.dets)
    det_boxes = {k: v.boxes for k, v in parsed.items()}
    det_scores = {k: v.scores for k, v in parsed.items()}
    curve = evalap.evaluate(det_boxes, det_scores, db, args.iou)
    if args.pr_out:
        evalap.write_pr_csv(args.pr_out, curve)
    print(f"AP,{curve.ap:.6f}")
    return 0


def cmd_train_toy(args) -> int:
    if args.config:
        cfg = _resolve_config(args)
    else:
        args.toy_defaults = True
        cfg = _resolve_config(args)
    scenes = generate_dataset(cfg.synth)
    net = DetectionNetwork(cfg.backbone, cfg.anchors, seed=cfg.train.seed)
    trace = train(net, scenes, cfg.train, cfg.ohem)
    net.save(args.out)
    if args.trace:
        write_trace_csv(args.trace, trace)
    print(f"trained {cfg.train.iterations} iterations, final loss {trace[-1].total:.4f}, "
          f"weights -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    report, ok = gradcheck.main_report(instances=args.instances, base_seed=args.seed or 0)
    print(report)
    return 0 if ok else 3


def cmd_pr_plot(args) -> int:
    rows = []
    ap = None
    with open(args.input, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("threshold"):
                continue
            if line.startswith("AP,"):
                ap = float(line.split(",")[1])
                continue
            _, recall, precision = line.split(",")
            rows.append((float(recall), float(precision)))
    svg = render_pr_svg(rows, ap)
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def render_pr_svg(points: list[tuple[float, float]], ap: float | None) -> str:
    """Standalone SVG of a precision-recall curve, no external assets."""
    width, height, margin = 480, 480, 50
    span = width - 2 * margin

    def px(r, p):
        return margin + r * span, margin + (1.0 - p) * span

    path = ""
    if points:
        coords = [px(r, p) for r, p in points]
        path = "M" + " L".join(f"{x:.1f},{y:.1f}" for x, y in coords)
    ticks = []
    for i in range(6):
        v = i / 5
        x, y = px(v, 0.0)
        ticks.append(f'<text x="{x:.0f}" y="{height - margin + 18}" text-anchor="middle" '
                     f'font-size="11">{v:.1f}</text>')
        _, ty = px(0.0, v)
        ticks.append(f'<text x="{margin - 8}" y="{ty + 4:.0f}" text-anchor="end" '
                     f'font-size="11">{v:.1f}</text>')
    title = f"PR curve (AP = {ap:.4f})" if ap is not None else "PR curve"
    return f"""<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"
     viewBox="0 0 {width} {height}">
  <rect width="{width}" height="{height}" fill="white"/>
  <rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none"
        stroke="#888" stroke-width="1"/>
  <text x="{width / 2}" y="{margin - 16}" text-anchor="middle" font-size="14">{title}</text>
  <text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">recall</text>
  <text x="14" y="{height / 2}" text-anchor="middle" font-size="12"
        transform="rotate(-90 14 {height / 2})">precision</text>
  {''.join(ticks)}
  <path d="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>
</svg>
"""


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facedet")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value")
        p.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("anchors-dump", help="emit one module's anchor grid as CSV")
    add_common(p)
    p.add_argument("--module", type=int, required=True)
    p.add_argument("--feat", required=True, metavar="WxH")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_anchors_dump)

    p = sub.add_parser("detect", help="run detection over a directory of images")
    add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-side", type=float, default=None)
    p.add_argument("--max-side", type=float, default=None)
    p.add_argument("--pyramid", action="store_true")
    p.add_argument("--jobs", type=int, default=4)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("eval", help="score a detection file against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--subset-gt")
    p.add_argument("--pr-out")
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("train-toy", help="train on the synthetic dataset")
    add_common(p)
    p.add_argument("--out", required=True, help="output weight container")
    p.add_argument("--trace", help="per-iteration loss CSV")
    p.set_defaults(fn=cmd_train_toy)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("pr-plot", help="render an eval CSV as a standalone SVG")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pr_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FacedetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

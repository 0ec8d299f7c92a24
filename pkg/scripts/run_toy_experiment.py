#!/usr/bin/env python3
"""Train the toy detector and its two ablations, then report AP, per-band
AP, per-band module attribution and wall times as JSON.

Usage: python3 scripts/run_toy_experiment.py [--iterations N] [--out report.json]
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import time

from facedet.config import toy_config
from facedet.network import DetectionNetwork
from facedet.synthdata import generate_dataset
from facedet.training import evaluate_toy, train


def run_variant(name: str, cfg, scenes, only_m2=False, use_fusion=True):
    backbone = dataclasses.replace(cfg.backbone, only_m2=only_m2, use_fusion=use_fusion)
    net = DetectionNetwork(backbone, cfg.anchors, seed=cfg.train.seed)
    t0 = time.perf_counter()
    trace = train(net, scenes, cfg.train, cfg.ohem)
    train_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    metrics = evaluate_toy(
        net, scenes, cfg.train.input_min_side, cfg.train.input_max_side
    )
    eval_s = time.perf_counter() - t0
    report = {
        "name": name,
        "final_loss": trace[-1].total,
        "ap_overall": metrics.ap_overall,
        "ap_small": metrics.ap_per_band[0],
        "ap_medium": metrics.ap_per_band[1],
        "ap_large": metrics.ap_per_band[2],
        "tp_counts": {str(k): v for k, v in metrics.band_tp_counts.items()},
        "attribution": {str(b): metrics.attribution(b) for b in (0, 1, 2)},
        "train_seconds": round(train_s, 1),
        "eval_seconds": round(eval_s, 1),
    }
    print(json.dumps(report, indent=2))
    return report, net


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iterations", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    ap.add_argument("--skip-ablations", action="store_true")
    args = ap.parse_args()

    cfg = toy_config(args.seed)
    if args.iterations:
        cfg = dataclasses.replace(
            cfg,
            train=dataclasses.replace(
                cfg.train,
                iterations=args.iterations,
                lr_drop_iteration=int(args.iterations * 0.9),
            ),
        )
    scenes = generate_dataset(cfg.synth)

    reports = {}
    reports["default"], _ = run_variant("default", cfg, scenes)
    if not args.skip_ablations:
        reports["only_m2"], _ = run_variant("only_m2", cfg, scenes, only_m2=True)
        reports["fusion_off"], _ = run_variant("fusion_off", cfg, scenes, use_fusion=False)
        reports["deltas"] = {
            "only_m2_small_band_drop": reports["default"]["ap_small"]
            - reports["only_m2"]["ap_small"],
            "fusion_off_small_band_delta": reports["default"]["ap_small"]
            - reports["fusion_off"]["ap_small"],
        }
        print(json.dumps(reports["deltas"], indent=2))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(reports, f, indent=2)


if __name__ == "__main__":
    main()

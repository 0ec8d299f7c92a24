import numpy as np
import pytest

from facedet.anchors import AnchorConfig, cross_boundary_mask, generate
from facedet.matching import (
    LABEL_IGNORE,
    LABEL_NEGATIVE,
    LABEL_POSITIVE,
    assign,
)
from helpers import brute_force_assign

CFG = AnchorConfig()


def test_empty_gts_all_negative_inside():
    a = generate(CFG, 1, 8, 8)
    result = assign(a, np.zeros((0, 4)), 64, 64)
    inside = cross_boundary_mask(a, 64, 64)
    assert (result.labels[inside] == LABEL_NEGATIVE).all()
    assert (result.labels[~inside] == LABEL_IGNORE).all()


def test_anchor_equal_to_gt_is_positive_with_zero_target():
    a = generate(CFG, 2, 16, 16)
    idx = (8 * 16 + 8) * 2  # scale-4 anchor at cell (8,8): [104,104,168,168]
    gt = a.boxes[idx : idx + 1].copy()
    result = assign(a, gt, 256, 256)
    assert result.labels[idx] == LABEL_POSITIVE
    assert result.gt_index[idx] == 0
    assert np.allclose(result.targets[idx], 0.0)


def test_label_partition_and_dtype():
    rng = np.random.default_rng(3)
    a = generate(CFG, 1, 10, 10)
    gts = np.array([[20.0, 20.0, 52.0, 52.0], [5.0, 60.0, 21.0, 76.0]])
    result = assign(a, gts, 80, 80)
    assert set(np.unique(result.labels)) <= {LABEL_IGNORE, LABEL_NEGATIVE, LABEL_POSITIVE}
    assert result.labels.shape == (len(a),)
    # every positive carries a finite target and a valid gt index
    pos = result.positive_indices
    assert np.isfinite(result.targets[pos]).all()
    assert (result.gt_index[pos] >= 0).all()
    assert (result.gt_index[result.labels != LABEL_POSITIVE] == -1).all()


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        mid = int(rng.integers(1, 4))
        fw, fh = rng.integers(2, 8, size=2)
        a = generate(CFG, mid, int(fw), int(fh))
        img_w = float(fw * CFG.stride_for(mid))
        img_h = float(fh * CFG.stride_for(mid))
        n_gt = int(rng.integers(0, 10))
        side = CFG.base_size * rng.choice(CFG.scales_for(mid), size=n_gt)
        side = side * rng.uniform(0.6, 1.5, size=n_gt)
        xy = rng.uniform(-20, max(img_w, img_h), size=(n_gt, 2))
        gts = np.concatenate([xy, xy + side[:, None]], axis=1)
        result = assign(a, gts, img_w, img_h)
        labels, matched = brute_force_assign(a, gts, img_w, img_h)
        assert np.array_equal(result.labels, labels)
        assert np.array_equal(result.gt_index, matched)


def test_scale_specialisation_structural():
    # a 40px face can never be positive in the stride-32 head whose
    # anchors are 256 and 512 px
    a = generate(CFG, 3, 25, 25)
    gt = np.array([[400.0, 400.0, 440.0, 440.0]])
    result = assign(a, gt, 800, 800)
    assert (result.labels != LABEL_POSITIVE).all()
    # but it is positive somewhere in the stride-8 head (32px anchors)
    a1 = generate(CFG, 1, 100, 100)
    r1 = assign(a1, gt, 800, 800)
    assert (r1.labels == LABEL_POSITIVE).any()


def test_tie_breaks_to_lowest_gt_index():
    a = generate(CFG, 2, 16, 16)
    idx = 2 * (5 * 16 + 5)  # scale-4 anchor at cell (5,5)
    gt = a.boxes[idx : idx + 1]
    duplicated = np.concatenate([gt, gt])
    result = assign(a, duplicated, 256, 256)
    assert result.labels[idx] == LABEL_POSITIVE
    assert result.gt_index[idx] == 0


def test_determinism():
    a = generate(CFG, 1, 12, 12)
    gts = np.array([[10.0, 10.0, 42.0, 42.0]])
    r1 = assign(a, gts, 96, 96)
    r2 = assign(a, gts, 96, 96)
    assert np.array_equal(r1.labels, r2.labels)
    assert np.array_equal(r1.gt_index, r2.gt_index)
    assert np.array_equal(r1.targets, r2.targets)


def test_degenerate_gt_rejected():
    a = generate(CFG, 1, 4, 4)
    with pytest.raises(ValueError):
        assign(a, np.array([[5.0, 5.0, 5.0, 9.0]]), 32, 32)

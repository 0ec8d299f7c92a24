import math

import numpy as np
import pytest

from facedet import gradcheck
from facedet.losses import (
    ModuleLossInput,
    classification_loss,
    regression_loss,
    smooth_l1,
    smooth_l1_grad,
    total_loss,
)
from facedet.matching import LABEL_IGNORE, LABEL_NEGATIVE, LABEL_POSITIVE, MatchResult


def make_match(labels, targets=None):
    labels = np.asarray(labels, dtype=np.int8)
    n = labels.shape[0]
    t = np.zeros((n, 4)) if targets is None else np.asarray(targets, dtype=np.float64)
    gt = np.where(labels == LABEL_POSITIVE, 0, -1).astype(np.int64)
    return MatchResult(1, labels, gt, t)


def test_uniform_logits_give_log2():
    logits = np.zeros((3, 2))
    labels = np.array([1, 0, 1], dtype=np.int8)
    loss, grad = classification_loss(logits, labels, np.arange(3))
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert grad.shape == (3, 2)


def test_confident_logits_saturate_to_zero():
    logits = np.array([[0.0, 20.0], [20.0, 0.0]])
    labels = np.array([1, 0], dtype=np.int8)
    loss, _ = classification_loss(logits, labels, np.arange(2))
    assert loss < 1e-8


def test_empty_sample_is_zero():
    loss, grad = classification_loss(np.zeros((4, 2)), np.zeros(4, np.int8), np.array([], int))
    assert loss == 0.0 and not grad.any()
    match = make_match([LABEL_NEGATIVE] * 4)
    rloss, rgrad = regression_loss(np.ones((4, 4)), match, np.array([], int))
    assert rloss == 0.0 and not rgrad.any()


def test_regression_analytic_values():
    match = make_match([LABEL_POSITIVE])
    # one positive, one component off by 0.5: quadratic zone
    deltas = np.array([[0.5, 0.0, 0.0, 0.0]])
    loss, _ = regression_loss(deltas, match, np.array([0]))
    assert loss == pytest.approx(0.125, abs=1e-12)
    # off by 2.0: linear zone
    deltas = np.array([[2.0, 0.0, 0.0, 0.0]])
    loss, _ = regression_loss(deltas, match, np.array([0]))
    assert loss == pytest.approx(1.5, abs=1e-12)


def test_regression_zero_when_exact():
    match = make_match([LABEL_POSITIVE], targets=[[0.3, -0.2, 0.1, 0.4]])
    loss, grad = regression_loss(np.array([[0.3, -0.2, 0.1, 0.4]]), match, np.array([0]))
    assert loss == 0.0 and not grad.any()


def test_no_positives_in_sample_gives_zero_regression():
    match = make_match([LABEL_NEGATIVE, LABEL_POSITIVE])
    loss, grad = regression_loss(np.ones((2, 4)), match, np.array([0]))
    assert loss == 0.0 and not grad.any()


def test_smooth_l1_is_c1_at_one():
    below = 1.0 - 1e-12
    above = 1.0 + 1e-12
    assert smooth_l1(np.array([1.0]))[0] == 0.5
    assert abs(smooth_l1(np.array([below]))[0] - 0.5) < 1e-9
    assert abs(smooth_l1(np.array([above]))[0] - 0.5) < 1e-9
    assert smooth_l1_grad(np.array([below]))[0] == pytest.approx(1.0, abs=1e-9)
    assert smooth_l1_grad(np.array([above]))[0] == 1.0
    assert smooth_l1_grad(np.array([-above]))[0] == -1.0


def test_total_loss_linearity():
    match = make_match([LABEL_POSITIVE, LABEL_NEGATIVE])
    logits = np.array([[0.2, 0.6], [0.1, -0.4]])
    deltas = np.array([[0.5, 0, 0, 0], [0, 0, 0, 0.0]])
    inp = ModuleLossInput(logits, deltas, match, np.array([0, 1]))
    value, _ = total_loss([inp], lam=1.0)
    cls, _ = classification_loss(logits, match.labels, np.array([0, 1]))
    reg, _ = regression_loss(deltas, match, np.array([0, 1]))
    assert value.total == pytest.approx(cls + reg, abs=1e-12)
    value2, _ = total_loss([inp], lam=3.0)
    assert value2.total == pytest.approx(cls + 3 * reg, abs=1e-12)


def test_all_modules_empty():
    match = make_match([LABEL_IGNORE, LABEL_IGNORE])
    inp = ModuleLossInput(np.zeros((2, 2)), np.zeros((2, 4)), match, np.array([], int))
    value, grads = total_loss([inp, inp, inp])
    assert value.total == 0.0
    for gl, gd in grads:
        assert not gl.any() and not gd.any()


def test_negative_anchor_delta_perturbation_changes_nothing():
    match = make_match([LABEL_POSITIVE, LABEL_NEGATIVE])
    logits = np.zeros((2, 2))
    deltas = np.array([[0.5, 0, 0, 0], [0, 0, 0, 0.0]])
    sample = np.array([0, 1])
    base, _ = total_loss([ModuleLossInput(logits, deltas, match, sample)])
    poked = deltas.copy()
    poked[1] += 123.0
    after, grads = total_loss([ModuleLossInput(logits, poked, match, sample)])
    assert after.total == base.total
    assert not grads[0][1][1].any()


def test_ignored_anchor_logits_changes_nothing():
    match = make_match([LABEL_POSITIVE, LABEL_IGNORE])
    sample = np.array([0])
    logits = np.array([[0.3, -0.3], [0.0, 0.0]])
    base, _ = total_loss([ModuleLossInput(logits, np.zeros((2, 4)), match, sample)])
    poked = logits.copy()
    poked[1] = [50.0, -7.0]
    after, _ = total_loss([ModuleLossInput(poked, np.zeros((2, 4)), match, sample)])
    assert after.total == base.total


def test_sample_containing_ignore_rejected():
    match = make_match([LABEL_IGNORE])
    with pytest.raises(ValueError):
        ModuleLossInput(np.zeros((1, 2)), np.zeros((1, 4)), match, np.array([0]))


def test_normalizers_recorded():
    match = make_match([LABEL_POSITIVE, LABEL_POSITIVE, LABEL_NEGATIVE])
    inp = ModuleLossInput(np.zeros((3, 2)), np.zeros((3, 4)), match, np.arange(3))
    value, _ = total_loss([inp])
    assert value.n_cls == [3]
    assert value.n_reg == [2]


def test_gradients_match_finite_differences():
    worst = max(gradcheck.check_total_loss(seed) for seed in range(5))
    assert worst < gradcheck.LOSS_TOLERANCE

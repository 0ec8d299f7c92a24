"""Multi-task detection loss with exact analytic gradients.

Per module k, with mined anchor set A_k:

    L = sum_k 1/|A_k| sum_{i in A_k} ce(logits_i, label_i)
      + lam * sum_k 1/P_k sum_{i in A_k, positive} smooth_l1(delta_i - target_i)

where P_k counts the positives inside A_k. ce is the two-way softmax
cross entropy on raw logits. Modules with an empty A_k (or no positives,
for the second term) contribute zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matching import LABEL_IGNORE, LABEL_POSITIVE, MatchResult


@dataclass
class ModuleLossInput:
    """One module's raw head outputs plus its assignment and mined batch.

    logits is (A, 2) with column 1 the face class, deltas is (A, 4), and
    sample holds the mined anchor indices (ascending, no ignore labels).
    """

    logits: np.ndarray
    deltas: np.ndarray
    match: MatchResult
    sample: np.ndarray

    def __post_init__(self):
        a = self.match.num_anchors
        if self.logits.shape != (a, 2):
            raise ValueError(f"logits shape {self.logits.shape} != ({a}, 2)")
        if self.deltas.shape != (a, 4):
            raise ValueError(f"deltas shape {self.deltas.shape} != ({a}, 4)")
        s = np.asarray(self.sample)
        if s.size and (s.min() < 0 or s.max() >= a):
            raise ValueError("sample indices out of range")
        if s.size and (self.match.labels[s] == LABEL_IGNORE).any():
            raise ValueError("sample contains ignore-labelled anchors")


@dataclass
class LossValue:
    total: float
    lam: float
    cls_terms: list[float] = field(default_factory=list)
    reg_terms: list[float] = field(default_factory=list)
    n_cls: list[int] = field(default_factory=list)
    n_reg: list[int] = field(default_factory=list)


def smooth_l1(x: np.ndarray) -> np.ndarray:
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside; C1 at the joint."""
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def classification_loss(
    logits: np.ndarray, labels: np.ndarray, sample: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross entropy over the mined set.

    Returns the scalar loss and its gradient with respect to every logit
    row (zero outside the mined set). An empty mined set yields (0, 0).
    """
    logits = np.asarray(logits)
    grad = np.zeros_like(logits)
    sel = np.asarray(sample, dtype=np.int64)
    if sel.size == 0:
        return 0.0, grad
    lg = logits[sel]
    cls = np.asarray(labels)[sel].astype(np.int64)
    if ((cls != 0) & (cls != LABEL_POSITIVE)).any():
        raise ValueError("classification labels must be 0 or 1 inside the mined set")

    shifted = lg - lg.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    rows = np.arange(sel.size)
    loss = float(-logp[rows, cls].mean())

    p = np.exp(logp)
    p[rows, cls] -= 1.0
    grad[sel] = p / sel.size
    return loss, grad


def regression_loss(
    deltas: np.ndarray, match: MatchResult, sample: np.ndarray
) -> tuple[float, np.ndarray]:
    """Smooth-L1 over the positive members of the mined set, averaged by
    the positive count. Zero positives yield (0, 0)."""
    deltas = np.asarray(deltas)
    grad = np.zeros_like(deltas)
    sel = np.asarray(sample, dtype=np.int64)
    pos = sel[match.labels[sel] == LABEL_POSITIVE] if sel.size else sel
    if pos.size == 0:
        return 0.0, grad
    diff = deltas[pos] - match.targets[pos]
    loss = float(smooth_l1(diff).sum() / pos.size)
    grad[pos] = smooth_l1_grad(diff) / pos.size
    return loss, grad


def total_loss(
    inputs: list[ModuleLossInput], lam: float = 1.0
) -> tuple[LossValue, list[tuple[np.ndarray, np.ndarray]]]:
    """Combined loss over all active modules plus per-module head gradients.

    Returns (value, grads) with grads[k] = (d/dlogits_k, d/ddeltas_k);
    the regression gradient already carries the lam factor.
    """
    value = LossValue(total=0.0, lam=lam)
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for inp in inputs:
        cls_loss, cls_grad = classification_loss(inp.logits, inp.match.labels, inp.sample)
        reg_loss, reg_grad = regression_loss(inp.deltas, inp.match, inp.sample)
        sel = np.asarray(inp.sample, dtype=np.int64)
        value.cls_terms.append(cls_loss)
        value.reg_terms.append(reg_loss)
        value.n_cls.append(int(sel.size))
        value.n_reg.append(int((inp.match.labels[sel] == LABEL_POSITIVE).sum()) if sel.size else 0)
        value.total += cls_loss + lam * reg_loss
        grads.append((cls_grad, lam * reg_grad))
    return value, grads

"""Central finite-difference verification of every analytic backward pass.

Each check projects an op's output onto a fixed random direction to get a
scalar, differentiates that scalar numerically element by element, and
compares against the hand-written backward. All checks run in float64 so
the comparison measures the math, not rounding; the kernels themselves
are dtype generic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .losses import ModuleLossInput, total_loss
from .matching import LABEL_IGNORE, LABEL_NEGATIVE, LABEL_POSITIVE, MatchResult
from .tensornet import ops

EPS = 1e-3
OP_TOLERANCE = 1e-3
LOSS_TOLERANCE = 1e-4


def numeric_gradient(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # the floor guards components whose true gradient is ~0, where the
    # quotient would amplify quadrature noise
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float((np.abs(analytic - numeric) / denom).max())


def _spaced_values(rng: np.random.Generator, shape) -> np.ndarray:
    """Distinct values with pairwise gaps of 0.01 and nothing within
    2.5e-3 of zero, so kinked ops (relu, max pool) stay locally linear
    under +-eps probes."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) + 0.5) * 0.01
    vals -= vals.mean()
    vals = np.where(np.abs(vals) < 2.5e-3, vals + np.sign(vals + 1e-12) * 5e-3, vals)
    return vals.reshape(shape)


# ---------------------------------------------------------------------------
# per-op checks; each returns the max relative error over all inputs

def check_conv2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    k = 3 if seed % 2 == 0 else 1
    cout = 1 + seed % 4
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(cout, 3, k, k)) * 0.5
    b = rng.normal(size=cout)
    proj = rng.normal(size=(2, cout, 6, 6))

    def scalar():
        y, _ = ops.conv2d_forward(x, w, b, (k - 1) // 2)
        return float((y * proj).sum())

    _, cache = ops.conv2d_forward(x, w, b, (k - 1) // 2)
    dx, dw, db = ops.conv2d_backward(proj, cache)
    return max(
        max_relative_error(dx, numeric_gradient(scalar, x)),
        max_relative_error(dw, numeric_gradient(scalar, w)),
        max_relative_error(db, numeric_gradient(scalar, b)),
    )


def check_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _spaced_values(rng, (2, 3, 6, 6))
    proj = rng.normal(size=x.shape)

    def scalar():
        y, _ = ops.relu_forward(x)
        return float((y * proj).sum())

    _, mask = ops.relu_forward(x)
    return max_relative_error(ops.relu_backward(proj, mask), numeric_gradient(scalar, x))


def check_maxpool(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _spaced_values(rng, (2, 3, 6, 6))
    proj = rng.normal(size=(2, 3, 3, 3))

    def scalar():
        y, _ = ops.maxpool2x2_forward(x)
        return float((y * proj).sum())

    _, cache = ops.maxpool2x2_forward(x)
    return max_relative_error(
        ops.maxpool2x2_backward(proj, cache), numeric_gradient(scalar, x)
    )


def check_upsample(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 6, 6))
    proj = rng.normal(size=(2, 3, 12, 12))

    def scalar():
        y, _ = ops.upsample_bilinear_2x_forward(x)
        return float((y * proj).sum())

    _, cache = ops.upsample_bilinear_2x_forward(x)
    return max_relative_error(
        ops.upsample_bilinear_2x_backward(proj, cache), numeric_gradient(scalar, x)
    )


def check_add(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 6, 6))
    y = rng.normal(size=(2, 3, 6, 6))
    proj = rng.normal(size=x.shape)

    def scalar():
        z, _ = ops.add_forward(x, y)
        return float((z * proj).sum())

    dx, dy = ops.add_backward(proj)
    return max(
        max_relative_error(dx, numeric_gradient(scalar, x)),
        max_relative_error(dy, numeric_gradient(scalar, y)),
    )


def check_concat(seed: int) -> float:
    rng = np.random.default_rng(seed)
    xs = [rng.normal(size=(2, c, 6, 6)) for c in (2, 3, 1)]
    proj = rng.normal(size=(2, 6, 6, 6))

    def scalar():
        z, _ = ops.concat_channels_forward(xs)
        return float((z * proj).sum())

    _, sizes = ops.concat_channels_forward(xs)
    grads = ops.concat_channels_backward(proj, sizes)
    return max(
        max_relative_error(g, numeric_gradient(scalar, x)) for g, x in zip(grads, xs)
    )


def check_softmax_pairs(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 4, 6, 6))
    proj = rng.normal(size=x.shape)

    def scalar():
        return float((ops.softmax_pairs(x) * proj).sum())

    p = ops.softmax_pairs(x)
    return max_relative_error(
        ops.softmax_pairs_backward(proj, p), numeric_gradient(scalar, x)
    )


def _random_loss_instance(rng: np.random.Generator, num_anchors: int):
    labels = rng.choice(
        [LABEL_IGNORE, LABEL_NEGATIVE, LABEL_POSITIVE], size=num_anchors, p=[0.2, 0.5, 0.3]
    ).astype(np.int8)
    targets = np.zeros((num_anchors, 4))
    pos = np.flatnonzero(labels == LABEL_POSITIVE)
    targets[pos] = rng.normal(size=(pos.size, 4)) * 0.5
    gt_index = np.where(labels == LABEL_POSITIVE, 0, -1).astype(np.int64)
    match = MatchResult(1, labels, gt_index, targets)

    logits = rng.normal(size=(num_anchors, 2))
    diffs = rng.uniform(-2.5, 2.5, size=(num_anchors, 4))
    # keep smooth-l1 probes away from its |x| = 1 joint
    diffs = np.where(np.abs(np.abs(diffs) - 1.0) < 0.02, diffs + np.sign(diffs) * 0.05, diffs)
    deltas = targets + diffs

    eligible = np.flatnonzero(labels != LABEL_IGNORE)
    take = max(1, int(rng.integers(1, eligible.size + 1))) if eligible.size else 0
    sample = np.sort(rng.choice(eligible, size=take, replace=False)) if take else eligible
    return ModuleLossInput(logits, deltas, match, sample)


def check_total_loss(seed: int) -> float:
    rng = np.random.default_rng(1000 + seed)
    num_modules = 1 + seed % 3
    lam = (0.5, 1.0, 2.0)[seed % 3]
    inputs = [_random_loss_instance(rng, int(rng.integers(6, 24))) for _ in range(num_modules)]

    def scalar():
        value, _ = total_loss(inputs, lam=lam)
        return value.total

    _, grads = total_loss(inputs, lam=lam)
    worst = 0.0
    for inp, (gl, gd) in zip(inputs, grads):
        worst = max(worst, max_relative_error(gl, numeric_gradient(scalar, inp.logits)))
        worst = max(worst, max_relative_error(gd, numeric_gradient(scalar, inp.deltas)))
    return worst


# ---------------------------------------------------------------------------

@dataclass
class CheckReport:
    name: str
    instances: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


OP_CHECKS = {
    "conv2d": check_conv2d,
    "relu": check_relu,
    "maxpool2x2": check_maxpool,
    "upsample_bilinear_2x": check_upsample,
    "add": check_add,
    "concat_channels": check_concat,
    "softmax_pairs": check_softmax_pairs,
}


def run_all(instances: int = 20, base_seed: int = 0) -> list[CheckReport]:
    reports = []
    for name, fn in OP_CHECKS.items():
        worst = max(fn(base_seed + i) for i in range(instances))
        reports.append(CheckReport(name, instances, worst, OP_TOLERANCE))
    worst = max(check_total_loss(base_seed + i) for i in range(instances))
    reports.append(CheckReport("total_loss", instances, worst, LOSS_TOLERANCE))
    return reports


def main_report(instances: int = 20, base_seed: int = 0) -> tuple[str, bool]:
    start = time.perf_counter()
    reports = run_all(instances, base_seed)
    elapsed = time.perf_counter() - start
    lines = [f"{'check':<22}{'instances':>10}{'max rel err':>14}{'tolerance':>11}  status"]
    ok = True
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        ok = ok and r.passed
        lines.append(
            f"{r.name:<22}{r.instances:>10}{r.max_error:>14.3e}{r.tolerance:>11.0e}  {status}"
        )
    lines.append(f"finished in {elapsed:.1f}s")
    return "\n".join(lines), ok

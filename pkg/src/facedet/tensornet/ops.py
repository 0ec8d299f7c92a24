"""Forward/backward kernels for the fixed detection graph.

Every op works on NCHW ndarrays, is deterministic (fixed reduction
order, first-maximum pooling ties) and preserves the input dtype, so the
same code runs the float32 network and the float64 gradient checks.
Convolutions are stride 1 with 1x1 or 3x3 kernels and dim-preserving
padding; downsampling happens only in the 2x2 max pool.
"""

from __future__ import annotations

import numpy as np


def _check_4d(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{name} must be NCHW, got shape {x.shape}")


# ---------------------------------------------------------------------------
# conv2d

def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, H*W) patch matrix for stride-1 conv."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, k, k, h, w), strides=(sn, sc, sh, sw, sh, sw), writeable=False
    )
    return np.ascontiguousarray(view).reshape(n, c * k * k, h * w)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, padding: int):
    """Stride-1 convolution. weight is (Cout, Cin, k, k), k in {1, 3},
    padding must keep spatial dims ((k - 1) // 2)."""
    _check_4d(x, "x")
    cout, cin, kh, kw = weight.shape
    if kh != kw or kh not in (1, 3):
        raise ValueError(f"kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if padding != (kh - 1) // 2:
        raise ValueError(f"padding {padding} does not preserve dims for k={kh}")
    n, c, h, w = x.shape
    if c != cin:
        raise ValueError(f"input channels {c} != weight Cin {cin}")

    wmat = weight.reshape(cout, cin * kh * kw)
    if kh == 1:
        cols = x.reshape(n, c, h * w)
    else:
        cols = _im2col(x, kh, padding)
    y = np.einsum("ok,nkl->nol", wmat, cols, optimize=True)
    y += bias[None, :, None]
    y = y.reshape(n, cout, h, w)
    cache = (x.shape, cols, weight, padding)
    return y, cache


def conv2d_backward(dy: np.ndarray, cache, need_dx: bool = True):
    """Gradients of conv2d: (dx, dweight, dbias). dx is None if skipped."""
    x_shape, cols, weight, padding = cache
    n, cin, h, w = x_shape
    cout, _, kh, kw = weight.shape
    dyf = dy.reshape(n, cout, h * w)

    dbias = dyf.sum(axis=(0, 2))
    dwmat = np.einsum("nol,nkl->ok", dyf, cols, optimize=True)
    dweight = dwmat.reshape(weight.shape)

    dx = None
    if need_dx:
        if kh == 1:
            dx = np.einsum("ok,nol->nkl", weight.reshape(cout, cin), dyf, optimize=True)
            dx = dx.reshape(x_shape)
        else:
            # full correlation with the flipped, channel-swapped kernel
            wt = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            cols_dy = _im2col(dy, kh, padding)
            dx = np.einsum(
                "ok,nkl->nol", wt.reshape(cin, cout * kh * kw), cols_dy, optimize=True
            ).reshape(x_shape)
    return dx, dweight, dbias


# ---------------------------------------------------------------------------
# relu

def relu_forward(x: np.ndarray):
    y = np.maximum(x, 0)
    return y, x > 0


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


# ---------------------------------------------------------------------------
# maxpool 2x2, stride 2 (floor semantics: odd trailing row/col dropped)

def maxpool2x2_forward(x: np.ndarray):
    _check_4d(x, "x")
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise ValueError(f"spatial dims too small to pool: {h}x{w}")
    win = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = win.argmax(axis=-1)  # first maximum wins ties
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2x2_backward(dy: np.ndarray, cache) -> np.ndarray:
    idx, x_shape = cache
    n, c, h, w = x_shape
    ho, wo = h // 2, w // 2
    dwin = np.zeros((n, c, ho, wo, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, : 2 * ho, : 2 * wo] = (
        dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    )
    return dx


# ---------------------------------------------------------------------------
# bilinear 2x upsampling, half-pixel sampling (output p reads input at
# (p + 0.5) / 2 - 0.5, clamped at the borders)

def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    src = (np.arange(n_out, dtype=np.float64) + 0.5) / 2.0 - 0.5
    lo = np.floor(src).astype(np.int64)
    t = src - lo
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo_c), 1.0 - t)
    np.add.at(m, (rows, hi_c), t)
    return m.astype(dtype)


def upsample_bilinear_2x_forward(x: np.ndarray):
    _check_4d(x, "x")
    n, c, h, w = x.shape
    rm = _interp_matrix(2 * h, h, x.dtype)
    cm = _interp_matrix(2 * w, w, x.dtype)
    y = np.einsum("ij,ncjk,lk->ncil", rm, x, cm, optimize=True)
    return y, (rm, cm)


def upsample_bilinear_2x_backward(dy: np.ndarray, cache) -> np.ndarray:
    rm, cm = cache
    return np.einsum("ij,ncil,lk->ncjk", rm, dy, cm, optimize=True)


# ---------------------------------------------------------------------------
# add / concat

def add_forward(x: np.ndarray, y: np.ndarray):
    if x.shape != y.shape:
        raise ValueError(f"add shape mismatch: {x.shape} vs {y.shape}")
    return x + y, None


def add_backward(dy: np.ndarray):
    return dy, dy


def concat_channels_forward(xs: list[np.ndarray]):
    if not xs:
        raise ValueError("concat of nothing")
    base = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != base[0] or x.shape[2:] != base[2:]:
            raise ValueError("concat inputs must share N, H, W")
    sizes = [x.shape[1] for x in xs]
    return np.concatenate(xs, axis=1), sizes


def concat_channels_backward(dy: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    return list(np.split(dy, np.cumsum(sizes)[:-1], axis=1))


# ---------------------------------------------------------------------------
# per-anchor two-way softmax over channel pairs (2K channels -> 2K probs)

def softmax_pairs(x: np.ndarray) -> np.ndarray:
    """Softmax over each (background, face) channel pair of a 2K-channel map."""
    _check_4d(x, "x")
    n, c, h, w = x.shape
    if c % 2:
        raise ValueError(f"channel count must be even, got {c}")
    z = x.reshape(n, c // 2, 2, h, w)
    z = z - z.max(axis=2, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=2, keepdims=True)).reshape(x.shape)


def softmax_pairs_backward(dy: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Pullback through softmax_pairs given its output probabilities."""
    n, c, h, w = probs.shape
    p = probs.reshape(n, c // 2, 2, h, w)
    g = dy.reshape(p.shape)
    inner = (g * p).sum(axis=2, keepdims=True)
    return (p * (g - inner)).reshape(dy.shape)

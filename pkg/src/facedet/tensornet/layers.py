"""Thin layer objects over the kernels in ops.py.

A layer stashes whatever its backward pass needs during forward, so each
instance is single-writer: one forward, then the matching backward.
Parameter gradients accumulate on the Tensors; call zero_grad between
steps.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


class Conv2d:
    def __init__(
        self,
        cin: int,
        cout: int,
        kernel: int,
        rng: np.random.Generator,
        weight_std: float | None = None,
    ):
        if weight_std is None:
            # He fan-in scaling
            weight_std = float(np.sqrt(2.0 / (cin * kernel * kernel)))
        w = rng.normal(0.0, weight_std, size=(cout, cin, kernel, kernel))
        self.weight = Tensor(w)
        self.bias = Tensor(np.zeros(cout))
        self.padding = (kernel - 1) // 2
        self._cache = None
        self._need_dx = True

    def forward(self, x: np.ndarray, need_input_grad: bool = True) -> np.ndarray:
        y, cache = ops.conv2d_forward(x, self.weight.data, self.bias.data, self.padding)
        self._cache = cache
        self._need_dx = need_input_grad
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray | None:
        dx, dw, db = ops.conv2d_backward(dy, self._cache, need_dx=self._need_dx)
        self.weight.accumulate_grad(dw)
        self.bias.accumulate_grad(db)
        self._cache = None
        return dx

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._mask = ops.relu_forward(x)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.relu_backward(dy, self._mask)


class MaxPool2x2:
    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._cache = ops.maxpool2x2_forward(x)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.maxpool2x2_backward(dy, self._cache)


class UpsampleBilinear2x:
    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._cache = ops.upsample_bilinear_2x_forward(x)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.upsample_bilinear_2x_backward(dy, self._cache)

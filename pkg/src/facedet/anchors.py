"""Dense square anchor grids for the three per-stride detection heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor layout: one scale set per detection module, one stride each.

    Anchor side length is scale * base_size. The defaults place sides
    {16, 32} on the stride-8 head, {64, 128} on stride 16 and {256, 512}
    on stride 32. Finer or custom scale sets are accepted as long as each
    set is strictly increasing.
    """

    base_size: float = 16.0
    scales: tuple[tuple[float, ...], ...] = ((1.0, 2.0), (4.0, 8.0), (16.0, 32.0))
    strides: tuple[int, ...] = (8, 16, 32)

    def __post_init__(self):
        if self.base_size <= 0:
            raise ConfigError(f"base_size must be positive, got {self.base_size}")
        if len(self.scales) != len(self.strides):
            raise ConfigError("one scale set per stride is required")
        for ss in self.scales:
            if len(ss) == 0:
                raise ConfigError("empty scale set")
            if any(s <= 0 for s in ss):
                raise ConfigError(f"scales must be positive, got {ss}")
            if any(b <= a for a, b in zip(ss, ss[1:])):
                raise ConfigError(f"scales must be strictly increasing, got {ss}")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ConfigError(f"strides must be strictly increasing, got {self.strides}")

    @property
    def num_modules(self) -> int:
        return len(self.strides)

    def module_ids(self) -> tuple[int, ...]:
        return tuple(range(1, self.num_modules + 1))

    def scales_for(self, module_id: int) -> tuple[float, ...]:
        self._check_module(module_id)
        return self.scales[module_id - 1]

    def stride_for(self, module_id: int) -> int:
        self._check_module(module_id)
        return self.strides[module_id - 1]

    def union_scales(self) -> tuple[float, ...]:
        """All scale sets merged, sorted; used when only one head is kept."""
        return tuple(sorted({s for ss in self.scales for s in ss}))

    def _check_module(self, module_id: int) -> None:
        if module_id not in self.module_ids():
            raise ConfigError(f"invalid module id {module_id}, have {self.module_ids()}")


@dataclass(frozen=True)
class AnchorSet:
    """All anchors of one module over a feature grid, in image coordinates.

    Layout is row-major over (row, col, scale): the anchor at feature cell
    (r, c) with scale index s sits at flat index (r * W + c) * K + s.
    """

    module_id: int
    feature_w: int
    feature_h: int
    stride: int
    scales: tuple[float, ...]
    boxes: np.ndarray  # (W*H*K, 4) float64

    def __len__(self) -> int:
        return self.boxes.shape[0]

    @property
    def num_scales(self) -> int:
        return len(self.scales)


def generate(config: AnchorConfig, module_id: int, feature_w: int, feature_h: int) -> AnchorSet:
    """Build the anchor grid of one module for a feature map of W x H cells.

    The anchor for cell (row r, col c) and scale s is the square of side
    s * base_size centred at ((c + 0.5) * stride, (r + 0.5) * stride).
    """
    return generate_grid(
        config.base_size,
        config.scales_for(module_id),
        config.stride_for(module_id),
        module_id,
        feature_w,
        feature_h,
    )


def generate_grid(
    base_size: float,
    scales: tuple[float, ...],
    stride: int,
    module_id: int,
    feature_w: int,
    feature_h: int,
) -> AnchorSet:
    """Anchor grid from explicit parameters (no config indirection)."""
    if feature_w < 1 or feature_h < 1:
        raise ValueError(f"feature dims must be >= 1, got {feature_w}x{feature_h}")

    cx = (np.arange(feature_w, dtype=np.float64) + 0.5) * stride
    cy = (np.arange(feature_h, dtype=np.float64) + 0.5) * stride
    half = 0.5 * base_size * np.asarray(scales, dtype=np.float64)  # (K,)

    # centres broadcast to (H, W, K), then offset by the per-scale half side
    cxg = np.broadcast_to(cx[None, :, None], (feature_h, feature_w, len(scales)))
    cyg = np.broadcast_to(cy[:, None, None], (feature_h, feature_w, len(scales)))
    hg = np.broadcast_to(half[None, None, :], cxg.shape)

    boxes = np.stack([cxg - hg, cyg - hg, cxg + hg, cyg + hg], axis=-1)
    return AnchorSet(
        module_id=module_id,
        feature_w=feature_w,
        feature_h=feature_h,
        stride=stride,
        scales=tuple(scales),
        boxes=boxes.reshape(-1, 4),
    )


def cross_boundary_mask(anchors: AnchorSet, image_w: float, image_h: float) -> np.ndarray:
    """Boolean mask, True where the anchor lies entirely inside [0,w] x [0,h]."""
    if image_w <= 0 or image_h <= 0:
        raise ValueError(f"image dims must be positive, got {image_w}x{image_h}")
    b = anchors.boxes
    return (b[:, 0] >= 0) & (b[:, 1] >= 0) & (b[:, 2] <= image_w) & (b[:, 3] <= image_h)


def csv_rows(anchors: AnchorSet):
    """Yield (module, row, col, scale, x1, y1, x2, y2) per anchor, layout order."""
    k = anchors.num_scales
    for i in range(len(anchors)):
        cell, s = divmod(i, k)
        r, c = divmod(cell, anchors.feature_w)
        x1, y1, x2, y2 = anchors.boxes[i]
        yield (anchors.module_id, r, c, anchors.scales[s], x1, y1, x2, y2)

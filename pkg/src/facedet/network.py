"""The detection graph: micro backbone, feature fusion, context blocks and
the three per-stride detection heads.

Strides are fixed by construction: the stride-8 and stride-16 backbone
features feed heads 1 and 2, and a 2x2 stride-2 max pool on the stride-16
features feeds head 3 at stride 32. Head 1 sits on the fused map (both
backbone maps reduced by 1x1 convs, the deeper one bilinearly upsampled
2x, summed, then a 3x3 conv) unless fusion is disabled, in which case it
reads the stride-8 features directly. The single-head ablation keeps only
head 2 with the union of all anchor scale sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import AnchorConfig
from .errors import ConfigError
from .tensornet.layers import Conv2d, MaxPool2x2, ReLU, UpsampleBilinear2x
from .tensornet.tensor import Tensor
from .tensornet.weights import load_weights, save_weights

HEAD_INIT_STD = 0.01
NETWORK_STRIDE = 32
MODULE_STRIDES = {1: 8, 2: 16, 3: 32}


@dataclass(frozen=True)
class BackboneConfig:
    """Widths and toggles of the graph.

    stage_channels are the three backbone stage widths (outputs at strides
    4, 8 and 16). context_channels is the per-head context width X, split
    X/2 + X/2 across the two context branches.
    """

    stage_channels: tuple[int, int, int] = (16, 32, 64)
    fusion_channels: int = 128
    context_channels: tuple[int, int, int] = (128, 256, 256)
    use_fusion: bool = True
    only_m2: bool = False

    def __post_init__(self):
        widths = (*self.stage_channels, self.fusion_channels, *self.context_channels)
        if any(w < 8 for w in widths):
            raise ConfigError(f"all widths must be >= 8, got {widths}")
        if any(x % 2 for x in self.context_channels):
            raise ConfigError(f"context widths must be even, got {self.context_channels}")


@dataclass(frozen=True)
class DetectionModuleOutput:
    """Raw maps of one head: (1, 2K, H, W) class logits, (1, 4K, H, W) deltas."""

    module_id: int
    stride: int
    cls_map: np.ndarray
    reg_map: np.ndarray


class ContextModule:
    """Two stacks of 3x3 convs sharing their first conv: the two-deep
    branch sees a 5x5 window, the three-deep branch a 7x7 window. Both
    run at X/2 channels and concatenate back to X."""

    def __init__(self, cin: int, x_channels: int, rng: np.random.Generator):
        half = x_channels // 2
        self.shared = Conv2d(cin, half, 3, rng)
        self.branch5 = Conv2d(half, half, 3, rng)
        self.branch7a = Conv2d(half, half, 3, rng)
        self.branch7b = Conv2d(half, half, 3, rng)
        self._relus = [ReLU(), ReLU()]

    def forward(self, x: np.ndarray) -> np.ndarray:
        trunk = self._relus[0].forward(self.shared.forward(x))
        a = self.branch5.forward(trunk)
        b = self.branch7b.forward(self._relus[1].forward(self.branch7a.forward(trunk)))
        return np.concatenate([a, b], axis=1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        half = dy.shape[1] // 2
        da, db = dy[:, :half], dy[:, half:]
        dtrunk = self.branch5.backward(da)
        dtrunk = dtrunk + self.branch7a.backward(
            self._relus[1].backward(self.branch7b.backward(db))
        )
        return self.shared.backward(self._relus[0].backward(dtrunk))

    def layers(self) -> dict[str, Conv2d]:
        return {
            "shared": self.shared,
            "branch5": self.branch5,
            "branch7a": self.branch7a,
            "branch7b": self.branch7b,
        }


class DetectionModule:
    """Plain 3x3 branch next to the context block, concatenated and fed
    through 1x1 classification (2K channels) and regression (4K) heads."""

    def __init__(self, cin: int, x_channels: int, num_scales: int, rng: np.random.Generator):
        self.plain = Conv2d(cin, x_channels, 3, rng)
        self.context = ContextModule(cin, x_channels, rng)
        self.cls = Conv2d(2 * x_channels, 2 * num_scales, 1, rng, weight_std=HEAD_INIT_STD)
        self.reg = Conv2d(2 * x_channels, 4 * num_scales, 1, rng, weight_std=HEAD_INIT_STD)
        self._relu = ReLU()
        self._x_channels = x_channels

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        feat = self._relu.forward(
            np.concatenate([self.plain.forward(x), self.context.forward(x)], axis=1)
        )
        return self.cls.forward(feat), self.reg.forward(feat)

    def backward(self, dcls: np.ndarray, dreg: np.ndarray) -> np.ndarray:
        dfeat = self.cls.backward(dcls) + self.reg.backward(dreg)
        dcat = self._relu.backward(dfeat)
        x = self._x_channels
        return self.plain.backward(dcat[:, :x]) + self.context.backward(dcat[:, x:])

    def layers(self) -> dict[str, Conv2d]:
        out = {"context.plain": self.plain, "cls": self.cls, "reg": self.reg}
        for k, v in self.context.layers().items():
            out[f"context.{k}"] = v
        return out


class DetectionNetwork:
    def __init__(
        self,
        backbone: BackboneConfig = BackboneConfig(),
        anchor_config: AnchorConfig = AnchorConfig(),
        seed: int = 0,
    ):
        if len(anchor_config.strides) != 3 or tuple(anchor_config.strides) != (8, 16, 32):
            raise ConfigError(f"the graph requires strides (8, 16, 32), got {anchor_config.strides}")
        self.backbone_config = backbone
        self.anchor_config = anchor_config
        rng = np.random.default_rng(seed)
        c1, c2, c3 = backbone.stage_channels

        self.stage1_conv1 = Conv2d(3, c1, 3, rng)
        self.stage1_conv2 = Conv2d(c1, c1, 3, rng)
        self.stage2_conv1 = Conv2d(c1, c2, 3, rng)
        self.stage3_conv1 = Conv2d(c2, c3, 3, rng)
        self._bb_relus = [ReLU() for _ in range(4)]
        self._bb_pools = [MaxPool2x2() for _ in range(4)]

        if backbone.only_m2:
            self.active_module_ids: tuple[int, ...] = (2,)
            k2 = len(anchor_config.union_scales())
            self.modules = {2: DetectionModule(c3, backbone.context_channels[1], k2, rng)}
            self.fusion_lateral = None
        else:
            self.active_module_ids = (1, 2, 3)
            m1_in = backbone.fusion_channels if backbone.use_fusion else c2
            if backbone.use_fusion:
                f = backbone.fusion_channels
                self.fusion_lateral = Conv2d(c2, f, 1, rng)
                self.fusion_topdown = Conv2d(c3, f, 1, rng)
                self.fusion_post = Conv2d(f, f, 3, rng)
                self._fusion_relus = [ReLU(), ReLU(), ReLU()]
                self._fusion_up = UpsampleBilinear2x()
            else:
                self.fusion_lateral = None
            self.modules = {
                1: DetectionModule(
                    m1_in, backbone.context_channels[0], len(anchor_config.scales_for(1)), rng
                ),
                2: DetectionModule(
                    c3, backbone.context_channels[1], len(anchor_config.scales_for(2)), rng
                ),
                3: DetectionModule(
                    c3, backbone.context_channels[2], len(anchor_config.scales_for(3)), rng
                ),
            }
            self._m3_pool = MaxPool2x2()

    # ------------------------------------------------------------------
    def num_scales(self, module_id: int) -> int:
        if self.backbone_config.only_m2:
            return len(self.anchor_config.union_scales())
        return len(self.anchor_config.scales_for(module_id))

    def scales_for(self, module_id: int) -> tuple[float, ...]:
        if self.backbone_config.only_m2:
            return self.anchor_config.union_scales()
        return self.anchor_config.scales_for(module_id)

    def forward(self, image: np.ndarray) -> list[DetectionModuleOutput]:
        if image.ndim != 4 or image.shape[0] != 1 or image.shape[1] != 3:
            raise ValueError(f"expected (1, 3, H, W) input, got {image.shape}")
        if image.shape[2] % NETWORK_STRIDE or image.shape[3] % NETWORK_STRIDE:
            raise ValueError(
                f"input dims must be multiples of {NETWORK_STRIDE}, got {image.shape[2:]}; pad first"
            )
        if not np.isfinite(image).all():
            raise ValueError("non-finite values in input image")
        x = np.ascontiguousarray(image, dtype=np.float32)

        x = self._bb_pools[0].forward(self._bb_relus[0].forward(self.stage1_conv1.forward(x, need_input_grad=False)))
        x = self._bb_pools[1].forward(self._bb_relus[1].forward(self.stage1_conv2.forward(x)))
        feat8 = self._bb_relus[2].forward(self.stage2_conv1.forward(self._bb_pools[2].forward(x)))
        feat16 = self._bb_relus[3].forward(self.stage3_conv1.forward(self._bb_pools[3].forward(feat8)))

        outputs = []
        if self.backbone_config.only_m2:
            cls2, reg2 = self.modules[2].forward(feat16)
            return [DetectionModuleOutput(2, MODULE_STRIDES[2], cls2, reg2)]

        if self.backbone_config.use_fusion:
            lat = self._fusion_relus[0].forward(self.fusion_lateral.forward(feat8))
            top = self._fusion_relus[1].forward(self.fusion_topdown.forward(feat16))
            fused = self._fusion_relus[2].forward(
                self.fusion_post.forward(lat + self._fusion_up.forward(top))
            )
            m1_in = fused
        else:
            m1_in = feat8

        feat32 = self._m3_pool.forward(feat16)
        for mid, feat in ((1, m1_in), (2, feat16), (3, feat32)):
            cls_map, reg_map = self.modules[mid].forward(feat)
            outputs.append(DetectionModuleOutput(mid, MODULE_STRIDES[mid], cls_map, reg_map))
        return outputs

    def backward(self, head_grads: dict[int, tuple[np.ndarray, np.ndarray]]) -> None:
        """Propagate per-head gradients back through the whole graph.

        head_grads maps module id to (dcls_map, dreg_map) in float32.
        Fan-out points (the two backbone taps) accumulate by summation.
        """
        cfg = self.backbone_config
        if cfg.only_m2:
            dcls, dreg = head_grads[2]
            dfeat16 = self.modules[2].backward(dcls, dreg)
        else:
            dfeat16 = None
            dfeat8 = None
            if 3 in head_grads:
                d32 = self.modules[3].backward(*head_grads[3])
                dfeat16 = self._m3_pool.backward(d32)
            if 2 in head_grads:
                d16 = self.modules[2].backward(*head_grads[2])
                dfeat16 = d16 if dfeat16 is None else dfeat16 + d16
            if 1 in head_grads:
                dm1 = self.modules[1].backward(*head_grads[1])
                if cfg.use_fusion:
                    dsum = self.fusion_post.backward(self._fusion_relus[2].backward(dm1))
                    dlat = self._fusion_relus[0].backward(dsum)
                    dtop = self._fusion_relus[1].backward(self._fusion_up.backward(dsum))
                    dfeat8 = self.fusion_lateral.backward(dlat)
                    dtopin = self.fusion_topdown.backward(dtop)
                    dfeat16 = dtopin if dfeat16 is None else dfeat16 + dtopin
                else:
                    dfeat8 = dm1
            if dfeat16 is None:
                raise ValueError("no head gradients supplied")

        d = self._bb_pools[3].backward(
            self.stage3_conv1.backward(self._bb_relus[3].backward(dfeat16))
        )
        if not cfg.only_m2 and dfeat8 is not None:
            d = d + dfeat8
        d = self._bb_pools[2].backward(
            self.stage2_conv1.backward(self._bb_relus[2].backward(d))
        )
        d = self.stage1_conv2.backward(self._bb_relus[1].backward(self._bb_pools[1].backward(d)))
        self.stage1_conv1.backward(self._bb_relus[0].backward(self._bb_pools[0].backward(d)))

    # ------------------------------------------------------------------
    def _named_layers(self) -> dict[str, Conv2d]:
        layers = {
            "backbone.stage1.conv1": self.stage1_conv1,
            "backbone.stage1.conv2": self.stage1_conv2,
            "backbone.stage2.conv1": self.stage2_conv1,
            "backbone.stage3.conv1": self.stage3_conv1,
        }
        if self.fusion_lateral is not None:
            layers["fusion.lateral"] = self.fusion_lateral
            layers["fusion.topdown"] = self.fusion_topdown
            layers["fusion.post"] = self.fusion_post
        for mid, module in self.modules.items():
            for name, conv in module.layers().items():
                layers[f"m{mid}.{name}"] = conv
        return layers

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for lname, conv in self._named_layers().items():
            for pname, tensor in conv.parameters().items():
                out[f"{lname}.{pname}"] = tensor
        return out

    def zero_grads(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    def save(self, path) -> None:
        save_weights(path, {k: v.data for k, v in self.parameters().items()})

    def load(self, path) -> None:
        stored = load_weights(path)
        params = self.parameters()
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        if missing or extra:
            raise ValueError(f"weight mismatch: missing {missing}, unexpected {extra}")
        for name, tensor in params.items():
            if stored[name].shape != tensor.data.shape:
                raise ValueError(
                    f"{name}: stored shape {stored[name].shape} != expected {tensor.data.shape}"
                )
            tensor.data = np.ascontiguousarray(stored[name], dtype=np.float32)


def pad_to_stride(image: np.ndarray, stride: int = NETWORK_STRIDE) -> np.ndarray:
    """Zero-pad (C, H, W) or (1, C, H, W) on the bottom/right to a stride multiple."""
    squeeze = image.ndim == 3
    x = image[None] if squeeze else image
    h, w = x.shape[2], x.shape[3]
    ph = (-h) % stride
    pw = (-w) % stride
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
    return x[0] if squeeze else x


def flatten_cls_map(cls_map: np.ndarray, num_scales: int) -> np.ndarray:
    """(1, 2K, H, W) -> (H*W*K, 2) rows in anchor layout order."""
    _, c, h, w = cls_map.shape
    return cls_map.reshape(num_scales, 2, h, w).transpose(2, 3, 0, 1).reshape(-1, 2)


def flatten_reg_map(reg_map: np.ndarray, num_scales: int) -> np.ndarray:
    """(1, 4K, H, W) -> (H*W*K, 4) rows in anchor layout order."""
    _, c, h, w = reg_map.shape
    return reg_map.reshape(num_scales, 4, h, w).transpose(2, 3, 0, 1).reshape(-1, 4)


def unflatten_cls_grad(grad: np.ndarray, num_scales: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(
        grad.reshape(h, w, num_scales, 2).transpose(2, 3, 0, 1).reshape(1, 2 * num_scales, h, w)
    )


def unflatten_reg_grad(grad: np.ndarray, num_scales: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(
        grad.reshape(h, w, num_scales, 4).transpose(2, 3, 0, 1).reshape(1, 4 * num_scales, h, w)
    )

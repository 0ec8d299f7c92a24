import numpy as np
import pytest

from facedet.anchors import AnchorConfig
from facedet.errors import ConfigError
from facedet.network import (
    BackboneConfig,
    ContextModule,
    DetectionModule,
    DetectionNetwork,
    flatten_cls_map,
    pad_to_stride,
    unflatten_cls_grad,
)

SMALL = BackboneConfig(stage_channels=(8, 8, 8), fusion_channels=8, context_channels=(8, 8, 8))


def test_output_shapes_64():
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=0)
    outs = net.forward(np.zeros((1, 3, 64, 64), np.float32))
    dims = {o.module_id: o.cls_map.shape for o in outs}
    assert dims[1] == (1, 4, 8, 8)
    assert dims[2] == (1, 4, 4, 4)
    assert dims[3] == (1, 4, 2, 2)
    regs = {o.module_id: o.reg_map.shape[1] for o in outs}
    assert regs == {1: 8, 2: 8, 3: 8}


def test_output_shapes_rectangular():
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=0)
    outs = net.forward(np.zeros((1, 3, 64, 96), np.float32))
    m2 = next(o for o in outs if o.module_id == 2)
    assert m2.cls_map.shape[2:] == (4, 6)


def test_strides_and_channels_random_sizes():
    rng = np.random.default_rng(0)
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=1)
    for _ in range(4):
        h, w = (int(rng.integers(2, 9)) * 32 for _ in range(2))
        outs = net.forward(rng.uniform(0, 1, (1, 3, h, w)).astype(np.float32))
        for o in outs:
            assert o.cls_map.shape[2] == h // o.stride
            assert o.cls_map.shape[3] == w // o.stride
            k = len(net.scales_for(o.module_id))
            assert o.cls_map.shape[1] == 2 * k
            assert o.reg_map.shape[1] == 4 * k


def test_only_m2_single_output_with_union_scales():
    cfg = BackboneConfig(
        stage_channels=(8, 8, 8), fusion_channels=8, context_channels=(8, 8, 8), only_m2=True
    )
    net = DetectionNetwork(cfg, AnchorConfig(), seed=0)
    outs = net.forward(np.zeros((1, 3, 64, 64), np.float32))
    assert len(outs) == 1
    assert outs[0].module_id == 2
    assert outs[0].stride == 16
    # union of {1,2}, {4,8}, {16,32} has six scales
    assert outs[0].cls_map.shape[1] == 12
    assert outs[0].reg_map.shape[1] == 24


def test_fusion_off_builds_and_keeps_contracts():
    cfg = BackboneConfig(
        stage_channels=(8, 8, 8), fusion_channels=8, context_channels=(8, 8, 8), use_fusion=False
    )
    net = DetectionNetwork(cfg, AnchorConfig(), seed=0)
    outs = net.forward(np.zeros((1, 3, 96, 64), np.float32))
    dims = {o.module_id: o.cls_map.shape for o in outs}
    assert dims[1] == (1, 4, 12, 8)
    assert dims[2] == (1, 4, 6, 4)
    assert dims[3] == (1, 4, 3, 2)
    assert not any(name.startswith("fusion.") for name in net.parameters())


def _ones_context(cin=4, x_channels=8):
    rng = np.random.default_rng(0)
    ctx = ContextModule(cin, x_channels, rng)
    for conv in ctx.layers().values():
        conv.weight.data = np.ones_like(conv.weight.data)
        conv.bias.data = np.zeros_like(conv.bias.data)
    return ctx


def test_context_impulse_covers_5x5_and_7x7():
    ctx = _ones_context()
    x = np.zeros((1, 4, 15, 15), np.float32)
    x[0, 0, 7, 7] = 1.0
    y = ctx.forward(x)
    half = y.shape[1] // 2
    a = y[0, :half].sum(axis=0)
    b = y[0, half:].sum(axis=0)
    for resp, reach in ((a, 2), (b, 3)):
        nz_rows, nz_cols = np.nonzero(resp)
        assert nz_rows.min() == 7 - reach and nz_rows.max() == 7 + reach
        assert nz_cols.min() == 7 - reach and nz_cols.max() == 7 + reach
        side = 2 * reach + 1
        assert (resp > 0).sum() == side * side


def test_context_constant_input_constant_interior():
    ctx = _ones_context()
    x = np.full((1, 4, 16, 16), 0.5, np.float32)
    y = ctx.forward(x)
    # zero padding bleeds into a 3px rim for the deepest branch; inside
    # that rim every channel is flat
    interior = y[:, :, 3:-3, 3:-3]
    for c in range(y.shape[1]):
        block = interior[0, c]
        assert np.allclose(block, block[0, 0], rtol=1e-6)


def test_context_output_width_is_x():
    ctx = ContextModule(16, 128, np.random.default_rng(0))
    y = ctx.forward(np.zeros((1, 16, 8, 8), np.float32))
    assert y.shape[1] == 128


def test_detection_module_param_count_below_plain_512_proposal_conv():
    # full-scale widths: 512-channel input, X=256 context
    rng = np.random.default_rng(0)
    module = DetectionModule(512, 256, 2, rng)
    total = 0
    for conv in module.layers().values():
        total += conv.weight.data.size + conv.bias.data.size
    proposal_conv = 512 * 512 * 3 * 3 + 512
    assert total < proposal_conv
    # and the module-1 variant: 128-channel input, X=128
    m1 = DetectionModule(128, 128, 2, rng)
    total1 = sum(c.weight.data.size + c.bias.data.size for c in m1.layers().values())
    assert total1 < 128 * 512 * 3 * 3 + 512


def test_zero_image_zero_weights_logits_equal_bias():
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=0)
    for name, tensor in net.parameters().items():
        if name.endswith("weight"):
            tensor.data = np.zeros_like(tensor.data)
        else:
            tensor.data = np.full_like(tensor.data, 0.25)
    outs = net.forward(np.zeros((1, 3, 64, 64), np.float32))
    for o in outs:
        assert np.allclose(o.cls_map, 0.25, atol=1e-6)
        assert np.allclose(o.reg_map, 0.25, atol=1e-6)


def test_forward_determinism_bit_identical():
    rng = np.random.default_rng(2)
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=3)
    x = rng.uniform(0, 1, (1, 3, 96, 96)).astype(np.float32)
    outs1 = net.forward(x)
    outs2 = net.forward(x)
    for a, b in zip(outs1, outs2):
        assert np.array_equal(a.cls_map, b.cls_map)
        assert np.array_equal(a.reg_map, b.reg_map)


def test_forward_input_validation():
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=0)
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 3, 60, 64), np.float32))
    bad = np.zeros((1, 3, 64, 64), np.float32)
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        net.forward(bad)
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 3, 64, 64), np.float32))


def test_parameter_namespaces():
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=0)
    allowed = ("backbone.", "fusion.", "m1.context.", "m1.cls.", "m1.reg.",
               "m2.context.", "m2.cls.", "m2.reg.", "m3.context.", "m3.cls.", "m3.reg.")
    for name in net.parameters():
        assert name.startswith(allowed), name


def test_save_load_roundtrip(tmp_path):
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=5)
    p = tmp_path / "net.sshw"
    net.save(p)
    other = DetectionNetwork(SMALL, AnchorConfig(), seed=99)
    other.load(p)
    for name, tensor in net.parameters().items():
        assert np.array_equal(tensor.data, other.parameters()[name].data)
    x = np.random.default_rng(0).uniform(0, 1, (1, 3, 64, 64)).astype(np.float32)
    a = net.forward(x)
    b = other.forward(x)
    for oa, ob in zip(a, b):
        assert np.array_equal(oa.cls_map, ob.cls_map)


def test_load_rejects_mismatched_container(tmp_path):
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=0)
    p = tmp_path / "net.sshw"
    net.save(p)
    bigger = DetectionNetwork(
        BackboneConfig(stage_channels=(8, 16, 16), fusion_channels=8, context_channels=(8, 8, 8)),
        AnchorConfig(),
        seed=0,
    )
    with pytest.raises(ValueError):
        bigger.load(p)


def test_backbone_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(stage_channels=(4, 8, 8))
    with pytest.raises(ConfigError):
        BackboneConfig(context_channels=(9, 16, 16))


def test_graph_requires_standard_strides():
    with pytest.raises(ConfigError):
        DetectionNetwork(SMALL, AnchorConfig(strides=(4, 8, 16)), seed=0)


def test_pad_to_stride():
    x = np.ones((3, 60, 65), np.float32)
    padded = pad_to_stride(x)
    assert padded.shape == (3, 64, 96)
    assert padded[:, :60, :65].sum() == x.sum()
    assert padded[:, 60:, :].sum() == 0


def test_flatten_unflatten_roundtrip():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(1, 4, 3, 5)).astype(np.float32)
    flat = flatten_cls_map(m, 2)
    assert flat.shape == (3 * 5 * 2, 2)
    back = unflatten_cls_grad(flat, 2, 3, 5)
    assert np.array_equal(back, m)
    # layout: anchor (r, c, s) maps to channel pair (2s, 2s+1) at (r, c)
    r, c, s = 1, 4, 1
    idx = (r * 5 + c) * 2 + s
    assert flat[idx, 0] == m[0, 2 * s, r, c]
    assert flat[idx, 1] == m[0, 2 * s + 1, r, c]


def test_whole_graph_gradients_match_finite_differences():
    # float64 probe of the wired DAG, including both fan-out joins
    net = DetectionNetwork(SMALL, AnchorConfig(), seed=3)
    for t in net.parameters().values():
        t.data = t.data.astype(np.float64)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (1, 3, 64, 64)).astype(np.float32)
    projs = {}

    def scalar():
        outs = net.forward(x)
        if not projs:
            for o in outs:
                projs[o.module_id] = (
                    rng.normal(size=o.cls_map.shape),
                    rng.normal(size=o.reg_map.shape),
                )
        return (
            sum(
                float((o.cls_map * projs[o.module_id][0]).sum())
                + float((o.reg_map * projs[o.module_id][1]).sum())
                for o in outs
            ),
            outs,
        )

    _, outs = scalar()
    net.zero_grads()
    net.backward({o.module_id: projs[o.module_id] for o in outs})

    eps = 1e-6
    worst = 0.0
    for name, tensor in net.parameters().items():
        flat = tensor.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(2, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            hi, _ = scalar()
            flat[i] = orig - eps
            lo, _ = scalar()
            flat[i] = orig
            num = (hi - lo) / (2 * eps)
            ana = tensor.grad.reshape(-1)[i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-3))
    assert worst < 1e-4

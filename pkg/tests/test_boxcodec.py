import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facedet.boxcodec import LOG_SIZE_CLAMP, decode, encode


def test_encode_identity():
    b = np.array([[3.0, 4.0, 10.0, 12.0]])
    assert np.allclose(encode(b, b), 0.0)


def test_encode_pure_scale():
    anchor = np.array([[8 - 32.0, 8 - 32.0, 8 + 32.0, 8 + 32.0]])
    gt = np.array([[8 - 64.0, 8 - 64.0, 8 + 64.0, 8 + 64.0]])
    d = encode(gt, anchor)[0]
    assert d[0] == 0 and d[1] == 0
    assert d[2] == pytest.approx(math.log(2), abs=1e-12)
    assert d[3] == pytest.approx(math.log(2), abs=1e-12)


def test_decode_identity_and_shift():
    anchor = np.array([[0.0, 0.0, 1.0, 1.0]])
    assert np.allclose(decode(np.zeros((1, 4)), anchor), anchor)
    shifted = decode(np.array([[1.0, 0.0, 0.0, 0.0]]), anchor)
    assert np.allclose(shifted, [[1.0, 0.0, 2.0, 1.0]])


def test_roundtrip_thousand_pairs():
    # size ratios stay inside the decode clamp (1000/16), where the
    # codec is an exact inverse
    rng = np.random.default_rng(0)
    n = 1000
    anchors = np.concatenate(
        [rng.uniform(-50, 50, (n, 2)), np.zeros((n, 2))], axis=1
    )
    anchors[:, 2:] = anchors[:, :2] + rng.uniform(2.0, 60, (n, 2))
    gts = np.concatenate([rng.uniform(-50, 50, (n, 2)), np.zeros((n, 2))], axis=1)
    gts[:, 2:] = gts[:, :2] + rng.uniform(2.0, 60, (n, 2))
    back = decode(encode(gts, anchors), anchors)
    assert np.abs(back - gts).max() < 1e-5


def test_scale_equivariance():
    rng = np.random.default_rng(1)
    anchor = np.array([[10.0, 20.0, 42.0, 60.0]])
    gt = np.array([[12.0, 18.0, 50.0, 70.0]])
    base = encode(gt, anchor)
    for s in (0.25, 3.0, 17.5):
        scaled = encode(gt * s, anchor * s)
        assert np.abs(scaled - base).max() < 1e-6


def test_decode_clamps_extreme_deltas():
    anchor = np.array([[0.0, 0.0, 16.0, 16.0]])
    wild = np.array([[0.0, 0.0, 50.0, -50.0]])
    out = decode(wild, anchor)
    assert np.isfinite(out).all()
    assert out[0, 2] > out[0, 0] and out[0, 3] > out[0, 1]
    assert out[0, 2] - out[0, 0] == pytest.approx(16 * math.exp(LOG_SIZE_CLAMP))


def test_zero_size_inputs_rejected():
    good = np.array([[0.0, 0.0, 4.0, 4.0]])
    flat = np.array([[0.0, 0.0, 4.0, 0.0]])
    with pytest.raises(ValueError):
        encode(good, flat)
    with pytest.raises(ValueError):
        encode(flat, good)
    with pytest.raises(ValueError):
        decode(np.zeros((1, 4)), flat)


def test_count_mismatch_rejected():
    with pytest.raises(ValueError):
        encode(np.zeros((2, 4)) + [0, 0, 1, 1], np.zeros((3, 4)) + [0, 0, 1, 1])


sane = st.floats(-30, 30, allow_nan=False)
size = st.floats(1.0, 30, allow_nan=False)


@settings(max_examples=150, deadline=None)
@given(sane, sane, size, size, sane, sane, size, size)
def test_roundtrip_property(ax, ay, aw, ah, gx, gy, gw, gh):
    anchor = np.array([[ax, ay, ax + aw, ay + ah]])
    gt = np.array([[gx, gy, gx + gw, gy + gh]])
    back = decode(encode(gt, anchor), anchor)
    assert np.abs(back - gt).max() < 1e-5

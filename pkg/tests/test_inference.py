"""Single-scale and pyramid inference contracts."""

import numpy as np
import pytest

from rcfnet import inference as I
from rcfnet import model as M
from rcfnet import ops


@pytest.fixture(scope="module")
def tiny_model():
    return M.build(M.tiny_rcf_config(), seed=2)


@pytest.fixture(scope="module")
def image():
    rng = np.random.default_rng(77)
    return rng.random((3, 40, 48)).astype(np.float32)


def test_scale_set_validation():
    with pytest.raises(ValueError):
        I.ScaleSet(())
    with pytest.raises(ValueError):
        I.ScaleSet((1.0, -0.5))


def test_predict_shapes_and_determinism(tiny_model, image):
    out = I.predict(tiny_model, image)
    assert out.fused_map.shape == (1, 1, 40, 48)
    assert len(out.stage_maps) == 3
    again = I.predict(tiny_model, image)
    assert np.array_equal(out.fused_map, again.fused_map)


def test_predict_subtracts_channel_means(image):
    cfg = M.tiny_rcf_config()
    cfg.mean_rgb = (0.25, 0.5, 0.75)
    m = M.build(cfg, seed=2)
    shifted = image + np.array([0.25, 0.5, 0.75],
                               dtype=np.float32)[:, None, None]
    base = M.build(M.tiny_rcf_config(), seed=2)
    a = I.predict(m, shifted).fused_map
    b = I.predict(base, image).fused_map
    assert np.abs(a - b).max() < 1e-5


def test_average_maps_trivial(rng):
    m = rng.random((4, 4))
    assert np.array_equal(I.average_maps([m, m]), m)
    half = I.average_maps([np.zeros((3, 3)), np.ones((3, 3))])
    assert np.all(half == 0.5)


def test_average_maps_pointwise_oracle(rng):
    maps = [rng.random((5, 5)) for _ in range(3)]
    got = I.average_maps(maps)
    want = (maps[0] + maps[1] + maps[2]) / 3.0
    assert np.abs(got - want).max() < 1e-15


def test_multiscale_single_scale_bit_exact(tiny_model, image):
    ms = I.predict_multiscale(tiny_model, image, I.ScaleSet((1.0,)))
    single = I.predict(tiny_model, image).fused_map[0, 0]
    assert np.array_equal(ms, single.astype(np.float64))


def test_multiscale_repeated_unit_scale_bit_exact(tiny_model, image):
    ms = I.predict_multiscale(tiny_model, image, I.ScaleSet((1.0, 1.0, 1.0)))
    single = I.predict(tiny_model, image).fused_map[0, 0].astype(np.float64)
    assert np.array_equal(ms, single)


def test_multiscale_compositional_oracle(tiny_model, image):
    scales = (0.5, 1.0, 1.5)
    ms = I.predict_multiscale(tiny_model, image, I.ScaleSet(scales))
    h, w = image.shape[-2:]
    parts = []
    for s in scales:
        if s == 1.0:
            scaled = image
        else:
            scaled = ops.resize_bilinear_image(
                image, max(int(round(s * h)), 4), max(int(round(s * w)), 4))
        fused = I.predict(tiny_model, scaled).fused_map[0, 0]
        if fused.shape != (h, w):
            fused = ops.resize_bilinear_image(fused, h, w)
        parts.append(np.asarray(fused, dtype=np.float64))
    want = (parts[0] + parts[1] + parts[2]) / 3.0
    assert np.abs(ms - want).max() < 1e-12


def test_multiscale_permutation_invariance(tiny_model, image):
    a = I.predict_multiscale(tiny_model, image, I.ScaleSet((0.5, 1.0, 1.5)))
    b = I.predict_multiscale(tiny_model, image, I.ScaleSet((1.5, 0.5, 1.0)))
    assert np.abs(a - b).max() < 1e-15


def test_multiscale_values_in_unit_interval(tiny_model, image):
    ms = I.predict_multiscale(tiny_model, image)
    assert ms.min() >= 0.0 and ms.max() <= 1.0

"""Tests for the differentiable primitives layered on top of the kernels."""

import numpy as np
import pytest

from rcfnet import ops
from rcfnet.tensor import ConvParams, ShapeError, Tensor

from oracles import bilinear_resize_ref


def make_conv(rng, oc, ic, k, **kw):
    w = Tensor(rng.standard_normal((oc, ic, k, k)))
    b = Tensor(rng.standard_normal((1, oc, 1, 1)))
    return ConvParams(w, b, **kw)


def test_conv2d_channel_mismatch_raises(rng):
    p = make_conv(rng, 2, 3, 3, pad=1)
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(rng.standard_normal((1, 4, 6, 6))), p)


def test_conv2d_nonpositive_output_raises(rng):
    p = make_conv(rng, 1, 1, 3)
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(rng.standard_normal((1, 1, 2, 2))), p)


def test_conv2d_backward_accumulates(rng):
    x = Tensor(rng.standard_normal((1, 2, 5, 5)))
    p = make_conv(rng, 3, 2, 3, pad=1)
    out = ops.conv2d(x, p)
    g = rng.standard_normal(out.dims)
    ops.conv2d_backward(x, p, g)
    first = p.weights.grad.copy()
    ops.conv2d_backward(x, p, g)
    assert np.allclose(p.weights.grad, 2 * first)


def test_bilinear_kernel_partition_of_unity():
    for f in (2, 3, 4, 8):
        k = ops.bilinear_kernel_1d(f)
        # shifted copies of the kernel at stride f sum to 1 everywhere
        assert k.size == 2 * f - f % 2
        total = np.zeros(k.size + 4 * f)
        for s in range(0, total.size - k.size + 1, f):
            total[s:s + k.size] += k
        mid = total[k.size:-k.size]
        assert np.all(np.abs(mid - 1.0) < 1e-12)


@pytest.mark.parametrize("factor", [2, 3, 4, 8])
def test_upsample_constant_stays_constant(factor):
    x = Tensor(np.full((1, 1, 5, 6), 0.7))
    out = ops.bilinear_upsample(x, factor, 5 * factor, 6 * factor)
    assert out.dims == (1, 1, 5 * factor, 6 * factor)
    assert np.abs(out.data - 0.7).max() < 1e-12


def test_upsample_factor1_crops():
    x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    out = ops.bilinear_upsample(x, 1, 2, 2)
    assert np.array_equal(out.data[0, 0], x.data[0, 0, 1:3, 1:3])


def test_upsample_ramp_matches_interpolation_oracle():
    ramp = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = ops.bilinear_upsample(Tensor(ramp[None, None]), 2, 4, 4)
    want = bilinear_resize_ref(ramp, 4, 4)
    assert np.abs(out.data[0, 0] - want).max() < 1e-12


def test_upsample_matches_resize_oracle_larger(rng):
    img = rng.random((5, 7))
    out = ops.bilinear_upsample(Tensor(img[None, None]), 4, 20, 28)
    want = bilinear_resize_ref(img, 20, 28)
    assert np.abs(out.data[0, 0] - want).max() < 1e-12


def test_upsample_target_too_large_raises(rng):
    x = Tensor(rng.standard_normal((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        ops.bilinear_upsample(x, 2, 50, 50)


def test_upsample_odd_target_within_margin(rng):
    # floor-mode pooling of an 11-wide input gives 5 samples at stride 2;
    # the upsample must still reach back to 11 columns
    x = Tensor(rng.standard_normal((1, 1, 5, 5)))
    out = ops.bilinear_upsample(x, 2, 11, 11)
    assert out.dims == (1, 1, 11, 11)


def test_upsample_backward_is_adjoint(rng):
    """<U x, g> == <x, U^T g> for random x, g."""
    for factor, h, w, th, tw in ((2, 4, 5, 8, 10), (4, 3, 3, 12, 12),
                                 (2, 5, 5, 11, 11)):
        x = Tensor(rng.standard_normal((1, 2, h, w)))
        g = rng.standard_normal((1, 2, th, tw))
        out = ops.bilinear_upsample(x, factor, th, tw)
        gx = ops.bilinear_upsample_backward(x, factor, th, tw, g)
        lhs = float((out.data * g).sum())
        rhs = float((x.data * gx.data).sum())
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


def test_sigmoid_values():
    t = ops.sigmoid(Tensor(np.array([[[[0.0, 100.0, -100.0]]]])))
    assert t.data[0, 0, 0, 0] == 0.5
    assert abs(t.data[0, 0, 0, 1] - 1.0) < 1e-12
    assert t.data[0, 0, 0, 2] < 1e-40


def test_eltwise_add_cancellation(rng):
    x = Tensor(rng.standard_normal((1, 2, 3, 3)))
    out = ops.eltwise_add(x, Tensor(-x.data))
    assert not out.data.any()


def test_eltwise_add_grouping_invariance(rng):
    a, b, c = (Tensor(rng.standard_normal((1, 1, 4, 4))) for _ in range(3))
    left = ops.eltwise_add(ops.eltwise_add(a, b), c)
    flat = ops.eltwise_add(a, b, c)
    assert np.allclose(left.data, flat.data)


def test_eltwise_add_mismatch_raises(rng):
    with pytest.raises(ShapeError):
        ops.eltwise_add(Tensor(np.zeros((1, 1, 3, 3))),
                        Tensor(np.zeros((1, 1, 4, 4))))


def test_concat_channels_block_order(rng):
    a = Tensor(rng.standard_normal((2, 3, 4, 4)))
    b = Tensor(rng.standard_normal((2, 2, 4, 4)))
    out = ops.concat_channels([a, b])
    assert out.dims == (2, 5, 4, 4)
    assert np.array_equal(out.data[:, :3], a.data)
    assert np.array_equal(out.data[:, 3:], b.data)


def test_resize_bilinear_matches_oracle(rng):
    img = rng.random((6, 9))
    for nh, nw in ((3, 4), (12, 18), (7, 7)):
        got = ops.resize_bilinear_image(img, nh, nw)
        assert np.abs(got - bilinear_resize_ref(img, nh, nw)).max() < 1e-12


def test_resize_identity_and_channels(rng):
    img = rng.random((3, 5, 5))
    assert np.array_equal(ops.resize_bilinear_image(img, 5, 5), img)
    out = ops.resize_bilinear_image(img, 10, 10)
    assert out.shape == (3, 10, 10)


def test_sgd_plain_step(rng):
    p = Tensor(np.ones((1, 1, 2, 2)))
    p.grad = np.full((1, 1, 2, 2), 0.25)
    ops.sgd_step([p], lr=1.0)
    assert np.allclose(p.data, 0.75)
    assert not p.grad.any()  # zeroed afterwards


def test_sgd_zero_grad_no_change():
    p = Tensor(np.ones((1, 1, 2, 2)))
    p.grad = np.zeros((1, 1, 2, 2))
    ops.sgd_step([p], lr=0.5)
    assert np.all(p.data == 1.0)


def test_sgd_momentum_two_step_recurrence():
    """Hand-rolled scalar recurrence oracle for momentum + weight decay."""
    lr, mom, wd, g = 0.1, 0.9, 0.0002, 0.5
    p_val, v = 1.0, 0.0
    p = Tensor(np.full((1, 1, 1, 1), p_val))
    for _ in range(2):
        v = mom * v - lr * (g + wd * p_val)
        p_val = p_val + v
        p.grad = np.full((1, 1, 1, 1), g)
        ops.sgd_step([p], lr=lr, momentum=mom, weight_decay=wd)
    assert abs(p.data[0, 0, 0, 0] - p_val) < 1e-15


def test_sgd_missing_grad_raises():
    p = Tensor(np.ones((1, 1, 1, 1)), name="w")
    with pytest.raises(ValueError):
        ops.sgd_step([p], lr=0.1)


def test_sgd_lr_multipliers():
    a = Tensor(np.ones((1, 1, 1, 1)))
    b = Tensor(np.ones((1, 1, 1, 1)))
    a.grad = np.ones((1, 1, 1, 1))
    b.grad = np.ones((1, 1, 1, 1))
    ops.sgd_step([a, b], lr=0.1, lr_multipliers=[1.0, 2.0])
    assert np.allclose(a.data, 0.9)
    assert np.allclose(b.data, 0.8)

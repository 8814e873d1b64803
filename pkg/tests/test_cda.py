import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bda import cda
from bda.nn import Conv2dParams, DenseParams
from bda.tensor import ShapeError, Tensor


def sig(z):
    return 1 / (1 + np.exp(-z))


def weights(rng, e, scale=0.5):
    return cda.CdaWeights(
        DenseParams(Tensor(rng.standard_normal((e, 2 * e)) * scale), Tensor(rng.standard_normal(e) * scale)),
        Conv2dParams(Tensor(rng.standard_normal((1, 2 * e, 1, 1)) * scale), Tensor(rng.standard_normal(1) * scale)),
    )


def oracle(a, b, w):
    """Plain-numpy restatement of the attention block for one sample."""
    wd, bd = w.channel_reduce.weight.data, w.channel_reduce.bias.data
    ws, bs = w.spatial_conv.kernel.data[0, :, 0, 0], w.spatial_conv.bias.data[0]
    pooled = np.concatenate([a, b]).mean(axis=(1, 2))
    i_cha = sig(wd @ pooled + bd)[:, None, None]
    pre_cha, post_cha = i_cha * b + a, i_cha * a + b
    cat = np.concatenate([pre_cha, post_cha])
    i_spa = sig(np.tensordot(ws, cat, axes=1) + bs)[None]
    return i_spa * post_cha + a, i_spa * pre_cha + b, i_cha[:, 0, 0], i_spa


def test_forward_matches_numpy_oracle(rng):
    a, b = rng.standard_normal((4, 5, 5)), rng.standard_normal((4, 5, 5))
    w = weights(rng, 4)
    out = cda.cda_forward(Tensor(a), Tensor(b), w)
    pre, post, i_cha, i_spa = oracle(a, b, w)
    np.testing.assert_allclose(out.u_pre_spa.data, pre, rtol=1e-12)
    np.testing.assert_allclose(out.u_post_spa.data, post, rtol=1e-12)
    np.testing.assert_allclose(out.i_cha.data, i_cha, rtol=1e-12)
    np.testing.assert_allclose(out.i_spa.data, i_spa, rtol=1e-12)


def test_spatial_residual_uses_original_inputs(rng):
    # with the spatial gate forced to zero the outputs are exactly the inputs
    a, b = rng.standard_normal((2, 3, 3)), rng.standard_normal((2, 3, 3))
    w = weights(rng, 2)
    w.spatial_conv = Conv2dParams(Tensor(np.zeros((1, 4, 1, 1))), Tensor(np.array([-800.0])))
    out = cda.cda_forward(Tensor(a), Tensor(b), w)
    np.testing.assert_array_equal(out.u_pre_spa.data, a)
    np.testing.assert_array_equal(out.u_post_spa.data, b)


def test_batched_equals_per_sample(rng):
    a, b = rng.standard_normal((3, 2, 4, 4)), rng.standard_normal((3, 2, 4, 4))
    w = weights(rng, 2)
    out = cda.cda_forward(Tensor(a), Tensor(b), w)
    for i in range(3):
        one = cda.cda_forward(Tensor(a[i]), Tensor(b[i]), w)
        np.testing.assert_allclose(out.u_pre_spa.data[i], one.u_pre_spa.data, rtol=1e-13)


def test_zero_input_zero_weight_fixed_point():
    e = 3
    z = cda.CdaWeights(DenseParams(Tensor(np.zeros((e, 2 * e))), Tensor(np.zeros(e))),
                       Conv2dParams(Tensor(np.zeros((1, 2 * e, 1, 1))), Tensor(np.zeros(1))))
    out = cda.cda_forward(Tensor(np.zeros((e, 4, 4))), Tensor(np.zeros((e, 4, 4))), z)
    assert np.all(out.u_pre_spa.data == 0) and np.all(out.u_post_spa.data == 0)
    np.testing.assert_array_equal(out.i_cha.data, 0.5)


def test_shape_errors(rng):
    w = weights(rng, 3)
    with pytest.raises(ShapeError):
        cda.cda_forward(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((3, 4, 5))), w)
    with pytest.raises(ShapeError):
        cda.cda_forward(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((2, 4, 4))), w)
    with pytest.raises(ShapeError):
        cda.channel_fuse(Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros(2)))


@given(st.integers(0, 10_000))
def test_gates_bounded(seed):
    rng = np.random.default_rng(seed)
    e = int(rng.integers(1, 5))
    s = float(rng.uniform(0.1, 20))
    out = cda.cda_forward(Tensor(rng.standard_normal((e, 3, 3)) * s), Tensor(rng.standard_normal((e, 3, 3)) * s),
                          weights(rng, e, scale=s))
    for g in (out.i_cha.data, out.i_spa.data):
        assert np.all((g >= 0) & (g <= 1))


def swap_symmetric(rng, e):
    """Dense weights [A B; ...] -> [B A] block swap leaves the pooled input symmetric."""
    half = rng.standard_normal((e, e))
    wd = np.concatenate([half, half], axis=1)
    ws = rng.standard_normal(e)
    return cda.CdaWeights(DenseParams(Tensor(wd), Tensor(rng.standard_normal(e))),
                          Conv2dParams(Tensor(np.concatenate([ws, ws])[None, :, None, None]),
                                       Tensor(rng.standard_normal(1))))


def test_swap_property_with_block_symmetric_weights(rng):
    e = 3
    w = swap_symmetric(rng, e)
    a, b = rng.standard_normal((e, 4, 4)), rng.standard_normal((e, 4, 4))
    ab = cda.cda_forward(Tensor(a), Tensor(b), w)
    ba = cda.cda_forward(Tensor(b), Tensor(a), w)
    np.testing.assert_allclose(ab.u_pre_spa.data, ba.u_post_spa.data, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ab.u_post_spa.data, ba.u_pre_spa.data, rtol=0, atol=1e-12)


def se_weights(rng, e, zero=False):
    f = np.zeros if zero else (lambda s: rng.standard_normal(s))
    return cda.SeWeights(DenseParams(Tensor(f((e, e))), Tensor(f(e))),
                         Conv2dParams(Tensor(f((1, e, 1, 1))), Tensor(f(1))))


@pytest.mark.parametrize("variant,factor", [("channel", 1.5), ("spatial", 1.5), ("both", 1.75)])
def test_se_zero_weights_closed_form(rng, variant, factor):
    u = rng.standard_normal((3, 4, 4))
    out = cda.se_block(Tensor(u), variant, se_weights(rng, 3, zero=True))
    np.testing.assert_allclose(out.data, factor * u, rtol=1e-14)


def test_se_channel_oracle(rng):
    u = rng.standard_normal((3, 4, 4))
    w = se_weights(rng, 3)
    g = sig(w.channel.weight.data @ u.mean(axis=(1, 2)) + w.channel.bias.data)[:, None, None]
    np.testing.assert_allclose(cda.se_block(Tensor(u), "channel", w).data, g * u + u, rtol=1e-12)


def test_se_unknown_variant(rng):
    with pytest.raises(ValueError):
        cda.se_block(Tensor(np.zeros((3, 2, 2))), "temporal", se_weights(rng, 3))

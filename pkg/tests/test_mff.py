import numpy as np
import pytest

from bda import mff
from bda.nn import Conv2dParams, conv2d, downsample_avg, group_norm
from bda.tensor import ShapeError, Tensor, concat_channels, relu


def make(rng, c1, c2):
    conv = lambda co, ci, k: Conv2dParams(Tensor(rng.standard_normal((co, ci, k, k)) * 0.3),
                                         Tensor(rng.standard_normal(co) * 0.1), 1, k // 2)
    norm = lambda c: (Tensor(1 + 0.1 * rng.standard_normal(c)), Tensor(0.1 * rng.standard_normal(c)))
    return mff.MffWeights(conv(c1, 3, 3), norm(c1), conv(c1, 2 * c1, 1), conv(c2, 3, 3), norm(c2), conv(c2, 2 * c2, 1))


def area_mean(img, f):
    c, h, w = img.shape
    return img.reshape(c, h // f, f, w // f, f).mean(axis=(2, 4))


def test_fusion_shapes_and_composition(rng):
    img = rng.random((3, 16, 16))
    f1, f2 = rng.standard_normal((4, 8, 8)), rng.standard_normal((6, 4, 4))
    w = make(rng, 4, 6)
    o1, o2 = mff.mff_forward(Tensor(img), Tensor(f1), Tensor(f2), w)
    assert o1.shape == (4, 8, 8) and o2.shape == (6, 4, 4)
    # compose the level-1 path by hand from primitives and an explicit area mean
    small = Tensor(area_mean(img, 2))
    np.testing.assert_allclose(downsample_avg(Tensor(img), 2).data, small.data, rtol=1e-14)
    stream = relu(group_norm(conv2d(small, w.stream2_conv), *w.stream2_norm))
    expected = conv2d(concat_channels(Tensor(f1), stream), w.reduce1)
    np.testing.assert_allclose(o1.data, expected.data, rtol=1e-13)


def test_quarter_stream_sees_quarter_resolution(rng):
    img = rng.random((3, 16, 16))
    w = make(rng, 2, 2)
    _, o2 = mff.mff_forward(Tensor(img), Tensor(np.zeros((2, 8, 8))), Tensor(np.zeros((2, 4, 4))), w)
    # an image that agrees on every 4x4 block average gives the same level-2 output
    jitter = rng.standard_normal((3, 16, 16)) * 0.01
    jitter -= np.repeat(np.repeat(area_mean(jitter, 4), 4, 1), 4, 2)
    _, o2b = mff.mff_forward(Tensor(img + jitter), Tensor(np.zeros((2, 8, 8))), Tensor(np.zeros((2, 4, 4))), w)
    np.testing.assert_allclose(o2.data, o2b.data, atol=1e-12)


def test_extent_checks(rng):
    w = make(rng, 2, 2)
    with pytest.raises(ShapeError):
        mff.fuse_level1(Tensor(np.zeros((3, 18, 18))), Tensor(np.zeros((2, 9, 9))), w)
    with pytest.raises(ShapeError):
        mff.fuse_level1(Tensor(np.zeros((3, 16, 16))), Tensor(np.zeros((2, 4, 4))), w)

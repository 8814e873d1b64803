"""Finite-difference checks for every differentiable operation.

Each case builds a scalar function of a few float64 leaves on small random
tensors; :func:`run_case` returns the worst relative error against central
differences.
"""

import numpy as np

from . import cda, mff, nn
from .tensor import Tensor, concat_channels, gradcheck, mul, relu, sigmoid, softmax_channels, tsum


def _w(rng, *shape, scale=0.5):
    return rng.standard_normal(shape) * scale


def _probe(rng, shape):
    """Fixed random weighting so every output element feeds the scalar."""
    return Tensor(rng.standard_normal(shape))


def _weighted(y, r):
    return tsum(mul(y, r))


def _conv(rng):
    x = _w(rng, 2, 3, 7, 6)
    w, b = _w(rng, 4, 3, 3, 3), _w(rng, 4)
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    out = nn.conv_out_extent(7, 3, stride, pad), nn.conv_out_extent(6, 3, stride, pad)
    r = _probe(rng, (2, 4) + out)
    return lambda x, w, b: _weighted(nn.conv2d(x, nn.Conv2dParams(w, b, stride, pad)), r), [x, w, b]


def _gap(rng):
    x = _w(rng, 2, 3, 4, 5)
    r = _probe(rng, (2, 3))
    return lambda x: _weighted(nn.global_avg_pool(x), r), [x]


def _down(rng):
    factor = int(rng.choice([2, 4]))
    x = _w(rng, 2, 8, 8)
    r = _probe(rng, (2, 8 // factor, 8 // factor))
    return lambda x: _weighted(nn.downsample_avg(x, factor), r), [x]


def _up(rng):
    x = _w(rng, 2, 3, 3)
    r = _probe(rng, (2, 6, 6))
    return lambda x: _weighted(nn.upsample_nearest(x, 2), r), [x]


def _dense(rng):
    x, w, b = _w(rng, 3, 6), _w(rng, 4, 6), _w(rng, 4)
    r = _probe(rng, (3, 4))
    return lambda x, w, b: _weighted(nn.dense(x, nn.DenseParams(w, b)), r), [x, w, b]


def _norm(rng):
    x, g, b = _w(rng, 2, 3, 4, 4, scale=1.0), 1 + _w(rng, 3, 1, 1), _w(rng, 3, 1, 1)
    r = _probe(rng, (2, 3, 4, 4))
    return lambda x, g, b: _weighted(nn.group_norm(x, g, b), r), [x, g, b]


def _sigmoid(rng):
    x = _w(rng, 3, 4, 4, scale=2.0)
    r = _probe(rng, x.shape)
    return lambda x: _weighted(sigmoid(x), r), [x]


def _softmax(rng):
    x = _w(rng, 5, 3, 3, scale=2.0)
    r = _probe(rng, x.shape)
    return lambda x: _weighted(softmax_channels(x), r), [x]


def _bce(rng):
    p = rng.uniform(0.05, 0.95, (1, 4, 4))
    t = (rng.random((1, 4, 4)) < 0.5).astype(float)
    return lambda p: nn.binary_cross_entropy(p, Tensor(t)), [p]


def _cce(rng):
    z = _w(rng, 2, 5, 3, 3, scale=2.0)
    t = rng.integers(0, 5, (2, 3, 3))
    return lambda z: nn.categorical_cross_entropy(z, t), [z]


def _cda_weights(rng, e):
    return cda.CdaWeights(
        nn.DenseParams(Tensor(_w(rng, e, 2 * e)), Tensor(_w(rng, e))),
        nn.Conv2dParams(Tensor(_w(rng, 1, 2 * e, 1, 1)), Tensor(_w(rng, 1))),
    )


def _channel_gate(rng):
    e = 3
    a, b = _w(rng, e, 4, 4, scale=1.0), _w(rng, e, 4, 4, scale=1.0)
    wd, bd = _w(rng, e, 2 * e), _w(rng, e)
    r = _probe(rng, (e,))
    return lambda a, b, wd, bd: _weighted(cda.channel_gate(a, b, cda.CdaWeights(nn.DenseParams(wd, bd), None)), r), [a, b, wd, bd]


def _channel_fuse(rng):
    e = 3
    a, b, g = _w(rng, e, 4, 4), _w(rng, e, 4, 4), rng.uniform(0.1, 0.9, e)
    r1, r2 = _probe(rng, (e, 4, 4)), _probe(rng, (e, 4, 4))

    def f(a, b, g):
        p, q = cda.channel_fuse(a, b, g)
        return tsum(mul(p, r1)) + tsum(mul(q, r2))

    return f, [a, b, g]


def _spatial_gate(rng):
    e = 3
    a, b = _w(rng, e, 4, 4), _w(rng, e, 4, 4)
    w, bias = _w(rng, 1, 2 * e, 1, 1), _w(rng, 1)
    r = _probe(rng, (1, 4, 4))
    return lambda a, b, w, bias: _weighted(cda.spatial_gate(a, b, cda.CdaWeights(None, nn.Conv2dParams(w, bias))), r), [a, b, w, bias]


def _cda(rng):
    e = 3
    a, b = _w(rng, 2, e, 4, 4), _w(rng, 2, e, 4, 4)
    cw = _cda_weights(rng, e)
    r1, r2 = _probe(rng, a.shape), _probe(rng, a.shape)

    def f(a, b, wd, bd, ws, bs):
        w = cda.CdaWeights(nn.DenseParams(wd, bd), nn.Conv2dParams(ws, bs))
        out = cda.cda_forward(a, b, w)
        return tsum(mul(out.u_pre_spa, r1)) + tsum(mul(out.u_post_spa, r2))

    return f, [a, b] + [t.data for t in (cw.channel_reduce.weight, cw.channel_reduce.bias, cw.spatial_conv.kernel, cw.spatial_conv.bias)]


def _se(rng):
    e = 3
    variant = ("channel", "spatial", "both")[int(rng.integers(3))]
    u = _w(rng, e, 4, 4)
    wc, bc = _w(rng, e, e), _w(rng, e)
    ws, bs = _w(rng, 1, e, 1, 1), _w(rng, 1)
    r = _probe(rng, u.shape)

    def f(u, wc, bc, ws, bs):
        w = cda.SeWeights(nn.DenseParams(wc, bc), nn.Conv2dParams(ws, bs))
        return _weighted(cda.se_block(u, variant, w), r)

    return f, [u, wc, bc, ws, bs]


def _mff(rng):
    c1, c2 = 3, 4
    img = rng.random((3, 8, 8))
    f1, f2 = _w(rng, c1, 4, 4), _w(rng, c2, 2, 2)
    ws = [_w(rng, c1, 3, 3, 3), _w(rng, c1, 2 * c1, 1, 1), _w(rng, c2, 3, 3, 3), _w(rng, c2, 2 * c2, 1, 1)]
    biases = [Tensor(_w(rng, c)) for c in (c1, c1, c2, c2)]
    norms = [(Tensor(1 + _w(rng, c, 1, 1, scale=0.1)), Tensor(_w(rng, c, 1, 1, scale=0.1))) for c in (c1, c2)]
    r1, r2 = _probe(rng, (c1, 4, 4)), _probe(rng, (c2, 2, 2))

    def f(img, f1, f2, k2, r1w, k3, r2w):
        w = mff.MffWeights(
            nn.Conv2dParams(k2, biases[0], 1, 1), norms[0], nn.Conv2dParams(r1w, biases[1]),
            nn.Conv2dParams(k3, biases[2], 1, 1), norms[1], nn.Conv2dParams(r2w, biases[3]),
        )
        o1, o2 = mff.mff_forward(img, f1, f2, w)
        return tsum(mul(o1, r1)) + tsum(mul(o2, r2))

    return f, [img, f1, f2] + ws


def _composite(rng):
    """Two-level dual-branch encoder/decoder with image fusion, cross attention and a class head."""
    c1, c2, e = 3, 4, 3
    pre, post = rng.random((3, 4, 4)), rng.random((3, 4, 4))
    target = rng.integers(0, 5, (4, 4))
    k1, k2 = _w(rng, c1, 3, 3, 3), _w(rng, c2, c1, 3, 3)
    kd2, kd1 = _w(rng, e, c2 + c1, 3, 3), _w(rng, 5, 2 * e, 1, 1)
    t = lambda *shape, scale=0.5: Tensor(_w(rng, *shape, scale=scale))
    b1, b2, bd2, bd1 = t(c1), t(c2), t(e), t(5)
    norm1 = (Tensor(1 + _w(rng, c1, scale=0.1)), t(c1, scale=0.1))
    fuse = mff.MffWeights(
        nn.Conv2dParams(t(c1, 3, 3, 3), t(c1), 1, 1), (Tensor(1 + _w(rng, c1, scale=0.1)), t(c1, scale=0.1)),
        nn.Conv2dParams(t(c1, 2 * c1, 1, 1), t(c1)), None, None, None,
    )
    cw = _cda_weights(rng, e)

    def branch(x, k1, k2, kd2):
        h1 = relu(nn.group_norm(nn.conv2d(x, nn.Conv2dParams(k1, b1, 2, 1)), *norm1))
        h1 = mff.fuse_level1(x, h1, fuse)
        h2 = relu(nn.conv2d(h1, nn.Conv2dParams(k2, b2, 2, 1)))
        d = concat_channels(nn.upsample_nearest(h2, 2), h1)
        return relu(nn.conv2d(d, nn.Conv2dParams(kd2, bd2, 1, 1)))

    def f(pre, post, k1, k2, kd2, kd1):
        out = cda.cda_forward(branch(pre, k1, k2, kd2), branch(post, k1, k2, kd2), cw)
        d = nn.upsample_nearest(concat_channels(out.u_pre_spa, out.u_post_spa), 2)
        return nn.categorical_cross_entropy(nn.conv2d(d, nn.Conv2dParams(kd1, bd1)), target)

    return f, [pre, post, k1, k2, kd2, kd1]


CASES = {
    "conv2d": _conv,
    "global_avg_pool": _gap,
    "downsample_avg": _down,
    "upsample_nearest": _up,
    "dense": _dense,
    "group_norm": _norm,
    "sigmoid": _sigmoid,
    "softmax": _softmax,
    "binary_cross_entropy": _bce,
    "categorical_cross_entropy": _cce,
    "channel_gate": _channel_gate,
    "channel_fuse": _channel_fuse,
    "spatial_gate": _spatial_gate,
    "cda_forward": _cda,
    "mff_forward": _mff,
    "se_block": _se,
    "encoder_decoder": _composite,
}


def run_case(name, seed):
    f, inputs = CASES[name](np.random.default_rng([seed, len(name)]))
    return gradcheck(f, inputs)


def run_all(seeds=range(10), names=None):
    """``{name: worst error over seeds}``."""
    return {n: max(run_case(n, s) for s in seeds) for n in (names or CASES)}

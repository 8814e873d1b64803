"""Convolution, pooling, resampling, normalization and the two losses."""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tensor import ShapeError, Tensor, _result, as_tensor

BCE_EPS = 1e-7
NORM_EPS = 1e-5


@dataclass
class Conv2dParams:
    kernel: Tensor  # outC x inC x k x k
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def k(self):
        return self.kernel.shape[2]

    def out_extent(self, n):
        return conv_out_extent(n, self.k, self.stride, self.padding)


@dataclass
class DenseParams:
    weight: Tensor  # out x in
    bias: Tensor | None = None


def conv_out_extent(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _as_batch(x):
    """View ``C x H x W`` as a batch of one; returns (array, was_batched)."""
    if x.ndim == 4:
        return x.data, True
    if x.ndim == 3:
        return x.data[None], False
    raise ShapeError(f"expected C x H x W or N x C x H x W, got {x.shape}")


def conv2d(x, p):
    """Zero-padded cross-correlation with gradients for input, kernel and bias."""
    x = as_tensor(x)
    x4, batched = _as_batch(x)
    w, b, s, pad = p.kernel, p.bias, p.stride, p.padding
    n, c, h, wd = x4.shape
    oc, ic, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"kernel must be square, got {w.shape}")
    if ic != c:
        raise ShapeError(f"conv2d input has {c} channels, kernel expects {ic}")
    if s < 1 or pad < 0:
        raise ValueError(f"invalid stride {s} / padding {pad}")
    ho, wo = conv_out_extent(h, k, s, pad), conv_out_extent(wd, k, s, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output extent {ho}x{wo} < 1 for input {h}x{wd}, k={k}, stride={s}, pad={pad}")

    xp = np.pad(x4, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x4
    hp, wp = xp.shape[2:]
    if k == 1 and s == 1:
        cols = np.ascontiguousarray(xp.transpose(1, 0, 2, 3)).reshape(c, n * ho * wo)
    else:
        cols = _kernels.im2col(xp, k, s, ho, wo)
    wm = w.data.reshape(oc, -1)
    out = wm @ cols
    if b is not None:
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(oc, n, ho, wo).transpose(1, 0, 2, 3))
    if not batched:
        out = out[0]

    def backward(g):
        g4 = g if batched else g[None]
        gm = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(oc, -1)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (gm @ cols.T).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = gm.sum(axis=1)
        if x.requires_grad:
            dcols = wm.T @ gm
            if k == 1 and s == 1:
                gxp = np.ascontiguousarray(dcols.reshape(c, n, hp, wp).transpose(1, 0, 2, 3))
            else:
                gxp = _kernels.col2im(dcols, n, c, hp, wp, k, s, ho, wo)
            gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
            if not batched:
                gx = gx[0]
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, "conv2d")


def global_avg_pool(x):
    """Per-channel spatial mean: ``C x h x w -> C`` (``N x C`` when batched)."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"global_avg_pool needs a feature map, got {x.shape}")
    shape = x.shape
    hw = shape[-1] * shape[-2]

    def backward(g):
        return (np.broadcast_to((g / hw)[..., None, None], shape).copy(),)

    return _result(x.data.mean(axis=(-2, -1)), (x,), backward, "gap")


def downsample_avg(x, factor):
    """Non-overlapping ``factor x factor`` area averaging."""
    x = as_tensor(x)
    if factor not in (1, 2, 4):
        raise ValueError(f"factor must be 2 or 4, got {factor}")
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"spatial extents {h}x{w} not divisible by {factor}")
    if factor == 1:
        return x
    lead = x.shape[:-2]
    v = x.data.reshape(*lead, h // factor, factor, w // factor, factor)
    out = v.mean(axis=(-3, -1))
    f2 = factor * factor

    def backward(g):
        gg = np.repeat(np.repeat(g / f2, factor, axis=-2), factor, axis=-1)
        return (gg,)

    return _result(out, (x,), backward, "downsample_avg")


def upsample_nearest(x, factor=2):
    x = as_tensor(x)
    h, w = x.shape[-2:]
    lead = x.shape[:-2]
    out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)

    def backward(g):
        return (g.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1)),)

    return _result(out, (x,), backward, "upsample_nearest")


def dense(x, p):
    """``weight @ x + bias`` for a vector or a batch of row vectors."""
    x = as_tensor(x)
    w, b = p.weight, p.bias
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense input length {x.shape[-1]} != weight in-features {w.shape[1]}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        gx = g @ w.data
        g2 = g.reshape(-1, w.shape[0])
        gw = g2.T @ x.data.reshape(-1, w.shape[1])
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, "dense")


def group_norm(x, gamma, beta, eps=NORM_EPS):
    """Single-group normalization over (C, H, W) per sample, per-channel affine."""
    x = as_tensor(x)
    x4, batched = _as_batch(x)
    axes = (1, 2, 3)
    mu = x4.mean(axis=axes, keepdims=True)
    xc = x4 - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gm = gamma.data.reshape(1, -1, 1, 1)
    out = xhat * gm + beta.data.reshape(1, -1, 1, 1)
    if not batched:
        out = out[0]

    def backward(g):
        g4 = g if batched else g[None]
        ggamma = (g4 * xhat).sum(axis=(0, 2, 3)).reshape(gamma.shape)
        gbeta = g4.sum(axis=(0, 2, 3)).reshape(beta.shape)
        dxhat = g4 * gm
        gx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        if not batched:
            gx = gx[0]
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward, "group_norm")


def binary_cross_entropy(pred, target, reduction="mean"):
    """-[y log p + (1-y) log(1-p)] with ``p`` clamped to [eps, 1-eps].

    ``reduction`` is ``"mean"`` (default) or ``"sum"`` over pixels.
    """
    pred = as_tensor(pred)
    y = np.asarray(target.data if isinstance(target, Tensor) else target)
    if y.shape != pred.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("binary target must contain only 0 and 1")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    y = y.astype(pred.dtype)
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)
    losses = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    norm = pred.size if reduction == "mean" else 1
    total = np.asarray(losses.sum() / norm, dtype=pred.dtype)

    def backward(g):
        d = (-y / p + (1.0 - y) / (1.0 - p)) * inside
        return ((g / norm) * d,)

    return _result(total, (pred,), backward, "bce")


def categorical_cross_entropy(logits, target):
    """Mean over pixels of ``-log softmax(logits)[target]``."""
    logits = as_tensor(logits)
    t = np.asarray(target)
    if logits.ndim < 3 or logits.shape[-3] < 2:
        raise ShapeError(f"logits need >= 2 channels, got {logits.shape}")
    if t.shape != logits.shape[:-3] + logits.shape[-2:]:
        raise ShapeError(f"target shape {t.shape} does not match logits {logits.shape}")
    nc = logits.shape[-3]
    if t.size and (t.min() < 0 or t.max() >= nc):
        bad = t[(t < 0) | (t >= nc)].reshape(-1)[0]
        raise ValueError(f"class id {bad} outside 0..{nc - 1}")
    t = t.astype(np.int64)
    z = logits.data - logits.data.max(axis=-3, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-3, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, np.expand_dims(t, -3), axis=-3)
    npix = t.size
    total = np.asarray(-picked.sum() / npix, dtype=logits.dtype)

    def backward(g):
        d = np.exp(logp)
        onehot = np.zeros_like(d)
        np.put_along_axis(onehot, np.expand_dims(t, -3), 1.0, axis=-3)
        return ((g / npix) * (d - onehot),)

    return _result(total, (logits,), backward, "cce")

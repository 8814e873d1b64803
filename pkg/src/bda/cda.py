"""Cross-directional attention between the pre- and post-disaster streams.

Channel stage::

    I_cha = sigmoid(reduce(gap([U_pre, U_post])))          # 2E -> E
    U_pre_cha  = I_cha * U_post + U_pre
    U_post_cha = I_cha * U_pre  + U_post

Spatial stage::

    I_spa = sigmoid(conv1x1([U_pre_cha, U_post_cha]))      # 2E -> 1
    U_pre_spa  = I_spa * U_post_cha + U_pre
    U_post_spa = I_spa * U_pre_cha  + U_post

The spatial residual adds the original inputs, not the channel-fused maps.
Single-stream squeeze-excitation blocks are provided as an ablation baseline.
"""

from dataclasses import dataclass

from .nn import Conv2dParams, DenseParams, conv2d, dense, global_avg_pool
from .tensor import ShapeError, Tensor, add, concat_channels, mul, reshape, sigmoid

SE_VARIANTS = ("channel", "spatial", "both")


@dataclass
class CdaWeights:
    channel_reduce: DenseParams  # E x 2E
    spatial_conv: Conv2dParams  # 1 x 2E x 1 x 1

    @property
    def width(self):
        return self.channel_reduce.weight.shape[0]


@dataclass
class CdaOutputs:
    u_pre_spa: Tensor
    u_post_spa: Tensor
    i_cha: Tensor
    i_spa: Tensor


def _check_pair(u_pre, u_post):
    if u_pre.shape != u_post.shape:
        raise ShapeError(f"pre/post feature shapes differ: {u_pre.shape} vs {u_post.shape}")


def _channel_view(gate):
    return reshape(gate, gate.shape + (1, 1))


def channel_gate(u_pre, u_post, w):
    _check_pair(u_pre, u_post)
    e = u_pre.shape[-3]
    if w.channel_reduce.weight.shape != (e, 2 * e):
        raise ShapeError(f"channel_reduce is {w.channel_reduce.weight.shape}, features need ({e}, {2 * e})")
    pooled = global_avg_pool(concat_channels(u_pre, u_post))
    return sigmoid(dense(pooled, w.channel_reduce))


def channel_fuse(u_pre, u_post, i_cha):
    _check_pair(u_pre, u_post)
    if i_cha.shape != u_pre.shape[:-2]:
        raise ShapeError(f"channel gate {i_cha.shape} does not match features {u_pre.shape}")
    g = _channel_view(i_cha)
    return add(mul(g, u_post), u_pre), add(mul(g, u_pre), u_post)


def spatial_gate(u_pre_cha, u_post_cha, w):
    _check_pair(u_pre_cha, u_post_cha)
    return sigmoid(conv2d(concat_channels(u_pre_cha, u_post_cha), w.spatial_conv))


def cda_forward(u_pre, u_post, w):
    i_cha = channel_gate(u_pre, u_post, w)
    pre_cha, post_cha = channel_fuse(u_pre, u_post, i_cha)
    i_spa = spatial_gate(pre_cha, post_cha, w)
    return CdaOutputs(
        u_pre_spa=add(mul(i_spa, post_cha), u_pre),
        u_post_spa=add(mul(i_spa, pre_cha), u_post),
        i_cha=i_cha,
        i_spa=i_spa,
    )


@dataclass
class SeWeights:
    channel: DenseParams | None = None  # E x E
    spatial: Conv2dParams | None = None  # 1 x E x 1 x 1


def se_block(u, variant, w):
    """Self-recalibration of one stream, same residual form as the cross version.

    channel: ``g_c * u + u`` with ``g_c = sigmoid(dense(gap(u)))``
    spatial: ``g_s * u + u`` with ``g_s = sigmoid(conv1x1(u))``
    both:    ``v = g_c * u + u``, then ``g_s(v) * v + u``

    With all-zero weights these give 1.5u, 1.5u and 1.75u.
    """
    if variant not in SE_VARIANTS:
        raise ValueError(f"unknown SE variant {variant!r}")
    v = u
    if variant in ("channel", "both"):
        g = sigmoid(dense(global_avg_pool(u), w.channel))
        v = add(mul(_channel_view(g), u), u)
        if variant == "channel":
            return v
    g = sigmoid(conv2d(v, w.spatial))
    return add(mul(g, v), u)

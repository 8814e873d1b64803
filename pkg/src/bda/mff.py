"""Multi-scale feature fusion for the first two encoder levels.

The half- and quarter-resolution copies of the input image each pass through
a 3x3 conv + norm + relu stream. The half-resolution stream is concatenated
with the level-1 features, the quarter-resolution one with the level-2
features, and a 1x1 convolution maps each concat back to the level width.
"""

from dataclasses import dataclass

from .nn import Conv2dParams, conv2d, downsample_avg, group_norm
from .tensor import ShapeError, Tensor, concat_channels, relu


@dataclass
class MffWeights:
    stream2_conv: Conv2dParams
    stream2_norm: tuple[Tensor, Tensor]
    reduce1: Conv2dParams
    stream3_conv: Conv2dParams
    stream3_norm: tuple[Tensor, Tensor]
    reduce2: Conv2dParams


def _stream(image, factor, conv, norm):
    small = downsample_avg(image, factor)
    return relu(group_norm(conv2d(small, conv), *norm))


def _check_level(image, feat, factor):
    h, w = image.shape[-2:]
    if h % 4 or w % 4:
        raise ShapeError(f"image extent {h}x{w} not divisible by 4")
    if feat.shape[-2:] != (h // factor, w // factor):
        raise ShapeError(f"feature extent {feat.shape[-2:]} does not match image/{factor}")


def fuse_level1(image, feat, w):
    _check_level(image, feat, 2)
    return conv2d(concat_channels(feat, _stream(image, 2, w.stream2_conv, w.stream2_norm)), w.reduce1)


def fuse_level2(image, feat, w):
    _check_level(image, feat, 4)
    return conv2d(concat_channels(feat, _stream(image, 4, w.stream3_conv, w.stream3_norm)), w.reduce2)


def mff_forward(image, level1_feat, level2_feat, w):
    """Fuse both levels for given features. Returns ``(fused1, fused2)``.

    Inside the encoder the two halves run in sequence, so level 2 is computed
    from the already-fused level 1.
    """
    return fuse_level1(image, level1_feat, w), fuse_level2(image, level2_feat, w)

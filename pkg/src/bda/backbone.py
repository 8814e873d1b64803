"""Residual U-Net used by both stages.

Encoder level ``i`` is a two-convolution residual block: a strided conv
(5x5 at level 1, 3x3 after), norm, relu, a 3x3 conv, norm, plus a strided
1x1 projection shortcut. Each level halves the spatial extent, so an
``H x W`` input yields features at strides 2, 4, 8, 16 and 32.

Decoder block ``j`` upsamples by two, concatenates [decoder, encoder skip]
and applies conv3x3 + norm + relu. In ``single`` mode a 3x3 head at input
resolution follows. In ``dual`` mode the pre and post images go through the
same parameters, optionally fused after dconv1..3 by cross-directional
attention; the two dconv4 maps are concatenated, passed through one
conv block, upsampled and classified.

Parameters are initialised independently per name from ``(seed, name)``,
so adding or removing optional modules never changes the other weights.
"""

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cda as cda_mod
from . import mff as mff_mod
from .nn import Conv2dParams, DenseParams, conv2d, group_norm, upsample_nearest
from .tensor import ShapeError, Tensor, concat_channels, relu

MODES = ("single", "dual")
FUSION_LEVELS = ("dconv1", "dconv2", "dconv3")
FUSION_KINDS = ("cda", "se-channel", "se-spatial", "se-both")


@dataclass(frozen=True)
class BackboneConfig:
    encoder_channels: tuple = (8, 16, 32, 64, 128)
    decoder_channels: tuple = (64, 32, 16, 8)
    first_kernel: int = 5
    other_kernel: int = 3
    input_channels: int = 3
    stage1_out_channels: int = 1
    stage2_out_channels: int = 5

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in self.decoder_channels))
        if len(self.encoder_channels) != 5 or len(self.decoder_channels) != 4:
            raise ValueError("need exactly 5 encoder and 4 decoder widths")
        widths = self.encoder_channels + self.decoder_channels
        others = (self.first_kernel, self.other_kernel, self.input_channels,
                  self.stage1_out_channels, self.stage2_out_channels)
        if min(widths) < 1 or min(others) < 1:
            raise ValueError(f"all widths must be positive: {self}")
        if self.first_kernel % 2 == 0 or self.other_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")

    @classmethod
    def desk(cls):
        return cls()

    @classmethod
    def full_stage1(cls):
        return cls((64, 256, 512, 1024, 2048), (512, 256, 96, 32))

    @classmethod
    def full_stage2(cls):
        # the stage-2 column of the layer table doubles dconv1..3
        return cls((64, 256, 512, 1024, 2048), (1024, 512, 192, 32))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def encoder_extents(h, w):
    """Spatial extents of the five encoder levels for an ``h x w`` input."""
    return [(h >> i, w >> i) for i in range(1, 6)]


@dataclass
class UNetModel:
    config: BackboneConfig
    mode: str
    params: dict = field(default_factory=dict)
    mff: bool = False
    fusion_levels: tuple = ()
    fusion_kind: str = "cda"

    def __getitem__(self, name):
        return self.params[name]

    def named_parameters(self):
        return list(self.params.items())

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def out_channels(self):
        return self.config.stage1_out_channels if self.mode == "single" else self.config.stage2_out_channels

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def state(self):
        return {k: p.data for k, p in self.params.items()}

    def describe(self):
        return {
            "config": self.config.to_dict(),
            "mode": self.mode,
            "mff": self.mff,
            "fusion_levels": list(self.fusion_levels),
            "fusion_kind": self.fusion_kind,
        }

    def config_hash(self):
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # parameter views used by the forward functions

    def conv(self, prefix, stride=1, padding=None):
        w = self.params[prefix + ".w"]
        k = w.shape[-1]
        return Conv2dParams(w, self.params.get(prefix + ".b"), stride, k // 2 if padding is None else padding)

    def norm(self, prefix):
        return self.params[prefix + ".g"], self.params[prefix + ".b"]

    def mff_weights(self):
        return mff_mod.MffWeights(
            stream2_conv=self.conv("mff.stream2.conv"),
            stream2_norm=self.norm("mff.stream2.norm"),
            reduce1=self.conv("mff.reduce1"),
            stream3_conv=self.conv("mff.stream3.conv"),
            stream3_norm=self.norm("mff.stream3.norm"),
            reduce2=self.conv("mff.reduce2"),
        )

    def cda_weights(self, level):
        p = f"fusion.{level}"
        return cda_mod.CdaWeights(
            channel_reduce=DenseParams(self.params[p + ".reduce.w"], self.params[p + ".reduce.b"]),
            spatial_conv=self.conv(p + ".spatial"),
        )

    def se_weights(self, level):
        p = f"fusion.{level}"
        ch = sp = None
        if p + ".channel.w" in self.params:
            ch = DenseParams(self.params[p + ".channel.w"], self.params[p + ".channel.b"])
        if p + ".spatial.w" in self.params:
            sp = self.conv(p + ".spatial")
        return cda_mod.SeWeights(ch, sp)


# -- construction -----------------------------------------------------------

def _param_specs(config, mode, mff, fusion_levels, fusion_kind):
    """Ordered ``(name, shape, init)`` triples; init is 'he', 'lecun', 'zeros' or 'ones'."""
    enc, dec = config.encoder_channels, config.decoder_channels
    specs = []

    def conv(name, cout, cin, k, bias=True, init="he"):
        specs.append((name + ".w", (cout, cin, k, k), init))
        if bias:
            specs.append((name + ".b", (cout,), "zeros"))

    def norm(name, c):
        specs.append((name + ".g", (c,), "ones"))
        specs.append((name + ".b", (c,), "zeros"))

    cin = config.input_channels
    for i, c in enumerate(enc, start=1):
        k = config.first_kernel if i == 1 else config.other_kernel
        conv(f"enc{i}.conv1", c, cin, k)
        norm(f"enc{i}.norm1", c)
        conv(f"enc{i}.conv2", c, c, config.other_kernel)
        norm(f"enc{i}.norm2", c)
        conv(f"enc{i}.proj", c, cin, 1, init="lecun")
        cin = c

    if mff:
        conv("mff.stream2.conv", enc[0], config.input_channels, 3)
        norm("mff.stream2.norm", enc[0])
        conv("mff.reduce1", enc[0], 2 * enc[0], 1, init="lecun")
        conv("mff.stream3.conv", enc[1], config.input_channels, 3)
        norm("mff.stream3.norm", enc[1])
        conv("mff.reduce2", enc[1], 2 * enc[1], 1, init="lecun")

    prev = enc[4]
    skips = (enc[3], enc[2], enc[1], enc[0])
    for j, (c, s) in enumerate(zip(dec, skips), start=1):
        conv(f"dec{j}.conv", c, prev + s, config.other_kernel)
        norm(f"dec{j}.norm", c)
        prev = c
        level = f"dconv{j}"
        if mode == "dual" and level in fusion_levels:
            p = f"fusion.{level}"
            if fusion_kind == "cda":
                specs.append((p + ".reduce.w", (c, 2 * c), "lecun"))
                specs.append((p + ".reduce.b", (c,), "zeros"))
                conv(p + ".spatial", 1, 2 * c, 1, init="lecun")
            else:
                if fusion_kind in ("se-channel", "se-both"):
                    specs.append((p + ".channel.w", (c, c), "lecun"))
                    specs.append((p + ".channel.b", (c,), "zeros"))
                if fusion_kind in ("se-spatial", "se-both"):
                    conv(p + ".spatial", 1, c, 1, init="lecun")

    last = dec[3]
    if mode == "single":
        conv("head.out", config.stage1_out_channels, last, config.other_kernel, init="lecun")
    else:
        conv("head.fuse", last, 2 * last, config.other_kernel)
        norm("head.fuse.norm", last)
        conv("head.out", config.stage2_out_channels, last, config.other_kernel, init="lecun")
    return specs


def _init_param(seed, name, shape, init, dtype):
    if init == "zeros":
        return np.zeros(shape, dtype=dtype)
    if init == "ones":
        return np.ones(shape, dtype=dtype)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    fan_in = int(np.prod(shape[1:]))
    gain = 2.0 if init == "he" else 1.0
    return (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(dtype)


def build(config, mode="single", seed=0, mff=False, fusion_levels=(), fusion_kind="cda", dtype=np.float64):
    """Deterministically initialised :class:`UNetModel`."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    fusion_levels = tuple(sorted(set(fusion_levels)))
    bad = [lv for lv in fusion_levels if lv not in FUSION_LEVELS]
    if bad:
        raise ValueError(f"unknown fusion levels {bad}; choose from {FUSION_LEVELS}")
    if fusion_kind not in FUSION_KINDS:
        raise ValueError(f"fusion kind must be one of {FUSION_KINDS}")
    if mode == "single" and fusion_levels:
        raise ValueError("attention fusion needs the dual-branch mode")
    params = {}
    for name, shape, init in _param_specs(config, mode, mff, fusion_levels, fusion_kind):
        params[name] = Tensor(_init_param(seed, name, shape, init, dtype), requires_grad=True, name=name)
    return UNetModel(config, mode, params, bool(mff), fusion_levels, fusion_kind)


def parameter_count(config, mode="single", mff=False, fusion_levels=(), fusion_kind="cda"):
    specs = _param_specs(config, mode, mff, tuple(fusion_levels), fusion_kind)
    return int(sum(np.prod(s) for _, s, _ in specs))


# -- forward ----------------------------------------------------------------

def _encoder_level(m, i, x):
    s = m.conv(f"enc{i}.conv1", stride=2)
    h = relu(group_norm(conv2d(x, s), *m.norm(f"enc{i}.norm1")))
    h = group_norm(conv2d(h, m.conv(f"enc{i}.conv2")), *m.norm(f"enc{i}.norm2"))
    shortcut = conv2d(x, m.conv(f"enc{i}.proj", stride=2, padding=0))
    return relu(h + shortcut)


def forward_encoder(m, x, mff=None):
    """Five feature maps at strides 2..32.

    ``mff`` overrides the model's own flag; pass ``False`` to run the bare
    backbone of a model that carries fusion weights.
    """
    h, w = x.shape[-2:]
    if h % 32 or w % 32:
        raise ShapeError(f"input extent {h}x{w} must be divisible by 32")
    use_mff = m.mff if mff is None else bool(mff)
    if use_mff and not m.mff:
        raise ValueError("model was built without multi-scale fusion weights")
    weights = m.mff_weights() if use_mff else None
    feats = []
    cur = x
    for i in range(1, 6):
        cur = _encoder_level(m, i, cur)
        if weights is not None and i == 1:
            cur = mff_mod.fuse_level1(x, cur, weights)
        elif weights is not None and i == 2:
            cur = mff_mod.fuse_level2(x, cur, weights)
        feats.append(cur)
    return feats


def _decoder_block(m, j, d, skip):
    d = concat_channels(upsample_nearest(d, 2), skip)
    return relu(group_norm(conv2d(d, m.conv(f"dec{j}.conv")), *m.norm(f"dec{j}.norm")))


def default_fusion(m):
    """Fusion hook ``(level, d_pre, d_post) -> (d_pre, d_post)`` from the model's flags."""
    levels = set(m.fusion_levels)

    def hook(level, d_pre, d_post):
        if level not in levels:
            return d_pre, d_post
        if m.fusion_kind == "cda":
            out = cda_mod.cda_forward(d_pre, d_post, m.cda_weights(level))
            return out.u_pre_spa, out.u_post_spa
        variant = m.fusion_kind.split("-", 1)[1]
        w = m.se_weights(level)
        return cda_mod.se_block(d_pre, variant, w), cda_mod.se_block(d_post, variant, w)

    return hook


def _check_feats(m, feats):
    if len(feats) != 5:
        raise ShapeError(f"expected 5 encoder features, got {len(feats)}")
    for i, (f, c) in enumerate(zip(feats, m.config.encoder_channels)):
        if f.shape[-3] != c:
            raise ShapeError(f"encoder level {i + 1} has {f.shape[-3]} channels, config says {c}")
        if i and f.shape[-1] * 2 != feats[i - 1].shape[-1]:
            raise ShapeError("encoder features do not follow the halving schedule")


def forward_decoder(m, enc_feats, fusion=None):
    """Decode to ``out_channels x H x W`` logits.

    Single mode takes one feature list; dual mode takes ``(pre_feats, post_feats)``.
    """
    if m.mode == "single":
        _check_feats(m, enc_feats)
        d = enc_feats[4]
        for j in range(1, 5):
            d = _decoder_block(m, j, d, enc_feats[4 - j])
        return conv2d(upsample_nearest(d, 2), m.conv("head.out"))

    pre, post = enc_feats
    _check_feats(m, pre)
    _check_feats(m, post)
    hook = default_fusion(m) if fusion is None else fusion
    dp, dq = pre[4], post[4]
    for j in range(1, 5):
        dp = _decoder_block(m, j, dp, pre[4 - j])
        dq = _decoder_block(m, j, dq, post[4 - j])
        if j < 4:
            dp, dq = hook(f"dconv{j}", dp, dq)
    d = concat_channels(dp, dq)
    d = relu(group_norm(conv2d(d, m.conv("head.fuse")), *m.norm("head.fuse.norm")))
    return conv2d(upsample_nearest(d, 2), m.conv("head.out"))


def forward(m, pre, post=None):
    if m.mode == "single":
        return forward_decoder(m, forward_encoder(m, pre))
    if post is None:
        raise ValueError("dual-branch model needs both images")
    return forward_decoder(m, (forward_encoder(m, pre), forward_encoder(m, post)))


def transfer_weights(stage1, stage2):
    """Copy every same-name, same-shape parameter of ``stage1`` into ``stage2``.

    Returns the copied names. Parameters only ``stage2`` has keep their values.
    """
    copied = []
    for name, src in stage1.params.items():
        dst = stage2.params.get(name)
        if dst is not None and dst.shape == src.shape:
            dst.data = src.data.astype(dst.dtype, copy=True)
            copied.append(name)
    if not copied:
        raise ValueError("models share no shape-compatible parameters")
    return copied

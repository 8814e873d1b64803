"""Flips, quarter rotations and class-targeted CutMix.

Every transform is applied identically to the pre image, post image and
label. Randomness comes from :func:`sample_rng`, which derives a generator
from ``(seed, epoch, index)`` so results never depend on worker scheduling.

CutMix composes ``M * A + (1 - M) * B`` with ``M`` zero inside one
axis-aligned rectangle. ``B`` is drawn uniformly from samples holding at
least one pixel of a difficult class, and the rectangle is centred on one of
those pixels (then clipped to the image), with area ratio uniform in
``area_ratio_range``.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import SamplePair

log = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    difficult_classes: tuple = (2, 3)
    cutmix_probability: float = 0.5
    area_ratio_range: tuple = (0.1, 0.4)
    seed: int = 0

    def __post_init__(self):
        self.difficult_classes = tuple(sorted({int(c) for c in self.difficult_classes}))
        if not 0.0 <= self.cutmix_probability <= 1.0:
            raise ValueError(f"cutmix_probability must lie in [0, 1], got {self.cutmix_probability}")
        lo, hi = self.area_ratio_range
        if not 0.0 < lo < hi < 1.0:
            raise ValueError(f"area_ratio_range must satisfy 0 < min < max < 1, got {self.area_ratio_range}")
        if any(not 1 <= c <= 4 for c in self.difficult_classes):
            raise ValueError(f"difficult classes must be damage levels 1..4, got {self.difficult_classes}")


@dataclass(frozen=True)
class CutMixMask:
    top: int
    left: int
    height: int
    width: int
    extent: tuple  # (H, W)

    def __post_init__(self):
        h, w = self.extent
        if min(self.top, self.left, self.height, self.width) < 0 or \
                self.top + self.height > h or self.left + self.width > w:
            raise ValueError(f"rectangle {self} not inside {h}x{w}")

    @classmethod
    def empty(cls, extent):
        return cls(0, 0, 0, 0, tuple(extent))

    @classmethod
    def full(cls, extent):
        return cls(0, 0, extent[0], extent[1], tuple(extent))

    @property
    def area(self):
        return self.height * self.width

    @property
    def ratio(self):
        return self.area / (self.extent[0] * self.extent[1])

    def as_map(self):
        """``1 x H x W`` uint8 map: 0 inside the rectangle, 1 outside."""
        m = np.ones((1,) + tuple(self.extent), dtype=np.uint8)
        m[0, self.top:self.top + self.height, self.left:self.left + self.width] = 0
        return m

    def contains(self, y, x):
        return self.top <= y < self.top + self.height and self.left <= x < self.left + self.width


def sample_rng(seed, epoch, index):
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(epoch), int(index)])


def cutmix(a, b, mask):
    """Paste ``b`` into ``a`` inside the mask rectangle, on all three planes."""
    if a.extent != b.extent or tuple(mask.extent) != a.extent:
        raise ValueError(f"extent mismatch: A {a.extent}, B {b.extent}, mask {mask.extent}")
    keep = mask.as_map().astype(bool)  # True where A survives
    return SamplePair(
        np.where(keep, a.pre, b.pre),
        np.where(keep, a.post, b.post),
        np.where(keep[0], a.label, b.label),
        f"{a.id}+{b.id}",
    )


def draw_rect(rng, extent, center, ratio_range):
    """Rectangle with area ratio in ``ratio_range`` centred on ``center``, clipped."""
    H, W = extent
    lo, hi = ratio_range
    total = H * W
    ratio = rng.uniform(lo, hi)
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    h = int(min(H, max(1, round(math.sqrt(ratio * total * aspect)))))
    w_min = max(1, math.ceil(lo * total / h))
    w_max = min(W, math.floor(hi * total / h))
    if w_min > w_max:  # ratio bounds unreachable at this height; fall back to nearest width
        w_min = w_max = min(W, max(1, round(ratio * total / h)))
    w = int(min(w_max, max(w_min, round(ratio * total / h))))
    cy, cx = center
    top = min(max(cy - h // 2, 0), H - h)
    left = min(max(cx - w // 2, 0), W - w)
    return CutMixMask(int(top), int(left), h, w, (H, W))


class DifficultSampler:
    """Uniform draws over samples that contain a difficult-class pixel."""

    def __init__(self, samples, config):
        self.samples = samples
        self.config = config
        classes = np.asarray(config.difficult_classes)
        self.indices = [i for i, s in enumerate(samples) if np.isin(s.label, classes).any()]
        if not self.indices:
            log.warning("no sample contains classes %s; CutMix disabled", config.difficult_classes)

    @property
    def enabled(self):
        return bool(self.indices)

    def draw(self, rng):
        """Return ``(index, sample, mask)`` or ``None`` when disabled."""
        if not self.indices:
            return None
        idx = self.indices[int(rng.integers(len(self.indices)))]
        src = self.samples[idx]
        ys, xs = np.nonzero(np.isin(src.label, np.asarray(self.config.difficult_classes)))
        k = int(rng.integers(len(ys)))
        mask = draw_rect(rng, src.extent, (int(ys[k]), int(xs[k])), self.config.area_ratio_range)
        return idx, src, mask


def sample_difficult_source(dataset, config, rng):
    """Pick a CutMix source and its rectangle: ``(sample, mask)`` or ``None``."""
    drawn = DifficultSampler(dataset, config).draw(rng)
    return None if drawn is None else drawn[1:]


def hflip(s):
    return SamplePair(s.pre[:, :, ::-1].copy(), s.post[:, :, ::-1].copy(), s.label[:, ::-1].copy(), s.id)


def vflip(s):
    return SamplePair(s.pre[:, ::-1].copy(), s.post[:, ::-1].copy(), s.label[::-1].copy(), s.id)


def rot90(s, k=1):
    if s.extent[0] != s.extent[1]:
        log.debug("rotation skipped for non-square sample %s", s.id)
        return s
    return SamplePair(np.rot90(s.pre, k, axes=(1, 2)).copy(), np.rot90(s.post, k, axes=(1, 2)).copy(),
                      np.rot90(s.label, k).copy(), s.id)


def basic_augment(sample, rng):
    """Independent horizontal flip, vertical flip (p=0.5 each) and k*90 rotation."""
    do_h, do_v = rng.random() < 0.5, rng.random() < 0.5
    k = int(rng.integers(4))
    out = sample
    if do_h:
        out = hflip(out)
    if do_v:
        out = vflip(out)
    if k:
        out = rot90(out, k)
    return out


def random_crop(sample, size, rng):
    H, W = sample.extent
    if (H, W) == (size, size):
        return sample
    if size > H or size > W:
        raise ValueError(f"crop {size} larger than sample {H}x{W}")
    y, x = int(rng.integers(H - size + 1)), int(rng.integers(W - size + 1))
    return SamplePair(sample.pre[:, y:y + size, x:x + size], sample.post[:, y:y + size, x:x + size],
                      sample.label[y:y + size, x:x + size], sample.id)

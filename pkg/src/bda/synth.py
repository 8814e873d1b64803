"""Synthetic pre/post-disaster scenes standing in for real imagery.

Rendering rules (fixed so datasets are reproducible and comparable):

* ground: per-image base colour with smooth low-frequency texture and fine
  noise; an optional straight road in a grey close to some roof colours.
* buildings: non-overlapping axis-aligned rectangles with a roof colour from
  a palette, a darker one-pixel outline and a cast shadow to the lower right.
  The label paints the footprint (outline included) with its damage level.
* post image: the pre scene under a mild global illumination change and new
  sensor noise, with each building re-rendered by level:

  - 1 no damage: unchanged
  - 2 minor: scattered dark debris spots and light roof noise
  - 3 major: a 40-60% slice of the footprint erased to debris, the rest
    heavily perturbed
  - 4 destroyed: whole footprint replaced by a rubble texture

Damage levels are assigned over the whole set by largest-remainder quotas of
``class_mix`` and then shuffled, so the empirical building mix matches the
configured one to within one building per class.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, SamplePair, save_sample, write_manifest

# no / minor / major / destroyed share of annotated buildings in the xBD split
XBD_MIX = (0.7604, 0.0898, 0.0729, 0.0769)

_GROUND = np.array([[96, 120, 70], [130, 115, 80], [110, 128, 92], [120, 105, 75]], dtype=float)
_ROOFS = np.array([[172, 72, 60], [152, 152, 158], [205, 192, 170], [92, 112, 142], [128, 126, 130]], dtype=float)
_ROAD = np.array([138, 136, 134], dtype=float)
_DEBRIS = np.array([112, 96, 76], dtype=float)


@dataclass
class SynthConfig:
    num_samples: int = 200
    extent: int = 64
    buildings_per_image: tuple = (3, 6)
    building_size: tuple = (6, 14)
    class_mix: tuple = XBD_MIX
    seed: int = 0
    road_probability: float = 0.5

    def __post_init__(self):
        if self.extent < 32 or self.extent % 32:
            raise ValueError(f"extent must be a positive multiple of 32, got {self.extent}")
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        lo, hi = self.buildings_per_image
        if not 0 <= lo <= hi:
            raise ValueError(f"bad buildings_per_image range {self.buildings_per_image}")
        mix = np.asarray(self.class_mix, dtype=float)
        if mix.shape != (4,) or mix.min() < 0 or mix.sum() <= 0:
            raise ValueError(f"class_mix needs 4 non-negative weights, got {self.class_mix}")


@dataclass
class Footprint:
    top: int
    left: int
    height: int
    width: int
    level: int = 1

    def slices(self):
        return slice(self.top, self.top + self.height), slice(self.left, self.left + self.width)


def quota_levels(n, mix, rng):
    """``n`` damage levels (1..4) matching ``mix`` by largest remainder, shuffled."""
    mix = np.asarray(mix, dtype=float)
    mix = mix / mix.sum()
    raw = mix * n
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    levels = np.repeat(np.arange(1, 5), counts)
    rng.shuffle(levels)
    return levels


def _box_blur(a, r):
    if r <= 0:
        return a
    k = np.ones(2 * r + 1) / (2 * r + 1)
    pad = np.pad(a, r, mode="reflect")
    pad = np.apply_along_axis(lambda v: np.convolve(v, k, mode="valid"), 0, pad)
    return np.apply_along_axis(lambda v: np.convolve(v, k, mode="valid"), 1, pad)


def _smooth_noise(rng, h, w, cell=8):
    low = rng.standard_normal((h // cell + 1, w // cell + 1))
    up = np.repeat(np.repeat(low, cell, axis=0), cell, axis=1)[:h, :w]
    up = _box_blur(up, cell // 2)
    return up / (up.std() + 1e-9)


def _layout(rng, cfg):
    """Road mask and non-overlapping footprints for one image."""
    e = cfg.extent
    road = np.zeros((e, e), dtype=bool)
    if rng.random() < cfg.road_probability:
        width = int(rng.integers(3, 6))
        pos = int(rng.integers(4, e - width - 4))
        if rng.random() < 0.5:
            road[pos:pos + width, :] = True
        else:
            road[:, pos:pos + width] = True
    occupied = road.copy()
    n = int(rng.integers(cfg.buildings_per_image[0], cfg.buildings_per_image[1] + 1))
    lo, hi = cfg.building_size
    feet = []
    for _ in range(n):
        for _attempt in range(40):
            h = int(rng.integers(lo, hi + 1))
            w = int(rng.integers(lo, hi + 1))
            top = int(rng.integers(1, e - h - 2))
            left = int(rng.integers(1, e - w - 2))
            # keep a one-pixel gap plus room for the shadow
            if not occupied[top - 1:top + h + 3, left - 1:left + w + 3].any():
                occupied[top - 1:top + h + 3, left - 1:left + w + 3] = True
                feet.append(Footprint(top, left, h, w))
                break
    return road, feet


def _render_pre(rng, cfg, road, feet):
    e = cfg.extent
    base = _GROUND[rng.integers(len(_GROUND))] + rng.uniform(-8, 8, 3)
    tex = _smooth_noise(rng, e, e)
    img = base[:, None, None] + 14.0 * tex[None] + rng.normal(0, 4.0, (3, e, e))
    if road.any():
        img[:, road] = _ROAD[:, None] + rng.uniform(-6, 6, 3)[:, None] + rng.normal(0, 4.0, (3, int(road.sum())))
    roofs = []
    for f in feet:
        ys, xs = f.slices()
        img[:, f.top + f.height:f.top + f.height + 2, f.left + 1:f.left + f.width + 2] *= 0.6
        img[:, f.top + 1:f.top + f.height + 2, f.left + f.width:f.left + f.width + 2] *= 0.6
        roof = _ROOFS[rng.integers(len(_ROOFS))] + rng.uniform(-12, 12, 3)
        roofs.append(roof)
        img[:, ys, xs] = roof[:, None, None] + rng.normal(0, 4.0, (3, f.height, f.width))
        edge = np.ones((f.height, f.width), dtype=bool)
        edge[1:-1, 1:-1] = False
        img[:, ys, xs][:, edge] *= 0.65
    return img, roofs


def _damage(rng, post, f, roof):
    ys, xs = f.slices()
    h, w = f.height, f.width
    region = post[:, ys, xs]
    if f.level == 2:
        region += rng.normal(0, 8.0, region.shape)
        spots = max(2, int(round(0.05 * h * w)))
        for _ in range(spots):
            y, x = int(rng.integers(0, h - 1)), int(rng.integers(0, w - 1))
            region[:, y:y + 2, x:x + 2] = (_DEBRIS * 0.7)[:, None, None] + rng.normal(0, 6.0, (3, 2, 2))
    elif f.level == 3:
        frac = rng.uniform(0.4, 0.6)
        erased = np.zeros((h, w), dtype=bool)
        side = int(rng.integers(4))
        cut_h, cut_w = max(1, round(frac * h)), max(1, round(frac * w))
        if side == 0:
            erased[:cut_h] = True
        elif side == 1:
            erased[h - cut_h:] = True
        elif side == 2:
            erased[:, :cut_w] = True
        else:
            erased[:, w - cut_w:] = True
        region += rng.normal(0, 22.0, region.shape)
        region[:, erased] = _DEBRIS[:, None] + rng.normal(0, 20.0, (3, int(erased.sum())))
    elif f.level == 4:
        base = 0.35 * roof + 0.65 * _DEBRIS
        grain = rng.normal(0, 30.0, (1, h, w)) + rng.normal(0, 10.0, (3, h, w))
        region[:] = base[:, None, None] + grain
    post[:, ys, xs] = region


def _render_post(rng, pre, feet, roofs):
    gain = rng.uniform(0.92, 1.08)
    post = pre * gain + rng.uniform(-8, 8) + rng.normal(0, 3.0, pre.shape)
    for f, roof in zip(feet, roofs):
        if f.level > 1:
            _damage(rng, post, f, roof * gain)
    return post


def _quantize(img):
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate(cfg, prefix="s"):
    """Render ``cfg.num_samples`` pairs. Returns ``(samples, footprints)``."""
    rng = np.random.default_rng(cfg.seed)
    layouts = [_layout(rng, cfg) for _ in range(cfg.num_samples)]
    total = sum(len(feet) for _, feet in layouts)
    levels = iter(quota_levels(total, cfg.class_mix, rng))
    samples, all_feet = [], []
    for idx, (road, feet) in enumerate(layouts):
        for f in feet:
            f.level = int(next(levels))
        pre, roofs = _render_pre(rng, cfg, road, feet)
        post = _render_post(rng, pre, feet, roofs)
        label = np.zeros((cfg.extent, cfg.extent), dtype=np.uint8)
        for f in feet:
            label[f.slices()] = f.level
        samples.append(SamplePair(_quantize(pre), _quantize(post), label, f"{prefix}{idx:05d}"))
        all_feet.append(feet)
    return samples, all_feet


def synth_generate(cfg, root, split="train"):
    """Render a split and write it as ``<root>/manifest.tsv`` + ``<root>/images``."""
    root = Path(root)
    samples, _ = generate(cfg, prefix=f"{split}-")
    records = [save_sample(s, root) for s in samples]
    manifest = DatasetManifest(root, records, split, cfg.seed)
    write_manifest(manifest)
    return manifest

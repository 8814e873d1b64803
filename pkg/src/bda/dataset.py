"""Sample pairs, dataset manifests and atomic file writes.

Layout of a dataset root::

    <root>/manifest.tsv      # id, pre, post, label (tab separated, paths relative to root)
    <root>/images/<id>_pre.ppm, <id>_post.ppm, <id>_label.pgm
"""

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pnm

MAX_CLASS = 4
MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ("id", "pre", "post", "label")


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclass
class SamplePair:
    pre: np.ndarray  # 3 x H x W, uint8 raster or float in [0, 1]
    post: np.ndarray
    label: np.ndarray  # H x W class ids 0..4
    id: str = ""

    def __post_init__(self):
        if self.pre.ndim != 3 or self.pre.shape[0] != 3:
            raise DataError(f"{self.id}: pre image must be 3 x H x W, got {self.pre.shape}")
        if self.post.shape != self.pre.shape or self.label.shape != self.pre.shape[1:]:
            raise DataError(
                f"{self.id}: extents differ (pre {self.pre.shape}, post {self.post.shape}, label {self.label.shape})"
            )
        if self.label.size and self.label.max() > MAX_CLASS:
            raise DataError(f"{self.id}: class id {int(self.label.max())} > {MAX_CLASS}")

    @property
    def extent(self):
        return self.label.shape

    def to_float(self, dtype=np.float32):
        """Images scaled to [0, 1]; labels as int64."""
        if np.issubdtype(self.pre.dtype, np.floating):
            return SamplePair(self.pre.astype(dtype), self.post.astype(dtype), self.label.astype(np.int64), self.id)
        return SamplePair(
            (self.pre / 255.0).astype(dtype),
            (self.post / 255.0).astype(dtype),
            self.label.astype(np.int64),
            self.id,
        )

    def building_mask(self):
        return (self.label > 0).astype(np.uint8)


@dataclass
class Record:
    id: str
    pre: str
    post: str
    label: str


@dataclass
class DatasetManifest:
    root: Path
    records: list = field(default_factory=list)
    split: str = "train"
    seed: int = 0

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def path(self, rel):
        return self.root / rel

    def check(self, with_post=True):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("manifest ids are not unique")
        for r in self.records:
            for rel in (r.pre, r.post, r.label) if with_post else (r.pre, r.label):
                if not self.path(rel).exists():
                    raise DataError(f"{r.id}: missing file {rel}")
        return self

    def load_samples(self, as_float=False, with_post=True):
        return [load_sample(r, self.root, as_float=as_float, with_post=with_post) for r in self.records]


def atomic_write(path, data):
    """Write bytes to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_raster(path, what):
    try:
        return pnm.read(path)
    except (OSError, pnm.PnmError) as exc:
        raise DataError(f"cannot read {what} {path}: {exc}") from None


def load_sample(record, root=".", as_float=True, with_post=True):
    """Read one pair. Images come back in [0, 1] unless ``as_float=False``.

    ``with_post=False`` never opens the post file and fills that plane with zeros.
    """
    root = Path(root)
    pre = _read_raster(root / record.pre, "pre image")
    post = _read_raster(root / record.post, "post image") if with_post else np.zeros_like(pre)
    label = _read_raster(root / record.label, "label map")
    if pre.ndim != 3 or post.ndim != 3:
        raise DataError(f"{record.id}: images must be P6 RGB rasters")
    if label.ndim != 2:
        raise DataError(f"{record.id}: label must be a P5 grey raster")
    if pre.shape != post.shape or label.shape != pre.shape[1:]:
        raise DataError(f"{record.id}: extents differ (pre {pre.shape}, post {post.shape}, label {label.shape})")
    bad = np.flatnonzero(label > MAX_CLASS)
    if bad.size:
        off = int(bad[0])
        r, c = divmod(off, label.shape[1])
        raise DataError(
            f"{record.id}: label value {int(label.flat[off])} at pixel offset {off} (row {r}, col {c}) exceeds {MAX_CLASS}"
        )
    sample = SamplePair(pre, post, label, record.id)
    return sample.to_float() if as_float else sample


def save_sample(sample, root):
    """Write a uint8 sample under ``<root>/images`` and return its record."""
    root = Path(root)
    rec = Record(sample.id, f"images/{sample.id}_pre.ppm", f"images/{sample.id}_post.ppm",
                 f"images/{sample.id}_label.pgm")
    atomic_write(root / rec.pre, pnm.encode(sample.pre))
    atomic_write(root / rec.post, pnm.encode(sample.post))
    atomic_write(root / rec.label, pnm.encode(sample.label.astype(np.uint8)))
    return rec


def write_manifest(manifest):
    lines = [f"# split={manifest.split} seed={manifest.seed}", "\t".join(MANIFEST_COLUMNS)]
    for r in manifest.records:
        lines.append("\t".join((r.id, r.pre, r.post, r.label)))
    atomic_write(Path(manifest.root) / MANIFEST_NAME, ("\n".join(lines) + "\n").encode())


def read_manifest(root, with_post=True):
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no {MANIFEST_NAME} under {root}")
    split, seed, records = "train", 0, []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "split":
                    split = val
                elif key == "seed":
                    seed = int(val)
            continue
        cols = line.split("\t")
        if tuple(cols) == MANIFEST_COLUMNS:
            continue
        if len(cols) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated columns, got {len(cols)}")
        records.append(Record(*cols))
    return DatasetManifest(root, records, split, seed).check(with_post)

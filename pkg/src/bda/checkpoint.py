"""Versioned little-endian parameter files (``.bdack``).

Layout::

    magic      8 bytes  b"BDACK\\x00\\r\\n"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON (stage, epoch, seed,
               config hash, model description)
    count      u32
    per entry: name_len u32, name bytes, rank u32, rank x u32 extents,
               prod(extents) float64 values

Values are always stored as float64 so float32 training round-trips exactly.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig, build
from .dataset import atomic_write

MAGIC = b"BDACK\x00\r\n"
VERSION = 1
SUFFIX = ".bdack"


class CheckpointError(ValueError):
    pass


def encode(params, metadata=None):
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)) + nb)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def decode(buf):
    """Parse a checkpoint fully; returns ``(params, metadata)``."""
    r = _Reader(buf)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (reader knows {VERSION})")
    meta = json.loads(r.take(r.u32("metadata length"), "metadata").decode())
    params = {}
    for _ in range(r.u32("entry count")):
        name = r.take(r.u32("name length"), "name").decode()
        rank = r.u32(f"{name} rank")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} extents"))
        n = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * n, f"{name} values"), dtype="<f8").reshape(shape).copy()
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after last entry")
    return params, meta


def save_checkpoint(model, path, **metadata):
    meta = {"model": model.describe(), "config_hash": model.config_hash(), **metadata}
    atomic_write(path, encode(model.state(), meta))
    return Path(path)


def load_checkpoint(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    return decode(buf)


def load_into(model, params, strict=True):
    """Assign parameters after validating every shape first (all or nothing)."""
    for name, arr in params.items():
        if name not in model.params:
            if strict:
                raise CheckpointError(f"checkpoint parameter {name} not in model")
            continue
        if model.params[name].shape != arr.shape:
            raise CheckpointError(f"shape conflict for {name}: file {arr.shape}, model {model.params[name].shape}")
    if strict:
        missing = sorted(set(model.params) - set(params))
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
    for name, arr in params.items():
        if name in model.params:
            model.params[name].data = arr.astype(model.params[name].dtype)
    return model


def load_model(path, dtype=np.float32):
    """Rebuild the model described in the checkpoint metadata and load it."""
    params, meta = load_checkpoint(path)
    desc = meta.get("model")
    if not desc:
        raise CheckpointError(f"{path} carries no model description")
    cfg = BackboneConfig(**desc["config"])
    model = build(cfg, desc["mode"], 0, mff=desc["mff"], fusion_levels=desc["fusion_levels"],
                  fusion_kind=desc["fusion_kind"], dtype=dtype)
    return load_into(model, params), meta

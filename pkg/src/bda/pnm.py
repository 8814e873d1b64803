"""Binary portable anymap rasters: P6 (RGB) and P5 (grey), 8-bit only."""

import numpy as np


class PnmError(ValueError):
    pass


def _tokens(buf):
    """Yield (token, end_offset) for the four header fields."""
    pos, n = 0, len(buf)
    found = 0
    while found < 4:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PnmError("truncated header")
        found += 1
        yield buf[start:pos], pos


def decode(buf):
    """Parse a P5/P6 byte string. Returns ``H x W`` or ``3 x H x W`` uint8."""
    toks = list(_tokens(buf))
    magic = toks[0][0]
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"unsupported magic {magic!r}; expected P5 or P6")
    try:
        width, height, maxval = (int(t) for t, _ in toks[1:])
    except ValueError as exc:
        raise PnmError(f"malformed header: {exc}") from None
    if width < 1 or height < 1:
        raise PnmError(f"bad extent {width}x{height}")
    if not 0 < maxval < 256:
        raise PnmError(f"only 8-bit rasters are supported, maxval={maxval}")
    start = toks[3][1] + 1  # exactly one whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    body = buf[start:start + need]
    if len(body) != need:
        raise PnmError(f"truncated raster: {len(body)} of {need} bytes")
    arr = np.frombuffer(body, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).transpose(2, 0, 1).copy()


def encode(arr):
    """Channels-first RGB ``3 x H x W`` -> P6, ``H x W`` -> P5."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise PnmError(f"expected uint8 raster, got {arr.dtype}")
    if arr.ndim == 2:
        h, w = arr.shape
        return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()
    if arr.ndim == 3 and arr.shape[0] == 3:
        _, h, w = arr.shape
        return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr.transpose(1, 2, 0)).tobytes()
    raise PnmError(f"cannot encode array of shape {arr.shape}")


def read(path):
    with open(path, "rb") as f:
        return decode(f.read())


def header_size(buf):
    toks = list(_tokens(buf))
    return toks[3][1] + 1

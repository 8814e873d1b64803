"""Convolution inner loops: patch extraction (im2col) and its adjoint (col2im).

Two interchangeable implementations live here. The numba one is used by
default; setting ``BDA_NUMBA=0`` in the environment (or calling
:func:`set_backend`) selects the pure-numpy path. Both accumulate in the
same (ki, kj) order, so their outputs are bitwise identical.

Column layout: row ``c*k*k + ki*k + kj``, column ``n*ho*wo + oy*wo + ox``.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def im2col_numpy(xp, k, stride, ho, wo):
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * ho * wo)


def col2im_numpy(cols, n, c, hp, wp, k, stride, ho, wo):
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    v = cols.reshape(c, k, k, n, ho, wo)
    ye = stride * (ho - 1) + 1
    xe = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + ye:stride, j:j + xe:stride] += v[:, i, j].transpose(1, 0, 2, 3)
    return out


if numba is not None:

    @numba.njit(cache=True)
    def _im2col_jit(xp, k, stride, ho, wo):
        n, c = xp.shape[0], xp.shape[1]
        cols = np.empty((c * k * k, n * ho * wo), dtype=xp.dtype)
        for ci in range(c):
            for i in range(k):
                for j in range(k):
                    row = ci * k * k + i * k + j
                    for b in range(n):
                        base = b * ho * wo
                        for oy in range(ho):
                            y = oy * stride + i
                            for ox in range(wo):
                                cols[row, base + oy * wo + ox] = xp[b, ci, y, ox * stride + j]
        return cols

    @numba.njit(cache=True)
    def _col2im_jit(cols, n, c, hp, wp, k, stride, ho, wo):
        out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
        for i in range(k):
            for j in range(k):
                for b in range(n):
                    base = b * ho * wo
                    for ci in range(c):
                        row = ci * k * k + i * k + j
                        for oy in range(ho):
                            y = oy * stride + i
                            for ox in range(wo):
                                out[b, ci, y, ox * stride + j] += cols[row, base + oy * wo + ox]
        return out

    def im2col_numba(xp, k, stride, ho, wo):
        return _im2col_jit(np.ascontiguousarray(xp), k, stride, ho, wo)

    def col2im_numba(cols, n, c, hp, wp, k, stride, ho, wo):
        return _col2im_jit(np.ascontiguousarray(cols), n, c, hp, wp, k, stride, ho, wo)

else:  # pragma: no cover
    im2col_numba = col2im_numba = None


_BACKENDS = {"numpy": (im2col_numpy, col2im_numpy)}
if numba is not None:
    _BACKENDS["numba"] = (im2col_numba, col2im_numba)

im2col = col2im = None
backend = None


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels for all later convolutions."""
    global im2col, col2im, backend
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {sorted(_BACKENDS)}")
    im2col, col2im = _BACKENDS[name]
    backend = name


def available_backends():
    return sorted(_BACKENDS)


def _default_backend():
    flag = os.environ.get("BDA_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off") or "numba" not in _BACKENDS:
        return "numpy"
    return "numba"


set_backend(_default_backend())

"""Pure-numpy implementations of the hot kernels.

These are the reference versions; the compiled module ``eqnet._kernels``
exposes the same functions with the same signatures.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def fake_quant_forward(x, step, zero, qmin, qmax):
    """Fused fake-quantize over rows of a 2-D array.

    ``x`` has shape (C, M); ``step`` and ``zero`` have shape (C,) and
    ``zero`` must already hold integral values. Returns ``(out, dstep, inside)``
    where ``dstep`` is the straight-through derivative of ``out`` with
    respect to the step and ``inside`` marks elements that were not clipped.
    """
    s = step[:, None]
    z = zero[:, None]
    v = x / s
    r = np.rint(v) + z
    inside = (r >= qmin) & (r <= qmax)
    c = np.minimum(np.maximum(r, qmin), qmax)
    k = c - z
    out = k * s
    dstep = np.where(inside, k - v, k)
    return out, dstep, inside


def _windows(xp, kh, kw, stride, ho, wo):
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def _out_size(h, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _windows(np.ascontiguousarray(xp), kh, kw, stride, ho, wo)
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # (n, ho, wo, o)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gy, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _windows(np.ascontiguousarray(xp), kh, kw, stride, ho, wo)
    gw = np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))  # (o, c, kh, kw)
    gxp = np.zeros(xp.shape)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(w[:, :, i, j], gy, axes=([0], [1]))  # (c, n, ho, wo)
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(1, 0, 2, 3)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
    return np.ascontiguousarray(gx), np.ascontiguousarray(gw)

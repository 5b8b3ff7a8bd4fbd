"""Pure-numpy versions of the hot loops.

Used when the compiled ``_ckernels`` extension is not importable, or when
``KFGDET_PURE_PYTHON=1`` is set. Signatures and results match the compiled
module element for element.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND = "python"


def _out_size(size, k, stride, dilation):
    return (size - dilation * (k - 1) - 1) // stride + 1


def im2col(xp, kh, kw, sh, sw, dh, dw):
    """(N, C, Hp, Wp) padded input -> (N, C*kh*kw, Ho*Wo) patch matrix."""
    n, c, hp, wp = xp.shape
    ho = _out_size(hp, kh, sh, dh)
    wo = _out_size(wp, kw, sw, dw)
    xp = np.ascontiguousarray(xp)
    s0, s1, s2, s3 = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s0, s1, s2 * dh, s3 * dw, s2 * sh, s3 * sw),
        writeable=False,
    )
    return win.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, c, hp, wp, kh, kw, sh, sw, dh, dw):
    """Adjoint of :func:`im2col`: scatter-add patches back into the padded plane."""
    n = cols.shape[0]
    ho = _out_size(hp, kh, sh, dh)
    wo = _out_size(wp, kw, sw, dw)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        hi = i * dh
        for j in range(kw):
            wj = j * dw
            out[:, :, hi:hi + sh * (ho - 1) + 1:sh, wj:wj + sw * (wo - 1) + 1:sw] += cols[:, :, i, j]
    return out


def maxpool(xp, k, s):
    """Max over k x k windows. Returns values and the flat (row-major) index
    of the winning cell inside each padded plane; ties go to the first cell."""
    n, c, hp, wp = xp.shape
    ho = (hp - k) // s + 1
    wo = (wp - k) // s + 1
    xp = np.ascontiguousarray(xp)
    s0, s1, s2, s3 = xp.strides
    win = as_strided(xp, shape=(n, c, ho, wo, k, k),
                     strides=(s0, s1, s2 * s, s3 * s, s2, s3), writeable=False)
    win = win.reshape(n, c, ho, wo, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[:, None] * s + arg // k
    cols = np.arange(wo)[None, :] * s + arg % k
    return out, (rows * wp + cols).astype(np.int64)


def maxpool_backward(gout, idx, hp, wp):
    n, c = gout.shape[:2]
    plane = hp * wp
    offs = (np.arange(n * c, dtype=np.int64) * plane).reshape(n, c, 1, 1)
    flat = np.bincount((idx + offs).ravel(), weights=gout.ravel(), minlength=n * c * plane)
    return flat.astype(gout.dtype, copy=False).reshape(n, c, hp, wp)

"""Backend selection for the hot loops.

The compiled extension is preferred; the numpy fallback is used when it is
missing or when ``KFGDET_PURE_PYTHON`` is set to a non-empty value other
than ``0``.
"""
import os

from . import _pykernels

_force_python = os.environ.get("KFGDET_PURE_PYTHON", "") not in ("", "0")

if _force_python:
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND


def use_backend(name):
    """Switch backends at runtime ("cython" or "python"); returns the previous name."""
    global _impl, BACKEND
    prev = BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        from . import _ckernels
        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = _impl.BACKEND
    return prev


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def im2col(xp, kh, kw, sh, sw, dh, dw):
    return _impl.im2col(xp, kh, kw, sh, sw, dh, dw)


def col2im(cols, c, hp, wp, kh, kw, sh, sw, dh, dw):
    return _impl.col2im(cols, c, hp, wp, kh, kw, sh, sw, dh, dw)


def maxpool(xp, k, s):
    return _impl.maxpool(xp, k, s)


def maxpool_backward(gout, idx, hp, wp):
    return _impl.maxpool_backward(gout, idx, hp, wp)

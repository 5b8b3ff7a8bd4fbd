"""Differentiable primitives.

Shapes must agree exactly; the only implicit broadcasting is the
per-channel affine inside the normalization ops and Python scalars in the
``*_scalar`` helpers.
"""
import numpy as np

from ..errors import ShapeError
from . import kernels
from .tensor import Function, Tensor, as_tensor


def _same_shape(op, a, b):
    if a.shape != b.shape:
        for i, (x, y) in enumerate(zip(a.shape, b.shape)):
            if x != y:
                raise ShapeError(f"{op}: shape {a.shape} vs {b.shape} differ at dim {i}", dim=i)
        raise ShapeError(f"{op}: rank mismatch {a.shape} vs {b.shape}", dim="rank")


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


# ---------------------------------------------------------------- elementwise
class Add(Function):
    name = "add"

    @staticmethod
    def forward(ctx, a, b):
        return a + b

    @staticmethod
    def backward(ctx, g):
        return g, g


class Sub(Function):
    name = "sub"

    @staticmethod
    def forward(ctx, a, b):
        return a - b

    @staticmethod
    def backward(ctx, g):
        return g, -g


class Mul(Function):
    name = "mul"

    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a, b)
        return a * b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        return g * b, g * a


class Div(Function):
    name = "div"

    @staticmethod
    def forward(ctx, a, b):
        out = a / b
        ctx.save(b, out)
        return out

    @staticmethod
    def backward(ctx, g):
        b, out = ctx.saved
        gb = g / b
        return gb, -gb * out


class Minimum(Function):
    name = "minimum"

    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a <= b)
        return np.minimum(a, b)

    @staticmethod
    def backward(ctx, g):
        (take_a,) = ctx.saved
        return np.where(take_a, g, 0).astype(g.dtype), np.where(take_a, 0, g).astype(g.dtype)


class Maximum(Function):
    name = "maximum"

    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a >= b)
        return np.maximum(a, b)

    @staticmethod
    def backward(ctx, g):
        (take_a,) = ctx.saved
        return np.where(take_a, g, 0).astype(g.dtype), np.where(take_a, 0, g).astype(g.dtype)


class Neg(Function):
    name = "neg"

    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return -g


class AddScalar(Function):
    name = "add_scalar"

    @staticmethod
    def forward(ctx, a, c=0.0):
        return a + a.dtype.type(c)

    @staticmethod
    def backward(ctx, g):
        return g


class MulScalar(Function):
    name = "mul_scalar"

    @staticmethod
    def forward(ctx, a, c=1.0):
        ctx.c = a.dtype.type(c)
        return a * ctx.c

    @staticmethod
    def backward(ctx, g):
        return g * ctx.c


class PowScalar(Function):
    name = "pow_scalar"

    @staticmethod
    def forward(ctx, a, p=2.0):
        ctx.save(a)
        ctx.p = p
        return a ** a.dtype.type(p)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.saved
        p = a.dtype.type(ctx.p)
        return g * p * a ** (p - 1)


class Clamp(Function):
    name = "clamp"

    @staticmethod
    def forward(ctx, a, lo=None, hi=None):
        out = np.clip(a, lo, hi)
        ctx.save(out == a)
        return out

    @staticmethod
    def backward(ctx, g):
        (inside,) = ctx.saved
        return np.where(inside, g, 0).astype(g.dtype)


class Exp(Function):
    name = "exp"

    @staticmethod
    def forward(ctx, a):
        out = np.exp(a)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, g):
        return g * ctx.saved[0]


class Log(Function):
    name = "log"

    @staticmethod
    def forward(ctx, a):
        ctx.save(a)
        return np.log(a)

    @staticmethod
    def backward(ctx, g):
        return g / ctx.saved[0]


class Sqrt(Function):
    name = "sqrt"

    @staticmethod
    def forward(ctx, a):
        out = np.sqrt(a)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, g):
        return g / (2 * ctx.saved[0])


class Atan(Function):
    name = "atan"

    @staticmethod
    def forward(ctx, a):
        ctx.save(a)
        return np.arctan(a)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.saved
        return g / (1 + a * a)


def _sigmoid(a):
    # split by sign to avoid overflow in exp
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


class Sigmoid(Function):
    name = "sigmoid"

    @staticmethod
    def forward(ctx, a):
        out = _sigmoid(a)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, g):
        (s,) = ctx.saved
        return g * s * (1 - s)


class SiLU(Function):
    name = "silu"

    @staticmethod
    def forward(ctx, a):
        s = _sigmoid(a)
        ctx.save(a, s)
        return a * s

    @staticmethod
    def backward(ctx, g):
        a, s = ctx.saved
        return g * (s * (1 + a * (1 - s)))


class Softmax(Function):
    name = "softmax"

    @staticmethod
    def forward(ctx, a, axis=-1):
        e = np.exp(a - a.max(axis=axis, keepdims=True))
        out = e / e.sum(axis=axis, keepdims=True)
        ctx.save(out)
        ctx.axis = axis
        return out

    @staticmethod
    def backward(ctx, g):
        (s,) = ctx.saved
        return s * (g - (g * s).sum(axis=ctx.axis, keepdims=True))


class LogSoftmax(Function):
    name = "log_softmax"

    @staticmethod
    def forward(ctx, a, axis=-1):
        z = a - a.max(axis=axis, keepdims=True)
        out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
        ctx.save(out)
        ctx.axis = axis
        return out

    @staticmethod
    def backward(ctx, g):
        (out,) = ctx.saved
        return g - np.exp(out) * g.sum(axis=ctx.axis, keepdims=True)


class BCEWithLogits(Function):
    """Elementwise binary cross-entropy on logits; targets are constants."""

    name = "bce_with_logits"

    @staticmethod
    def forward(ctx, x, t):
        ctx.save(x, t)
        return np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))

    @staticmethod
    def backward(ctx, g):
        x, t = ctx.saved
        return g * (_sigmoid(x) - t), None


# ---------------------------------------------------------------- reductions / shape
class Sum(Function):
    name = "sum"

    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        ctx.shape = a.shape
        ctx.axis = axis
        ctx.keepdims = keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(ctx, g):
        if ctx.axis is not None and not ctx.keepdims:
            g = np.expand_dims(g, ctx.axis)
        return np.broadcast_to(g, ctx.shape).copy()


class Reshape(Function):
    name = "reshape"

    @staticmethod
    def forward(ctx, a, shape=None):
        ctx.shape = a.shape
        return a.reshape(shape)

    @staticmethod
    def backward(ctx, g):
        return g.reshape(ctx.shape)


class Transpose(Function):
    name = "transpose"

    @staticmethod
    def forward(ctx, a, axes=None):
        ctx.axes = axes
        return np.ascontiguousarray(a.transpose(axes))

    @staticmethod
    def backward(ctx, g):
        return g.transpose(np.argsort(ctx.axes))


class GetItem(Function):
    name = "getitem"

    @staticmethod
    def forward(ctx, a, index=None):
        ctx.shape = a.shape
        ctx.index = index
        return np.array(a[index], copy=True)

    @staticmethod
    def backward(ctx, g):
        out = np.zeros(ctx.shape, dtype=g.dtype)
        np.add.at(out, ctx.index, g)
        return out


class Concat(Function):
    name = "concat"

    @staticmethod
    def forward(ctx, *arrays, axis=1):
        ctx.axis = axis
        ctx.bounds = np.cumsum([0] + [a.shape[axis] for a in arrays])
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx, g):
        b = ctx.bounds
        sl = [slice(None)] * g.ndim
        out = []
        for i in range(len(b) - 1):
            sl[ctx.axis] = slice(b[i], b[i + 1])
            out.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(out)


# ---------------------------------------------------------------- layers
class Linear(Function):
    name = "linear"

    @staticmethod
    def forward(ctx, x, w, b=None):
        ctx.save(x, w)
        ctx.has_bias = b is not None
        out = x @ w.T
        if b is not None:
            out = out + b
        return out

    @staticmethod
    def backward(ctx, g):
        x, w = ctx.saved
        gx = g @ w
        gw = g.T @ x
        if ctx.has_bias:
            return gx, gw, g.sum(axis=0)
        return gx, gw


class Conv2d(Function):
    name = "conv2d"

    @staticmethod
    def forward(ctx, x, w, b=None, stride=(1, 1), pad=(0, 0), groups=1, dilation=(1, 1)):
        n, cin, h, wd = x.shape
        cout, cg, kh, kw = w.shape
        sh, sw = stride
        ph, pw = pad
        dh, dw = dilation
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
        hp, wp = xp.shape[2:]
        ho = (hp - dh * (kh - 1) - 1) // sh + 1
        wo = (wp - dw * (kw - 1) - 1) // sw + 1
        cols = kernels.im2col(xp, kh, kw, sh, sw, dh, dw)  # (n, cin*kh*kw, L)
        kk = kh * kw
        cog = cout // groups
        if groups == 1:
            out = np.matmul(w.reshape(cout, cg * kk), cols)
        elif cg == 1 and cog == 1:
            out = np.einsum("ck,nckl->ncl", w.reshape(cout, kk), cols.reshape(n, cout, kk, -1))
        else:
            cols_g = cols.reshape(n, groups, cg * kk, -1)
            out = np.matmul(w.reshape(groups, cog, cg * kk), cols_g).reshape(n, cout, -1)
        out = out.reshape(n, cout, ho, wo)
        if b is not None:
            out += b.reshape(1, cout, 1, 1)
        ctx.save(cols, w)
        ctx.geom = (n, cin, hp, wp, kh, kw, sh, sw, ph, pw, dh, dw, groups, h, wd)
        ctx.has_bias = b is not None
        return out

    @staticmethod
    def backward(ctx, g):
        cols, w = ctx.saved
        n, cin, hp, wp, kh, kw, sh, sw, ph, pw, dh, dw, groups, h, wd = ctx.geom
        cout, cg = w.shape[:2]
        kk = kh * kw
        cog = cout // groups
        gm = g.reshape(n, cout, -1)
        if groups == 1:
            wm = w.reshape(cout, cg * kk)
            gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
            gcols = np.matmul(wm.T, gm)
        elif cg == 1 and cog == 1:
            c4 = cols.reshape(n, cout, kk, -1)
            gw = np.einsum("ncl,nckl->ck", gm, c4).reshape(w.shape)
            gcols = (w.reshape(1, cout, kk, 1) * gm[:, :, None, :]).reshape(n, cout * kk, -1)
        else:
            cols_g = cols.reshape(n, groups, cg * kk, -1)
            gg = gm.reshape(n, groups, cog, -1)
            gw = np.matmul(gg, cols_g.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
            wg = w.reshape(groups, cog, cg * kk)
            gcols = np.matmul(wg.transpose(0, 2, 1), gg).reshape(n, cin * kk, -1)
        gxp = kernels.col2im(gcols, cin, hp, wp, kh, kw, sh, sw, dh, dw)
        gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
        gx = np.ascontiguousarray(gx)
        if ctx.has_bias:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw


class MaxPool2d(Function):
    name = "max_pool2d"

    @staticmethod
    def forward(ctx, x, k=2, stride=2, pad=0):
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x
        out, idx = kernels.maxpool(xp, k, stride)
        ctx.save(idx)
        ctx.geom = (xp.shape[2], xp.shape[3], pad, x.shape[2], x.shape[3])
        return out

    @staticmethod
    def backward(ctx, g):
        (idx,) = ctx.saved
        hp, wp, pad, h, w = ctx.geom
        gxp = kernels.maxpool_backward(g, idx, hp, wp)
        return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + w])


class AvgPool2d(Function):
    """Average pool; zero padding counts toward the window (count_include_pad)."""

    name = "avg_pool2d"

    @staticmethod
    def forward(ctx, x, k=2, stride=2, pad=0):
        n, c = x.shape[:2]
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        hp, wp = xp.shape[2:]
        cols = kernels.im2col(xp.reshape(n * c, 1, hp, wp), k, k, stride, stride, 1, 1)
        ho = (hp - k) // stride + 1
        wo = (wp - k) // stride + 1
        ctx.geom = (n, c, hp, wp, k, stride, pad, x.shape[2], x.shape[3], ho, wo)
        return cols.mean(axis=1).reshape(n, c, ho, wo)

    @staticmethod
    def backward(ctx, g):
        n, c, hp, wp, k, s, pad, h, w, ho, wo = ctx.geom
        gcols = np.broadcast_to(g.reshape(n * c, 1, ho * wo) / (k * k), (n * c, k * k, ho * wo))
        gxp = kernels.col2im(np.ascontiguousarray(gcols), 1, hp, wp, k, k, s, s, 1, 1).reshape(n, c, hp, wp)
        return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + w])


class UpsampleNearest(Function):
    name = "upsample_nearest"

    @staticmethod
    def forward(ctx, x, scale=2):
        ctx.scale = scale
        if scale == 1:
            return x.copy()
        return x.repeat(scale, axis=2).repeat(scale, axis=3)

    @staticmethod
    def backward(ctx, g):
        s = ctx.scale
        if s == 1:
            return g
        n, c, h, w = g.shape
        return g.reshape(n, c, h // s, s, w // s, s).sum(axis=(3, 5))


class BatchNorm(Function):
    name = "batch_norm"

    @staticmethod
    def forward(ctx, x, gamma, beta, mean=None, var=None, eps=1e-3, batch_stats=False):
        c = x.shape[1]
        shp = (1, c, 1, 1)
        inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
        xhat = (x - mean.reshape(shp)) * inv.reshape(shp)
        ctx.save(xhat, gamma, inv)
        ctx.batch_stats = batch_stats
        return xhat * gamma.reshape(shp) + beta.reshape(shp)

    @staticmethod
    def backward(ctx, g):
        xhat, gamma, inv = ctx.saved
        shp = (1, -1, 1, 1)
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * gamma.reshape(shp)
        if ctx.batch_stats:
            m = xhat.size // xhat.shape[1]
            gx = (inv.reshape(shp) / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(shp)
        return gx, ggamma, gbeta


class BatchNormTrain(BatchNorm):
    """Batch-statistics variant; gradient flows through the mean and variance."""

    name = "batch_norm"

    @staticmethod
    def forward(ctx, x, gamma, beta, eps=1e-3):
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        return BatchNorm.forward(ctx, x, gamma, beta, mean=mean, var=var, eps=eps, batch_stats=True)


class GroupNorm(Function):
    name = "group_norm"

    @staticmethod
    def forward(ctx, x, gamma, beta, groups=1, eps=1e-5):
        n, c, h, w = x.shape
        xg = x.reshape(n, groups, -1)
        mean = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
        xhat = ((xg - mean) * inv).reshape(n, c, h, w)
        ctx.save(xhat, gamma, inv)
        ctx.groups = groups
        return xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)

    @staticmethod
    def backward(ctx, g):
        xhat, gamma, inv = ctx.saved
        n, c, h, w = g.shape
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = (g * gamma.reshape(1, c, 1, 1)).reshape(n, ctx.groups, -1)
        xh = xhat.reshape(n, ctx.groups, -1)
        m = xh.shape[2]
        gx = (inv / m) * (m * gxhat - gxhat.sum(axis=2, keepdims=True)
                          - xh * (gxhat * xh).sum(axis=2, keepdims=True))
        return gx.reshape(n, c, h, w), ggamma, gbeta


class GlobalAvgPool(Function):
    name = "global_avg_pool"

    @staticmethod
    def forward(ctx, x):
        ctx.shape = x.shape
        return x.mean(axis=(2, 3))

    @staticmethod
    def backward(ctx, g):
        n, c, h, w = ctx.shape
        return np.broadcast_to((g / (h * w))[:, :, None, None], ctx.shape).copy()


class ScaleBy(Function):
    """Multiply a whole tensor by a learnable one-element tensor."""

    name = "scale_by"

    @staticmethod
    def forward(ctx, x, s):
        ctx.save(x, s)
        return x * s.reshape(())

    @staticmethod
    def backward(ctx, g):
        x, s = ctx.saved
        return g * s.reshape(()), np.asarray((g * x).sum(), dtype=g.dtype).reshape(s.shape)


class ChannelBias(Function):
    name = "channel_bias"

    @staticmethod
    def forward(ctx, x, b):
        return x + b.reshape(1, -1, 1, 1)

    @staticmethod
    def backward(ctx, g):
        return g, g.sum(axis=(0, 2, 3))


class MixResponses(Function):
    """Per-sample mixture of stacked conv responses.

    ``z`` is (N, K*co, H, W) holding the response of each of K cells;
    ``alpha`` is (N, S, K). Output slot ``i`` is sum_k alpha[n, i, k] z[n, k].
    """

    name = "mix_responses"

    @staticmethod
    def forward(ctx, z, alpha):
        n, kco, h, w = z.shape
        _, s, k = alpha.shape
        co = kco // k
        zr = z.reshape(n, k, co * h * w)
        ctx.save(zr, alpha)
        ctx.shape = z.shape
        return np.matmul(alpha, zr).reshape(n, s * co, h, w)

    @staticmethod
    def backward(ctx, g):
        zr, alpha = ctx.saved
        n, s, k = alpha.shape
        gr = g.reshape(n, s, -1)
        galpha = np.matmul(gr, zr.transpose(0, 2, 1))
        gz = np.matmul(alpha.transpose(0, 2, 1), gr)
        return gz.reshape(ctx.shape), galpha


class MixKernels(Function):
    """Assemble per-sample kernels: slot i of sample n is sum_k alpha[n,i,k] cells[k].

    ``cells`` is (K, co, ci, kh, kw); output is (N, S*co, ci, kh, kw).
    """

    name = "mix_kernels"

    @staticmethod
    def forward(ctx, alpha, cells):
        n, s, k = alpha.shape
        shape = cells.shape
        cf = cells.reshape(k, -1)
        ctx.save(alpha, cf)
        ctx.cell_shape = shape
        out = np.matmul(alpha, cf)  # (n, s, co*ci*kh*kw)
        return out.reshape((n, s * shape[1]) + shape[2:])

    @staticmethod
    def backward(ctx, g):
        alpha, cf = ctx.saved
        n, s, k = alpha.shape
        gr = g.reshape(n, s, -1)
        galpha = np.matmul(gr, cf.T)
        gcells = np.einsum("nsk,nsd->kd", alpha, gr)
        return galpha, gcells.reshape(ctx.cell_shape)


# ================================================================ public API
def add(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return AddScalar.apply(a, c=float(b))
    if not isinstance(a, Tensor) and np.isscalar(a):
        return AddScalar.apply(b, c=float(a))
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return Add.apply(a, b)


def sub(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return AddScalar.apply(a, c=-float(b))
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return Sub.apply(a, b)


def mul(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return MulScalar.apply(a, c=float(b))
    if not isinstance(a, Tensor) and np.isscalar(a):
        return MulScalar.apply(b, c=float(a))
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return Mul.apply(a, b)


def div(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return MulScalar.apply(a, c=1.0 / float(b))
    if not isinstance(a, Tensor) and np.isscalar(a):
        return MulScalar.apply(PowScalar.apply(b, p=-1.0), c=float(a))
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("div", a, b)
    return Div.apply(a, b)


def neg(a):
    return Neg.apply(a)


def pow_scalar(a, p):
    return PowScalar.apply(a, p=float(p))


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("minimum", a, b)
    return Minimum.apply(a, b)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("maximum", a, b)
    return Maximum.apply(a, b)


def clamp(a, lo=None, hi=None):
    return Clamp.apply(a, lo=lo, hi=hi)


def exp(a):
    return Exp.apply(a)


def log(a):
    return Log.apply(a)


def sqrt(a):
    return Sqrt.apply(a)


def atan(a):
    return Atan.apply(a)


def sigmoid(x):
    return Sigmoid.apply(x)


def silu(x):
    return SiLU.apply(x)


def softmax(x, axis=-1):
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for rank {x.ndim}", dim=axis)
    return Softmax.apply(x, axis=axis)


def log_softmax(x, axis=-1):
    return LogSoftmax.apply(x, axis=axis)


def activation(x, kind, axis=-1):
    if kind == "silu":
        return silu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x, axis=axis)
    raise ValueError(f"unknown activation {kind!r}")


def bce_with_logits(logits, targets):
    logits, targets = as_tensor(logits), as_tensor(targets, dtype=as_tensor(logits).dtype)
    _same_shape("bce_with_logits", logits, targets)
    return BCEWithLogits.apply(logits, targets)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return MulScalar.apply(Sum.apply(a, axis=axis, keepdims=keepdims), c=1.0 / count)


def reshape(a, shape):
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes):
    return Transpose.apply(a, axes=tuple(axes))


def getitem(a, index):
    return GetItem.apply(a, index=index)


def detach(a):
    return as_tensor(a).detach()


def concat(xs, axis=1):
    xs = [as_tensor(x) for x in xs]
    if len(xs) == 1:
        return xs[0]
    return Concat.apply(*xs, axis=axis)


def concat_channels(xs):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor", dim="count")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != 4:
            raise ShapeError(f"concat_channels expects 4-d tensors, got {x.shape}", dim="rank")
        for d, name in ((0, "N"), (2, "H"), (3, "W")):
            if x.shape[d] != ref[d]:
                raise ShapeError(f"concat_channels: {name} mismatch {ref} vs {x.shape}", dim=name)
    return concat(xs, axis=1)


def split_channels(x, sizes):
    out, start = [], 0
    for s in sizes:
        out.append(getitem(x, (slice(None), slice(start, start + s))))
        start += s
    return out


def linear(x, w, b=None):
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"linear expects 2-d operands, got {x.shape} and {w.shape}", dim="rank")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[1]} != weight width {w.shape[1]}", dim="Din")
    if b is not None and as_tensor(b).shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {as_tensor(b).shape} != ({w.shape[0]},)", dim="Dout")
    args = (x, w) if b is None else (x, w, b)
    return Linear.apply(*args)


def conv_output_size(size, k, stride, pad, dilation=1):
    return (size + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, w, b=None, stride=1, pad=0, groups=1, dilation=1):
    """2-d cross-correlation over an (N, C, H, W) input."""
    x, w = as_tensor(x), as_tensor(w)
    stride, pad, dilation = _pair(stride), _pair(pad), _pair(dilation)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-d, got {x.shape}", dim="rank")
    if w.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d, got {w.shape}", dim="rank")
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    if groups < 1 or cin % groups:
        raise ShapeError(f"conv2d: Cin={cin} not divisible by groups={groups}", dim="Cin")
    if cout % groups:
        raise ShapeError(f"conv2d: Cout={cout} not divisible by groups={groups}", dim="Cout")
    if cg != cin // groups:
        raise ShapeError(f"conv2d: weight expects Cin/g={cg}, input gives {cin // groups}", dim="Cin")
    if min(stride) < 1 or min(dilation) < 1 or min(pad) < 0:
        raise ShapeError("conv2d: stride/dilation must be >= 1 and pad >= 0", dim="geometry")
    for size, k, s, p, d, name in ((h, kh, stride[0], pad[0], dilation[0], "H"),
                                   (wd, kw, stride[1], pad[1], dilation[1], "W")):
        if size + 2 * p < d * (k - 1) + 1:
            raise ShapeError(f"conv2d: kernel extent exceeds padded {name}", dim=name)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(f"conv2d: bias {b.shape} != ({cout},)", dim="Cout")
        return Conv2d.apply(x, w, b, stride=stride, pad=pad, groups=groups, dilation=dilation)
    return Conv2d.apply(x, w, stride=stride, pad=pad, groups=groups, dilation=dilation)


def pool2d(x, kind, k, stride=None, pad=0):
    x = as_tensor(x)
    stride = k if stride is None else stride
    if k < 1 or stride < 1 or pad < 0:
        raise ShapeError(f"pool2d: invalid window k={k} stride={stride} pad={pad}", dim="geometry")
    if pad > k // 2:
        # a window could then sit entirely inside the padding
        raise ShapeError(f"pool2d: pad={pad} exceeds k//2 for k={k}", dim="pad")
    if x.ndim != 4:
        raise ShapeError(f"pool2d input must be 4-d, got {x.shape}", dim="rank")
    if x.shape[2] + 2 * pad < k or x.shape[3] + 2 * pad < k:
        raise ShapeError("pool2d: window larger than padded input", dim="H")
    if kind == "max":
        return MaxPool2d.apply(x, k=k, stride=stride, pad=pad)
    if kind == "avg":
        return AvgPool2d.apply(x, k=k, stride=stride, pad=pad)
    raise ValueError(f"unknown pool kind {kind!r}")


def max_pool2d(x, k, stride=None, pad=0):
    return pool2d(x, "max", k, stride, pad)


def avg_pool2d(x, k, stride=None, pad=0):
    return pool2d(x, "avg", k, stride, pad)


def upsample_nearest(x, scale=2):
    if int(scale) != scale or scale < 1:
        raise ShapeError(f"upsample scale must be a positive integer, got {scale}", dim="scale")
    return UpsampleNearest.apply(x, scale=int(scale))


def _check_affine(op, x, *params):
    c = x.shape[1]
    for p in params:
        if p is not None and as_tensor(p).shape != (c,):
            raise ShapeError(f"{op}: per-channel parameter {as_tensor(p).shape} != ({c},)", dim="C")


def batch_norm(x, gamma, beta, running_mean, running_var, training=False, momentum=0.03, eps=1e-3):
    """Batch normalization over (N, H, W) per channel.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` (numpy arrays, updated in place) track them with the
    given momentum; the running variance uses the unbiased estimate.
    """
    x = as_tensor(x)
    _check_affine("batch_norm", x, gamma, beta, running_mean, running_var)
    if not training:
        rm = as_tensor(np.asarray(running_mean, dtype=x.dtype))
        rv = as_tensor(np.asarray(running_var, dtype=x.dtype))
        return BatchNorm.apply(x, gamma, beta, rm, rv, eps=eps)
    out = BatchNormTrain.apply(x, gamma, beta, eps=eps)
    m = x.size // x.shape[1]
    mean_b = x.data.mean(axis=(0, 2, 3))
    var_b = x.data.var(axis=(0, 2, 3)) * (m / max(m - 1, 1))
    running_mean *= 1 - momentum
    running_mean += momentum * mean_b
    running_var *= 1 - momentum
    running_var += momentum * var_b
    return out


def group_norm(x, groups, gamma, beta, eps=1e-5):
    x = as_tensor(x)
    if x.shape[1] % groups:
        raise ShapeError(f"group_norm: C={x.shape[1]} not divisible by groups={groups}", dim="C")
    _check_affine("group_norm", x, gamma, beta)
    return GroupNorm.apply(x, gamma, beta, groups=groups, eps=eps)


def global_avg_pool(x):
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f"global_avg_pool expects (N,C,H,W) with H,W >= 1, got {x.shape}", dim="rank")
    return GlobalAvgPool.apply(x)


def scale_by(x, s):
    s = as_tensor(s)
    if s.size != 1:
        raise ShapeError(f"scale_by expects a one-element scale, got {s.shape}", dim="scale")
    return ScaleBy.apply(x, s)


def channel_bias(x, b):
    x = as_tensor(x)
    _check_affine("channel_bias", x, b)
    return ChannelBias.apply(x, b)


def mix_responses(z, alpha):
    z, alpha = as_tensor(z), as_tensor(alpha)
    if alpha.ndim != 3 or z.ndim != 4 or z.shape[0] != alpha.shape[0] or z.shape[1] % alpha.shape[2]:
        raise ShapeError(f"mix_responses: z {z.shape} incompatible with alpha {alpha.shape}", dim="K")
    return MixResponses.apply(z, alpha)


def mix_kernels(alpha, cells):
    alpha, cells = as_tensor(alpha), as_tensor(cells)
    if alpha.ndim != 3 or cells.ndim != 5 or alpha.shape[2] != cells.shape[0]:
        raise ShapeError(f"mix_kernels: alpha {alpha.shape} incompatible with cells {cells.shape}", dim="K")
    return MixKernels.apply(alpha, cells)

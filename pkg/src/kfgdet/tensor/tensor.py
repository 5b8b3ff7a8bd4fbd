"""Tensor type and the reverse-mode engine.

A :class:`Tensor` wraps a numpy array. Every differentiable op is a
:class:`Function` subclass; calling ``Fn.apply`` runs its forward on raw
arrays and, when any input requires grad, records a :class:`Node` so that
:meth:`Tensor.backward` can replay the graph in reverse topological order.
"""
import contextlib
import threading

import numpy as np

from ..errors import GraphError, NonFiniteError

_state = threading.local()

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _get(name, default):
    return getattr(_state, name, default)


def is_grad_enabled():
    return _get("grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def get_default_dtype():
    return _get("default_dtype", np.dtype(np.float32))


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for new tensors and parameters."""
    dtype = np.dtype(dtype)
    if dtype not in _FLOAT_DTYPES:
        raise TypeError(f"unsupported dtype {dtype}")
    prev = get_default_dtype()
    _state.default_dtype = dtype
    try:
        yield
    finally:
        _state.default_dtype = prev


_check_finite = True


def set_finite_checks(enabled):
    """Toggle the post-op NaN/Inf scan. Returns the previous setting."""
    global _check_finite
    prev = _check_finite
    _check_finite = bool(enabled)
    return prev


class Node:
    """One recorded op: the function, its inputs, and whatever forward saved."""

    __slots__ = ("fn", "inputs", "saved", "__dict__")

    def __init__(self, fn, inputs):
        self.fn = fn
        self.inputs = inputs
        self.saved = ()

    @property
    def op(self):
        return self.fn.name

    def save(self, *arrays):
        self.saved = arrays


class Function:
    """Base class for differentiable ops.

    ``forward(ctx, *arrays, **kw)`` returns the output array;
    ``backward(ctx, grad)`` returns one gradient (or ``None``) per input.
    """

    name = "function"

    @staticmethod
    def forward(ctx, *arrays, **kwargs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        inputs = tuple(as_tensor(t) for t in inputs)
        dtypes = {t.dtype for t in inputs}
        if len(dtypes) > 1:
            raise TypeError(f"{cls.name}: mixed dtypes {sorted(str(d) for d in dtypes)}")
        ctx = Node(cls, inputs)
        out = cls.forward(ctx, *(t.data for t in inputs), **kwargs)
        if _check_finite and not np.isfinite(out).all():
            raise NonFiniteError(cls.name)
        track = is_grad_enabled() and any(t.requires_grad for t in inputs)
        return Tensor._make(out, ctx if track else None)


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        dtype = np.dtype(dtype) if dtype is not None else None
        arr = np.asarray(data)
        if dtype is None:
            # float arrays keep their precision; python scalars/lists and ints take the default
            keep = isinstance(data, (np.ndarray, np.generic)) and arr.dtype in _FLOAT_DTYPES
            dtype = arr.dtype if keep else get_default_dtype()
        if dtype not in _FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {dtype}")
        self.data = np.array(arr, dtype=dtype, copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @classmethod
    def _make(cls, data, node):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = node is not None
        t.grad = None
        t._node = node
        return t

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor._make(self.data, None)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- autograd ----------------------------------------------------------
    def backward(self, grad=None):
        """Populate ``.grad`` on every leaf that requires it.

        Gradients accumulate into existing ``.grad`` buffers, so a tensor
        consumed twice receives the sum of both contributions.
        """
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise GraphError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("backward() on a tensor that does not require grad")

        order = _topo_order(self)
        grads = {id(self): grad}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            node = t._node
            if node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            in_grads = node.fn.backward(node, g)
            if not isinstance(in_grads, tuple):
                in_grads = (in_grads,)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    raise GraphError(
                        f"op '{node.op}' produced gradient {ig.shape} for input {inp.shape}")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p):
        from . import ops
        return ops.pow_scalar(self, p)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A leaf tensor that always requires grad."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)

    def __repr__(self):
        return f"Parameter(shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in t._node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order

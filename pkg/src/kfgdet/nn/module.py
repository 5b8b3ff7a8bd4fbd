"""Minimal layer container with named parameters and buffers."""
import numpy as np

from ..tensor import Parameter, Tensor, conv2d, get_default_dtype

_rng = np.random.default_rng(0)


def manual_seed(seed):
    """Reseed the generator used by parameter initializers."""
    global _rng
    _rng = np.random.default_rng(seed)


def init_rng():
    return _rng


def uniform_param(shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Parameter(_rng.uniform(-bound, bound, size=shape), dtype=get_default_dtype())


def const_param(shape, value):
    return Parameter(np.full(shape, value), dtype=get_default_dtype())


class ModuleList(list):
    """Ordered children; names are their indices."""


class Module:
    """Parameters, buffers and submodules are discovered from attributes in
    assignment order. Buffers are numpy arrays listed in ``_buffer_names``."""

    _buffer_names = ()

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, ModuleList):
                for i, m in enumerate(val):
                    yield f"{key}.{i}", m

    def _own_params(self):
        for key, val in vars(self).items():
            if isinstance(val, Parameter) and not key.startswith("_"):
                yield key, val

    def named_modules(self, prefix=""):
        yield prefix, self
        for name, child in self._children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix="", remove_duplicate=True):
        """(name, Parameter) pairs, sorted by name.

        With ``remove_duplicate`` a storage reachable under several names is
        reported once, under the lexicographically smallest name.
        """
        pairs = []
        for mod_name, mod in self.named_modules(prefix):
            for key, p in mod._own_params():
                pairs.append((f"{mod_name}.{key}" if mod_name else key, p))
        pairs.sort(key=lambda kv: kv[0])
        if not remove_duplicate:
            return pairs
        seen, out = set(), []
        for name, p in pairs:
            if id(p) not in seen:
                seen.add(id(p))
                out.append((name, p))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        pairs, seen = [], set()
        for mod_name, mod in self.named_modules(prefix):
            for key in mod._buffer_names:
                arr = getattr(mod, key)
                if id(arr) in seen:
                    continue
                seen.add(id(arr))
                pairs.append((f"{mod_name}.{key}" if mod_name else key, arr))
        pairs.sort(key=lambda kv: kv[0])
        return pairs

    def aliases(self):
        """Map every non-canonical parameter name to its canonical name."""
        canon = {id(p): n for n, p in self.named_parameters()}
        return {n: canon[id(p)] for n, p in self.named_parameters(remove_duplicate=False)
                if canon[id(p)] != n}

    def train(self, mode=True):
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to(self, dtype):
        """Cast every parameter and buffer in place (storage identity kept)."""
        dtype = np.dtype(dtype)
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for _, m in self.named_modules():
            for key in m._buffer_names:
                setattr(m, key, getattr(m, key).astype(dtype))
        return self


def param_count(module):
    """Learnable scalars actually allocated; shared storage counted once."""
    return int(sum(p.size for p in module.parameters()))


class Conv2dLayer(Module):
    """Plain convolution with bias and no normalization (head projections)."""

    def __init__(self, cin, cout, k=1, stride=1, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = k // 2
        self.weight = uniform_param((cout, cin, k, k), cin * k * k)
        self.bias = uniform_param((cout,), cin * k * k) if bias else None

    @staticmethod
    def formula(cin, cout, k=1, bias=True):
        return cin * cout * k * k + (cout if bias else 0)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ScaleLayer(Module):
    """Single learnable multiplier, initialised to 1."""

    def __init__(self, init=1.0):
        super().__init__()
        self.scale = const_param((1,), init)

    def forward(self, x):
        from ..tensor import scale_by
        return scale_by(x, self.scale)


def reachable_parameters(out):
    """Parameters reachable backward from ``out`` through the recorded graph.

    Walks the graph independently of any module registry; used as an oracle
    for parameter audits.
    """
    found, seen = {}, set()
    stack = [out] if isinstance(out, Tensor) else list(out)
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if isinstance(t, Parameter):
            found[id(t)] = t
        if t._node is not None:
            stack.extend(t._node.inputs)
    return list(found.values())

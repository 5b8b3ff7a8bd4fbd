"""YOLOv8 building blocks: Conv, Bottleneck, C2f, SPPF and the decoupled head."""
import numpy as np

from ..errors import ConfigError, ShapeError
from ..tensor import (
    add,
    batch_norm,
    concat_channels,
    conv2d,
    max_pool2d,
    silu,
    split_channels,
)
from .module import Conv2dLayer, Module, ModuleList, const_param, uniform_param

BN_EPS = 1e-3
BN_MOMENTUM = 0.03


class ConvBlock(Module):
    """conv (no bias) -> batch norm -> SiLU."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, cin, cout, k=1, stride=1, pad=None, groups=1, act=True, eps=BN_EPS):
        super().__init__()
        if cin % groups or cout % groups:
            raise ConfigError(f"ConvBlock: channels {cin}->{cout} not divisible by groups={groups}")
        self.cin, self.cout, self.k = cin, cout, k
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.groups = groups
        self.act = act
        self.eps = eps
        self.weight = uniform_param((cout, cin // groups, k, k), cin // groups * k * k)
        self.gamma = const_param((cout,), 1.0)
        self.beta = const_param((cout,), 0.0)
        self.running_mean = np.zeros(cout, dtype=self.weight.dtype)
        self.running_var = np.ones(cout, dtype=self.weight.dtype)

    @staticmethod
    def formula(cin, cout, k=1, groups=1):
        return cin * cout * k * k // groups + 2 * cout

    def normalize(self, y):
        y = batch_norm(y, self.gamma, self.beta, self.running_mean, self.running_var,
                       training=self.training, momentum=BN_MOMENTUM, eps=self.eps)
        return silu(y) if self.act else y

    def forward(self, x):
        y = conv2d(x, self.weight, stride=self.stride, pad=self.pad, groups=self.groups)
        return self.normalize(y)


class Bottleneck(Module):
    def __init__(self, c1, c2, shortcut=True, k=(3, 3), e=0.5):
        super().__init__()
        if shortcut and c1 != c2:
            raise ConfigError(f"Bottleneck shortcut needs equal channels, got {c1}->{c2}")
        hidden = int(c2 * e)
        self.cv1 = ConvBlock(c1, hidden, k[0])
        self.cv2 = ConvBlock(hidden, c2, k[1])
        self.shortcut = shortcut

    @staticmethod
    def formula(c1, c2, k=(3, 3), e=0.5):
        h = int(c2 * e)
        return ConvBlock.formula(c1, h, k[0]) + ConvBlock.formula(h, c2, k[1])

    def forward(self, x):
        y = self.cv2(self.cv1(x))
        return add(x, y) if self.shortcut else y


class C2f(Module):
    """Split -> n bottlenecks on the running branch -> concat all -> 1x1 fuse."""

    def __init__(self, c1, c2, n=1, shortcut=False, e=0.5):
        super().__init__()
        self.c = int(c2 * e)
        self.cv1 = ConvBlock(c1, 2 * self.c, 1)
        self.m = ModuleList(Bottleneck(self.c, self.c, shortcut, k=(3, 3), e=1.0) for _ in range(n))
        self.cv2 = ConvBlock((2 + n) * self.c, c2, 1)

    @staticmethod
    def formula(c1, c2, n=1, e=0.5):
        c = int(c2 * e)
        return (ConvBlock.formula(c1, 2 * c) + n * Bottleneck.formula(c, c, e=1.0)
                + ConvBlock.formula((2 + n) * c, c2))

    def forward(self, x):
        ys = split_channels(self.cv1(x), [self.c, self.c])
        for block in self.m:
            ys.append(block(ys[-1]))
        return self.cv2(concat_channels(ys))


class SPPF(Module):
    """1x1 reduce, three chained k x k max pools, concat, 1x1 fuse."""

    def __init__(self, c1, c2, k=5):
        super().__init__()
        hidden = c1 // 2
        self.k = k
        self.cv1 = ConvBlock(c1, hidden, 1)
        self.cv2 = ConvBlock(hidden * 4, c2, 1)

    @staticmethod
    def formula(c1, c2):
        h = c1 // 2
        return ConvBlock.formula(c1, h) + ConvBlock.formula(4 * h, c2)

    def forward(self, x):
        ys = [self.cv1(x)]
        for _ in range(3):
            ys.append(max_pool2d(ys[-1], self.k, 1, self.k // 2))
        return self.cv2(concat_channels(ys))


def dfl_expectation(logits, reg_max=16, axis=-1):
    """Expected bin index of softmax(logits) along ``axis`` (numpy)."""
    z = logits - logits.max(axis=axis, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=axis, keepdims=True)
    bins = np.arange(reg_max, dtype=logits.dtype)
    shape = [1] * logits.ndim
    shape[axis] = reg_max
    return (p * bins.reshape(shape)).sum(axis=axis)


class DetectHeadV8(Module):
    """Decoupled head: independent box and class branches per level."""

    def __init__(self, nc, ch=(64, 128, 256), reg_max=16):
        super().__init__()
        self.nc, self.reg_max, self.ch = nc, reg_max, tuple(ch)
        c2 = max(16, ch[0] // 4, reg_max * 4)
        c3 = max(ch[0], min(nc, 100))
        self.c2, self.c3 = c2, c3
        self.cv2 = ModuleList(_Branch(c, c2, 4 * reg_max) for c in ch)
        self.cv3 = ModuleList(_Branch(c, c3, nc) for c in ch)

    @staticmethod
    def formula(nc, ch=(64, 128, 256), reg_max=16):
        c2 = max(16, ch[0] // 4, reg_max * 4)
        c3 = max(ch[0], min(nc, 100))
        total = 0
        for c in ch:
            total += _Branch.formula(c, c2, 4 * reg_max) + _Branch.formula(c, c3, nc)
        return total

    def forward(self, levels):
        if len(levels) != len(self.ch):
            raise ShapeError(f"head expects {len(self.ch)} levels, got {len(levels)}", dim="levels")
        return [(self.cv2[i](x), self.cv3[i](x)) for i, x in enumerate(levels)]

    def projections(self):
        return [b.proj for b in self.cv2], [b.proj for b in self.cv3]


class _Branch(Module):
    def __init__(self, cin, hidden, cout):
        super().__init__()
        self.conv1 = ConvBlock(cin, hidden, 3)
        self.conv2 = ConvBlock(hidden, hidden, 3)
        self.proj = Conv2dLayer(hidden, cout, 1)

    @staticmethod
    def formula(cin, hidden, cout):
        return (ConvBlock.formula(cin, hidden, 3) + ConvBlock.formula(hidden, hidden, 3)
                + Conv2dLayer.formula(hidden, cout, 1))

    def forward(self, x):
        return self.proj(self.conv2(self.conv1(x)))

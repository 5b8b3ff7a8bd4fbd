"""Kernel-warehouse dynamic convolution.

A :class:`Warehouse` stores K kernel cells of shape (co, ci, kh, kw). A
:class:`KWConvLayer` with Cout output channels owns S = Cout / co output
slots; slot ``i`` uses the mixed kernel ``sum_k alpha[n, i, k] * cell_k``
where ``alpha`` comes from the layer's weight-generation module (WGM). With
S = 1 this is exactly ``Y = sum_k alpha_k W_k * X + b``. Several layers may
reference one warehouse; they then read and update the same storage.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, WarehouseError
from .nn.blocks import BN_EPS, BN_MOMENTUM, ConvBlock
from .nn.module import Module, ModuleList, const_param, uniform_param
from .tensor import (
    add,
    batch_norm,
    channel_bias,
    concat_channels,
    conv2d,
    global_avg_pool,
    linear,
    mix_kernels,
    mix_responses,
    reshape,
    silu,
    softmax,
    split_channels,
)


class Warehouse(Module):
    def __init__(self, k, cell_shape):
        super().__init__()
        if k < 1:
            raise WarehouseError(f"warehouse needs K >= 1, got {k}")
        co, ci, kh, kw = cell_shape
        self.K = k
        self.cell_shape = (co, ci, kh, kw)
        self.cells = uniform_param((k, co, ci, kh, kw), ci * kh * kw)
        self._members = []

    def register(self, layer):
        self._members.append(layer)
        return len(self._members) - 1

    @property
    def members(self):
        return list(self._members)

    @property
    def cell_size(self):
        co, ci, kh, kw = self.cell_shape
        return co * ci * kh * kw

    def kernel_bank(self):
        """Cells flattened to a (K*co, ci, kh, kw) conv weight."""
        co, ci, kh, kw = self.cell_shape
        return reshape(self.cells, (self.K * co, ci, kh, kw))


class WGM(Module):
    """Weight generation: GAP -> linear(C, C/r) -> SiLU -> linear(C/r, S*K) -> softmax over K.

    The last linear starts at zero so every slot begins at the uniform mixture.
    """

    def __init__(self, cin, k, slots=1, reduction=4):
        super().__init__()
        hidden = max(cin // reduction, 1)
        self.cin, self.k, self.slots = cin, k, slots
        self.fc1_w = uniform_param((hidden, cin), cin)
        self.fc1_b = uniform_param((hidden,), cin)
        self.fc2_w = const_param((slots * k, hidden), 0.0)
        self.fc2_b = const_param((slots * k,), 0.0)

    @staticmethod
    def formula(cin, k, slots=1, reduction=4):
        hidden = max(cin // reduction, 1)
        return cin * hidden + hidden + hidden * slots * k + slots * k

    def logits(self, x):
        if x.shape[1] != self.cin:
            raise ShapeError(f"WGM expects {self.cin} channels, got {x.shape[1]}", dim="C")
        h = silu(linear(global_avg_pool(x), self.fc1_w, self.fc1_b))
        return reshape(linear(h, self.fc2_w, self.fc2_b), (x.shape[0], self.slots, self.k))

    def forward(self, x):
        return softmax(self.logits(x), axis=2)


class KWConvLayer(Module):
    """Warehouse convolution + own bias, then BN + SiLU.

    ``mode`` selects the evaluation order: ``"conv_then_mix"`` convolves with
    all K cells and mixes responses; ``"mix_then_conv"`` mixes kernels per
    sample and convolves once. Both give the same result up to rounding.
    """

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, warehouse, cin, cout, k=3, stride=1, pad=None, reduction=4,
                 mode="conv_then_mix", act=True):
        super().__init__()
        co, ci, kh, kw = warehouse.cell_shape
        if ci != cin or kh != k or kw != k:
            raise WarehouseError(
                f"layer geometry (Cin={cin}, k={k}) incompatible with cells {warehouse.cell_shape}")
        if cout % co:
            raise WarehouseError(f"Cout={cout} is not a multiple of the cell width {co}")
        self._warehouse = warehouse
        self.member_id = warehouse.register(self)
        self.cin, self.cout, self.k = cin, cout, k
        self.slots = cout // co
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.mode = mode
        self.act = act
        self.wgm = WGM(cin, warehouse.K, self.slots, reduction)
        self.bias = const_param((cout,), 0.0)
        self.gamma = const_param((cout,), 1.0)
        self.beta = const_param((cout,), 0.0)
        self.running_mean = np.zeros(cout, dtype=self.bias.dtype)
        self.running_var = np.ones(cout, dtype=self.bias.dtype)

    @property
    def warehouse(self):
        return self._warehouse

    def own_param_count(self):
        """WGM + bias + BN affine: everything the layer owns outright."""
        return WGM.formula(self.cin, self._warehouse.K, self.slots, self.wgm_reduction) + 3 * self.cout

    @property
    def wgm_reduction(self):
        return max(self.cin // self.wgm.fc1_w.shape[0], 1)

    def _children(self):
        yield from super()._children()
        # exposed under the layer so every member can reach it; dedup keeps one name
        yield "warehouse", self._warehouse

    def conv(self, x, alpha=None):
        """Mixture convolution plus bias, before the BN/SiLU epilogue."""
        wh = self._warehouse
        if alpha is None:
            alpha = self.wgm(x)
        if alpha.shape[1:] != (self.slots, wh.K) or alpha.shape[0] != x.shape[0]:
            raise WarehouseError(
                f"alpha shape {alpha.shape} != (N, {self.slots}, {wh.K})")
        if self.mode == "conv_then_mix":
            z = conv2d(x, wh.kernel_bank(), stride=self.stride, pad=self.pad)
            y = mix_responses(z, alpha)
        elif self.mode == "mix_then_conv":
            n, _, h, w = x.shape
            kern = mix_kernels(alpha, wh.cells)  # (n, cout, cin, k, k)
            kern = reshape(kern, (n * self.cout, self.cin, self.k, self.k))
            y = conv2d(reshape(x, (1, n * self.cin, h, w)), kern, stride=self.stride,
                       pad=self.pad, groups=n)
            y = reshape(y, (n, self.cout) + y.shape[2:])
        else:
            raise ConfigError(f"unknown KWConv mode {self.mode!r}")
        return channel_bias(y, self.bias)

    def forward(self, x, alpha=None):
        y = batch_norm(self.conv(x, alpha), self.gamma, self.beta, self.running_mean,
                       self.running_var, training=self.training, momentum=BN_MOMENTUM, eps=BN_EPS)
        return silu(y) if self.act else y


def slots_for(k, members, cout):
    """Output slots per member so that ``members * slots`` is close to K
    (1x kernel budget); falls back to a divisor of ``cout``."""
    s = max(1, k // members)
    while cout % s:
        s -= 1
    return s


def make_warehouse(k, members, cin, cout, ksize=3):
    """Warehouse sized for ``members`` layers of shape (cout, cin, ksize, ksize)."""
    s = slots_for(k, members, cout)
    return Warehouse(k, (cout // s, cin, ksize, ksize))


class KWConv(Module):
    """Stand-alone KW convolution owning a private warehouse (backbone downsampling)."""

    def __init__(self, cin, cout, k=3, stride=1, K=4, reduction=4):
        super().__init__()
        self.layer = KWConvLayer(make_warehouse(K, 1, cin, cout, k), cin, cout, k, stride,
                                 reduction=reduction)

    def forward(self, x, alpha=None):
        return self.layer(x, alpha)


class KWBottleneck(Module):
    def __init__(self, warehouse, c, shortcut=True, reduction=4, warehouse2=None):
        super().__init__()
        self.cv1 = KWConvLayer(warehouse, c, c, 3, reduction=reduction)
        self.cv2 = KWConvLayer(warehouse2 or warehouse, c, c, 3, reduction=reduction)
        self.shortcut = shortcut

    def forward(self, x):
        y = self.cv2(self.cv1(x))
        return add(x, y) if self.shortcut else y


class C2fKW(Module):
    """C2f whose bottleneck 3x3 convolutions all draw from one shared warehouse.

    ``shared=False`` gives every layer a private bank of the same geometry
    (the non-shared reference design used for comparisons).
    """

    def __init__(self, c1, c2, n=1, shortcut=True, K=4, reduction=4, e=0.5, shared=True):
        super().__init__()
        self.c = int(c2 * e)
        self.cv1 = ConvBlock(c1, 2 * self.c, 1)
        self._warehouse = make_warehouse(K, 2 * n, self.c, self.c, 3)
        if shared:
            banks = [self._warehouse] * (2 * n)
        else:
            cells = self._warehouse.cell_shape
            banks = [self._warehouse] + [Warehouse(K, cells) for _ in range(2 * n - 1)]
        self.m = ModuleList(KWBottleneck(banks[2 * i], self.c, shortcut, reduction, banks[2 * i + 1])
                            for i in range(n))
        self.cv2 = ConvBlock((2 + n) * self.c, c2, 1)

    def forward(self, x):
        ys = split_channels(self.cv1(x), [self.c, self.c])
        for block in self.m:
            ys.append(block(ys[-1]))
        return self.cv2(concat_channels(ys))

    @property
    def warehouse(self):
        return self._warehouse

    def kw_layers(self):
        return [conv for b in self.m for conv in (b.cv1, b.cv2)]


@dataclass(frozen=True)
class WarehouseReport:
    raw: int
    amortized: float
    non_shared: int
    saving_factor: float


def warehouse_param_report(warehouse, members=None):
    """Kernel storage of a warehouse: as allocated, per member, and as if
    every member kept a private bank of the same K cells."""
    members = warehouse.members if members is None else list(members)
    if not members:
        raise WarehouseError("warehouse has no members")
    raw = warehouse.K * warehouse.cell_size
    non_shared = len(members) * raw
    return WarehouseReport(raw=raw, amortized=raw / len(members), non_shared=non_shared,
                           saving_factor=non_shared / raw)

"""Shared GN-conv detection head."""

from .errors import ShapeError
from .nn.module import Conv2dLayer, Module, ModuleList, ScaleLayer, const_param, uniform_param
from .tensor import conv2d, group_norm, silu

GN_GROUPS = 16
GN_EPS = 1e-5


def clamp_groups(channels, groups=GN_GROUPS):
    """Largest group count <= ``groups`` that divides ``channels``."""
    g = min(groups, channels)
    while channels % g:
        g -= 1
    return g


class GNConvBlock(Module):
    """conv (no bias) -> group norm -> SiLU."""

    def __init__(self, cin, cout, k=1, groups=GN_GROUPS):
        super().__init__()
        self.pad = k // 2
        self.groups = clamp_groups(cout, groups)
        self.weight = uniform_param((cout, cin, k, k), cin * k * k)
        self.gamma = const_param((cout,), 1.0)
        self.beta = const_param((cout,), 0.0)

    @staticmethod
    def formula(cin, cout, k=1):
        return cin * cout * k * k + 2 * cout

    def forward(self, x):
        y = conv2d(x, self.weight, pad=self.pad)
        return silu(group_norm(y, self.groups, self.gamma, self.beta, eps=GN_EPS))


class GSDHead(Module):
    """Per-level 1x1 aligners into a shared width, one shared pair of 3x3
    GN-conv blocks used by every level, then per-level 1x1 box/class
    projections and a per-level learnable scale on the box logits."""

    def __init__(self, nc, ch=(64, 128, 256), cs=None, reg_max=16):
        super().__init__()
        cs = min(ch) if cs is None else cs
        self.nc, self.reg_max, self.ch, self.cs = nc, reg_max, tuple(ch), cs
        self.align = ModuleList(GNConvBlock(c, cs, 1) for c in ch)
        self.stem = ModuleList([GNConvBlock(cs, cs, 3), GNConvBlock(cs, cs, 3)])
        self.reg = ModuleList(Conv2dLayer(cs, 4 * reg_max, 1) for _ in ch)
        self.cls = ModuleList(Conv2dLayer(cs, nc, 1) for _ in ch)
        self.scales = ModuleList(ScaleLayer(1.0) for _ in ch)

    @staticmethod
    def formula(nc, ch=(64, 128, 256), cs=None, reg_max=16):
        cs = min(ch) if cs is None else cs
        aligners = sum(GNConvBlock.formula(c, cs, 1) for c in ch)
        stem = 2 * GNConvBlock.formula(cs, cs, 3)
        proj = Conv2dLayer.formula(cs, 4 * reg_max) + Conv2dLayer.formula(cs, nc)
        return aligners + stem + len(ch) * (proj + 1)

    def trunk(self, x, level):
        y = self.align[level](x)
        for block in self.stem:
            y = block(y)
        return y

    def forward(self, levels):
        if len(levels) != len(self.ch):
            raise ShapeError(f"head expects {len(self.ch)} levels, got {len(levels)}", dim="levels")
        out = []
        for i, x in enumerate(levels):
            y = self.trunk(x, i)
            out.append((self.scales[i](self.reg[i](y)), self.cls[i](y)))
        return out

    def projections(self):
        return list(self.reg), list(self.cls)


def head_param_compare(decoupled, shared):
    """(decoupled params, shared params, fractional reduction)."""
    from .nn.module import param_count
    a, b = param_count(decoupled), param_count(shared)
    return a, b, (a - b) / a if a else float("nan")

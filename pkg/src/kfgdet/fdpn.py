"""Feature-focus diffusion pyramid neck.

P3/P4/P5 are aligned to the P4 grid and fused (focus), enriched by parallel
pointwise and depthwise branches with a residual path (mix), then pushed
back out to strides 8/16/32 and merged with the original backbone levels
(diffusion).
"""
from .errors import ShapeError
from .nn.blocks import C2f, ConvBlock
from .nn.module import Module, ModuleList
from .tensor import add, avg_pool2d, concat_channels, max_pool2d, split_channels, upsample_nearest


class ADown(Module):
    """Halve H and W: input halves go through (avg-pool, 3x3/2 conv) and
    (3x3/2 max-pool, 1x1 conv); results are concatenated."""

    def __init__(self, c1, c2):
        super().__init__()
        if c1 % 2 or c2 % 2:
            raise ShapeError(f"ADown needs even channel counts, got {c1}->{c2}", dim="C")
        self.half = c1 // 2
        self.cv1 = ConvBlock(c1 // 2, c2 // 2, 3, 2, 1)
        self.cv2 = ConvBlock(c1 // 2, c2 // 2, 1, 1, 0)

    @staticmethod
    def formula(c1, c2):
        return ConvBlock.formula(c1 // 2, c2 // 2, 3) + ConvBlock.formula(c1 // 2, c2 // 2, 1)

    def forward(self, x):
        h, w = x.shape[2:]
        if h % 2 or w % 2:
            raise ShapeError(f"ADown needs even H and W, got {h}x{w}", dim="H" if h % 2 else "W")
        x = avg_pool2d(x, 2, 1, 0)
        a, b = split_channels(x, [self.half, self.half])
        return concat_channels([self.cv1(a), self.cv2(max_pool2d(b, 3, 2, 1))])


class FocusFuse(Module):
    def __init__(self, c3, c4, c5, cf):
        super().__init__()
        self.down3 = ADown(c3, cf)
        self.conv4 = ConvBlock(c4, cf, 1)
        self.conv5 = ConvBlock(c5, cf, 1)
        self.fuse = ConvBlock(3 * cf, cf, 1)

    def forward(self, p3, p4, p5):
        h3, h4, h5 = p3.shape[2], p4.shape[2], p5.shape[2]
        w3, w4, w5 = p3.shape[3], p4.shape[3], p5.shape[3]
        if h3 != 2 * h4 or h4 != 2 * h5 or w3 != 2 * w4 or w4 != 2 * w5:
            raise ShapeError(
                f"levels must follow strides 8/16/32: got {h3}x{w3}, {h4}x{w4}, {h5}x{w5}", dim="stride")
        parts = [self.down3(p3), self.conv4(p4), self.conv5(upsample_nearest(p5, 2))]
        return self.fuse(concat_channels(parts))


class MultiKernelMix(Module):
    """identity + pointwise (k=1) + depthwise (k>1) branches, summed, 1x1 conv, plus residual."""

    def __init__(self, cf, kernels=(1, 3, 5, 7)):
        super().__init__()
        self.kernels = tuple(kernels)
        self.branches = ModuleList(
            ConvBlock(cf, cf, 1) if k == 1 else ConvBlock(cf, cf, k, groups=cf) for k in self.kernels)
        self.exit = ConvBlock(cf, cf, 1)

    def forward(self, f):
        acc = f
        for branch in self.branches:
            acc = add(acc, branch(f))
        return add(self.exit(acc), f)


class DiffusionFanout(Module):
    def __init__(self, cf, c3, c4, c5, n=1):
        super().__init__()
        self.to3 = ConvBlock(cf, c3, 1)
        self.to5 = ADown(cf, c5)
        self.merge3 = C2f(2 * c3, c3, n, shortcut=False)
        self.merge4 = C2f(cf + c4, c4, n, shortcut=False)
        self.merge5 = C2f(2 * c5, c5, n, shortcut=False)

    def forward(self, f, p3, p4, p5):
        n3 = self.merge3(concat_channels([self.to3(upsample_nearest(f, 2)), p3]))
        n4 = self.merge4(concat_channels([f, p4]))
        n5 = self.merge5(concat_channels([self.to5(f), p5]))
        return n3, n4, n5


class FDPN(Module):
    def __init__(self, c3=64, c4=128, c5=256, cf=None, dw_kernels=(1, 3, 5, 7), n=1):
        super().__init__()
        cf = c4 if cf is None else cf
        self.widths = (c3, c4, c5)
        self.focus = FocusFuse(c3, c4, c5, cf)
        self.mix = MultiKernelMix(cf, dw_kernels)
        self.fanout = DiffusionFanout(cf, c3, c4, c5, n)

    def forward(self, p3, p4, p5):
        f = self.mix(self.focus(p3, p4, p5))
        return self.fanout(f, p3, p4, p5)


class PAN(Module):
    """Baseline top-down + bottom-up neck."""

    def __init__(self, c3=64, c4=128, c5=256, n=1):
        super().__init__()
        self.widths = (c3, c4, c5)
        self.td4 = C2f(c5 + c4, c4, n)
        self.td3 = C2f(c4 + c3, c3, n)
        self.down3 = ConvBlock(c3, c3, 3, 2)
        self.bu4 = C2f(c3 + c4, c4, n)
        self.down4 = ConvBlock(c4, c4, 3, 2)
        self.bu5 = C2f(c4 + c5, c5, n)

    def forward(self, p3, p4, p5):
        h4 = self.td4(concat_channels([upsample_nearest(p5, 2), p4]))
        n3 = self.td3(concat_channels([upsample_nearest(h4, 2), p3]))
        n4 = self.bu4(concat_channels([self.down3(n3), h4]))
        n5 = self.bu5(concat_channels([self.down4(n4), p5]))
        return n3, n4, n5

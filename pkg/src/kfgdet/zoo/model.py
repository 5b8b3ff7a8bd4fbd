"""Network assembly for every ablation variant."""
import math

import numpy as np

from ..errors import ShapeError
from ..fdpn import FDPN, PAN
from ..gsd_head import GSDHead
from ..kw import C2fKW, KWConv
from ..nn.blocks import C2f, SPPF, ConvBlock, DetectHeadV8
from ..nn.module import Module, ModuleList, manual_seed
from .config import ModelConfig

STRIDES = (8, 16, 32)


def scaled_width(c, width):
    return max(4, int(round(c * width)))


def scaled_depth(n, depth):
    return max(round(n * depth), 1) if n > 1 else n


class Backbone(Module):
    def __init__(self, cfg):
        super().__init__()
        w = [scaled_width(c, cfg.width) for c in (64, 128, 256, 512, 1024)]
        n3, n6 = scaled_depth(3, cfg.depth), scaled_depth(6, cfg.depth)

        def down(cin, cout):
            if cfg.kwconv:
                return KWConv(cin, cout, 3, 2, K=cfg.K, reduction=cfg.r)
            return ConvBlock(cin, cout, 3, 2)

        def stage(c, n):
            if cfg.c2f_kw:
                return C2fKW(c, c, n, True, K=cfg.K, reduction=cfg.r)
            return C2f(c, c, n, True)

        self.layers = ModuleList([
            ConvBlock(3, w[0], 3, 2),
            ConvBlock(w[0], w[1], 3, 2),
            C2f(w[1], w[1], n3, True),
            down(w[1], w[2]),
            stage(w[2], n6),
            down(w[2], w[3]),
            stage(w[3], n6),
            down(w[3], w[4]),
            stage(w[4], n3),
            SPPF(w[4], w[4], 5),
        ])
        self.widths = (w[2], w[3], w[4])

    def forward(self, x):
        feats = []
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i in (4, 6, 9):
                feats.append(x)
        return feats


class Model(Module):
    """Backbone -> neck -> head; forward returns per-level (box logits, class logits)."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        c3, c4, c5 = self.backbone.widths
        n = scaled_depth(3, cfg.depth)
        self.neck = FDPN(c3, c4, c5, None, cfg.dw_kernels, n) if cfg.fdpn else PAN(c3, c4, c5, n)
        if cfg.gsdhead:
            self.head = GSDHead(cfg.nc, (c3, c4, c5), cfg.cs or None, cfg.reg_max)
        else:
            self.head = DetectHeadV8(cfg.nc, (c3, c4, c5), cfg.reg_max)
        self.strides = STRIDES

    def forward(self, images):
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected images (N, 3, S, S), got {images.shape}", dim="C")
        h, w = images.shape[2:]
        if h % 32 or w % 32 or h < 32 or w < 32:
            raise ShapeError(f"image size {h}x{w} is not a multiple of 32", dim="H" if h % 32 else "W")
        p3, p4, p5 = self.backbone(images)
        return self.head(list(self.neck(p3, p4, p5)))

    def init_head_bias(self):
        """Box logits start at 1; class logits at a low prior (~5 objects per image).

        A projection shared across levels takes the prior of the finest level.
        """
        reg_proj, cls_proj = self.head.projections()
        for proj in reg_proj:
            proj.bias.data[:] = 1.0
        seen = set()
        for proj, s in zip(cls_proj, self.strides):
            if id(proj) in seen:
                continue
            seen.add(id(proj))
            proj.bias.data[:] = math.log(5 / self.cfg.nc / (self.cfg.imgsz / s) ** 2)


def build_model(cfg=None, seed=0, **overrides):
    cfg = ModelConfig(**overrides) if cfg is None else cfg
    manual_seed(seed)
    model = Model(cfg)
    model.init_head_bias()
    return model


def kw_layers(model):
    from ..kw import KWConvLayer
    return [m for _, m in model.named_modules() if isinstance(m, KWConvLayer)]


def warehouses(model):
    from ..kw import Warehouse
    seen, out = set(), []
    for _, m in model.named_modules():
        if isinstance(m, Warehouse) and id(m) not in seen:
            seen.add(id(m))
            out.append(m)
    return out


def dummy_input(cfg, n=1, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (n, 3, cfg.imgsz, cfg.imgsz)).astype(dtype)

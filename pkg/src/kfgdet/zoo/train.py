"""Toy-scale training: one-cell assigner, BCE + CIoU + DFL loss, SGD."""
import math
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..tensor import Tensor, no_grad

BOX_GAIN, CLS_GAIN, DFL_GAIN = 7.5, 0.5, 1.5
CIOU_EPS = 1e-7


# ---------------------------------------------------------------- anchors / layout
def anchor_grid(imgsz, strides):
    """Cell centers (A, 2) in pixels and per-anchor stride (A,), level-major, row-major."""
    centers, strd = [], []
    for s in strides:
        g = imgsz // s
        ys, xs = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
        centers.append(np.stack([(xs.ravel() + 0.5) * s, (ys.ravel() + 0.5) * s], axis=1))
        strd.append(np.full(g * g, s, dtype=np.float64))
    return np.concatenate(centers), np.concatenate(strd)


def flatten_outputs(outputs, reg_max):
    """Per-level head outputs -> (N, A, 4, reg_max) box logits, (N, A, nc) class logits."""
    regs, clss = [], []
    for reg, cls in outputs:
        n, _, h, w = reg.shape
        r = T.reshape(reg, (n, 4, reg_max, h * w))
        regs.append(T.transpose(r, (0, 3, 1, 2)))
        clss.append(T.transpose(T.reshape(cls, (n, cls.shape[1], h * w)), (0, 2, 1)))
    return T.concat(regs, axis=1), T.concat(clss, axis=1)


# ---------------------------------------------------------------- assignment
@dataclass
class Assignment:
    batch: np.ndarray      # (P,) image index
    anchor: np.ndarray     # (P,) flat anchor index
    cls: np.ndarray        # (P,) class id
    boxes: np.ndarray      # (P, 4) x1 y1 x2 y2, pixels
    unassigned: int = 0    # targets that found no cell (degenerate or collided)
    empty_images: int = 0  # images with targets but no assigned cell


def pick_level(box, strides, reg_max):
    """Coarsest stride whose cell size suits the box and whose DFL range covers it."""
    side = max(box[2] - box[0], box[3] - box[1])
    best = 0
    for i, s in enumerate(strides):
        if side >= 4 * s or i == 0:
            best = i
    # walk up if the distances from the center cell overflow the bins
    while best < len(strides) - 1 and side / 2 + strides[best] > (reg_max - 1) * strides[best]:
        best += 1
    return best


def assign(targets, imgsz, strides, reg_max):
    """One positive cell per target: the cell containing the box center at one level.

    ``targets`` is a per-image list of (M, 5) arrays ``[cls, x1, y1, x2, y2]``.
    When two targets land on the same cell the smaller box wins.
    """
    offsets, o = [], 0
    for s in strides:
        offsets.append(o)
        o += (imgsz // s) ** 2
    rows, unassigned, empty = [], 0, 0
    for b, tgt in enumerate(targets):
        tgt = np.asarray(tgt, dtype=np.float64).reshape(-1, 5)
        taken = {}
        for c, x1, y1, x2, y2 in tgt:
            if x2 <= x1 or y2 <= y1:
                unassigned += 1
                continue
            box = (x1, y1, x2, y2)
            lvl = pick_level(box, strides, reg_max)
            s, g = strides[lvl], imgsz // strides[lvl]
            cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
            j = min(max(int(cx // s), 0), g - 1)
            i = min(max(int(cy // s), 0), g - 1)
            a = offsets[lvl] + i * g + j
            area = (x2 - x1) * (y2 - y1)
            if a in taken:
                unassigned += 1
                if taken[a][0] <= area:
                    continue
            taken[a] = (area, int(c), box)
        if len(tgt) and not taken:
            empty += 1
        rows.extend((b, a, c, box) for a, (_, c, box) in sorted(taken.items()))
    if not rows:
        z = np.zeros(0, dtype=np.int64)
        return Assignment(z, z, z, np.zeros((0, 4)), unassigned, empty)
    return Assignment(
        batch=np.array([r[0] for r in rows], dtype=np.int64),
        anchor=np.array([r[1] for r in rows], dtype=np.int64),
        cls=np.array([r[2] for r in rows], dtype=np.int64),
        boxes=np.array([r[3] for r in rows], dtype=np.float64),
        unassigned=unassigned, empty_images=empty)


# ---------------------------------------------------------------- loss pieces
def _col(x, i):
    return T.getitem(x, (slice(None), i))


def ciou(pred, target):
    """Complete IoU between matching rows of ``pred`` (tensor) and ``target`` (P, 4)."""
    pred = T.as_tensor(pred)
    target = T.as_tensor(np.asarray(target.data if isinstance(target, Tensor) else target,
                                    dtype=pred.dtype))
    px1, py1, px2, py2 = (_col(pred, i) for i in range(4))
    tx1, ty1, tx2, ty2 = (_col(target, i) for i in range(4))
    iw = T.clamp(T.sub(T.minimum(px2, tx2), T.maximum(px1, tx1)), lo=0.0)
    ih = T.clamp(T.sub(T.minimum(py2, ty2), T.maximum(py1, ty1)), lo=0.0)
    inter = T.mul(iw, ih)
    pw, ph = T.sub(px2, px1), T.add(T.sub(py2, py1), CIOU_EPS)
    tw, th = T.sub(tx2, tx1), T.add(T.sub(ty2, ty1), CIOU_EPS)
    union = T.add(T.sub(T.add(T.mul(pw, ph), T.mul(tw, th)), inter), CIOU_EPS)
    iou = T.div(inter, union)
    cw = T.sub(T.maximum(px2, tx2), T.minimum(px1, tx1))
    ch = T.sub(T.maximum(py2, ty2), T.minimum(py1, ty1))
    c2 = T.add(T.add(T.mul(cw, cw), T.mul(ch, ch)), CIOU_EPS)
    dx = T.sub(T.add(tx1, tx2), T.add(px1, px2))
    dy = T.sub(T.add(ty1, ty2), T.add(py1, py2))
    rho2 = T.mul(T.add(T.mul(dx, dx), T.mul(dy, dy)), 0.25)
    dv = T.sub(T.atan(T.div(tw, th)), T.atan(T.div(pw, ph)))
    v = T.mul(T.mul(dv, dv), 4 / math.pi ** 2)
    with no_grad():
        alpha = T.div(v, T.add(T.sub(v, iou), 1 + CIOU_EPS))
    return T.sub(T.sub(iou, T.div(rho2, c2)), T.mul(alpha.detach(), v))


def dfl_targets(anchors, strides, boxes, reg_max):
    """Side distances (l, t, r, b) in stride units, clipped to the bin range."""
    d = np.stack([anchors[:, 0] - boxes[:, 0], anchors[:, 1] - boxes[:, 1],
                  boxes[:, 2] - anchors[:, 0], boxes[:, 3] - anchors[:, 1]], axis=1)
    return np.clip(d / strides[:, None], 0, reg_max - 1 - 0.01)


def dfl_loss(logits, dist):
    """Distribution focal loss; ``logits`` (P, 4, R) tensor, ``dist`` (P, 4) targets."""
    p, _, r = logits.shape
    lo = np.floor(dist).astype(np.int64)
    hi = lo + 1
    wl, wr = hi - dist, dist - lo
    logp = T.log_softmax(logits, axis=2)
    ii, jj = np.meshgrid(np.arange(p), np.arange(4), indexing="ij")
    l_lo = T.getitem(logp, (ii, jj, lo))
    l_hi = T.getitem(logp, (ii, jj, np.minimum(hi, r - 1)))
    ce = T.add(T.mul(l_lo, wl.astype(logits.dtype)), T.mul(l_hi, wr.astype(logits.dtype)))
    return T.neg(T.mean(ce, axis=1))  # (P,)


def decode_distances(logits, reg_max):
    """Expected bin per side as a differentiable tensor: (..., 4, R) -> (..., 4)."""
    prob = T.softmax(logits, axis=-1)
    bins = np.broadcast_to(np.arange(reg_max, dtype=logits.dtype), prob.shape)
    return T.sum(T.mul(prob, np.ascontiguousarray(bins)), axis=-1)


@dataclass
class LossResult:
    total: Tensor
    box: float
    cls: float
    dfl: float
    positives: int
    unassigned: int = 0
    empty_images: int = 0
    parts: dict = field(default_factory=dict)


def loss_compute(outputs, targets, imgsz, strides=(8, 16, 32), reg_max=16):
    """Detection loss for raw head outputs and per-image pixel-space targets."""
    reg, cls = flatten_outputs(outputs, reg_max)
    n, a_total, nc = cls.shape
    anchors, anchor_strides = anchor_grid(imgsz, strides)
    asg = assign(targets, imgsz, strides, reg_max)
    npos = len(asg.anchor)
    norm = max(npos, 1)

    cls_t = np.zeros(cls.shape, dtype=cls.dtype)
    cls_t[asg.batch, asg.anchor, asg.cls] = 1.0
    l_cls = T.mul(T.sum(T.bce_with_logits(cls, cls_t)), 1.0 / norm)

    if npos:
        pos_reg = T.getitem(reg, (asg.batch, asg.anchor))  # (P, 4, R)
        anc, st = anchors[asg.anchor], anchor_strides[asg.anchor]
        dist = decode_distances(pos_reg, reg_max)
        sign = np.array([-1.0, -1.0, 1.0, 1.0], dtype=reg.dtype)
        scale = (st[:, None] * sign[None, :]).astype(reg.dtype)
        centre = np.concatenate([anc, anc], axis=1).astype(reg.dtype)
        pred = T.add(T.mul(dist, scale), centre)
        l_box = T.mul(T.sum(T.add(T.neg(ciou(pred, asg.boxes)), 1.0)), 1.0 / norm)
        l_dfl = T.mul(T.sum(dfl_loss(pos_reg, dfl_targets(anc, st, asg.boxes, reg_max))), 1.0 / norm)
    else:
        zero = T.mul(T.sum(reg), 0.0)
        l_box, l_dfl = zero, zero
    total = T.add(T.add(T.mul(l_box, BOX_GAIN), T.mul(l_cls, CLS_GAIN)), T.mul(l_dfl, DFL_GAIN))
    return LossResult(total=total, box=float(l_box.data), cls=float(l_cls.data),
                      dfl=float(l_dfl.data), positives=npos, unassigned=asg.unassigned,
                      empty_images=asg.empty_images)


# ---------------------------------------------------------------- optimisation
class SGD:
    """SGD with optional momentum and global gradient-norm clipping."""

    def __init__(self, params, lr, momentum=0.0, max_grad_norm=None):
        self.params = list(params)
        self.lr, self.momentum, self.max_grad_norm = lr, momentum, max_grad_norm
        self._velocity = [None] * len(self.params)

    def step(self):
        grads = [p.grad for p in self.params]
        scale = 1.0
        if self.max_grad_norm is not None:
            norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads if g is not None))
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / norm
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                continue
            g = g * scale
            if self.momentum:
                v = g if self._velocity[i] is None else self.momentum * self._velocity[i] + g
                self._velocity[i] = v
                g = v
            p.data -= (self.lr * g).astype(p.data.dtype)


def train_step(model, batch, lr=None, optimizer=None):
    """One forward/backward/update. ``batch`` is (images, targets).

    Without an optimizer a plain SGD update with ``lr`` is applied.
    """
    images, targets = batch
    model.train()
    model.zero_grad()
    out = model(images)
    cfg = model.cfg
    res = loss_compute(out, targets, images.shape[-1], model.strides, cfg.reg_max)
    res.total.backward()
    (optimizer or SGD(model.parameters(), lr)).step()
    return res


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    unassigned: int = 0
    empty_images: int = 0


def train_loop(model, images, targets, iters, lr, momentum=0.9, batch_size=None, seed=0,
               max_grad_norm=10.0, callback=None):
    """Overfit ``model`` on a fixed set; batches cycle through a seeded permutation."""
    rng = np.random.default_rng(seed)
    n = len(images)
    bs = n if batch_size is None else min(batch_size, n)
    opt = SGD(model.parameters(), lr, momentum, max_grad_norm)
    log, order, pos = TrainLog(), rng.permutation(n), 0
    for it in range(iters):
        if pos + bs > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos:pos + bs]
        pos += bs
        # cosine decay to 1% keeps the last iterations stable
        opt.lr = lr * (0.01 + 0.99 * 0.5 * (1 + math.cos(math.pi * it / max(iters, 1))))
        res = train_step(model, (images[idx], [targets[i] for i in idx]), optimizer=opt)
        log.losses.append(float(res.total.data))
        log.unassigned += res.unassigned
        log.empty_images += res.empty_images
        if callback is not None:
            callback(it, res)
    model.eval()
    return log

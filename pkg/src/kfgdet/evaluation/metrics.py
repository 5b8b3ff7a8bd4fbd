"""Boxes, IoU, NMS, matching and precision/recall/AP/mAP."""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 >= self.x1 and self.y2 >= self.y1):
            raise ValueError(f"invalid box {self}")

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Detection:
    box: Box
    cls: int
    conf: float

    def __post_init__(self):
        if not (np.isfinite(self.conf) and 0.0 <= self.conf <= 1.0):
            raise ValueError(f"confidence {self.conf} outside [0, 1]")


@dataclass
class GroundTruth:
    box: Box
    cls: int
    matched: bool = False


def _iou_xyxy(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
    # same operation order as the vectorised path so both round identically
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    iw = np.maximum(iw, 0.0)
    ih = np.maximum(ih, 0.0)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou(a, b):
    """Intersection over union of two boxes; 0 when they do not overlap."""
    return float(_iou_xyxy(*(np.float64(v) for v in a.as_tuple()),
                           *(np.float64(v) for v in b.as_tuple())))


def iou_matrix(a, b):
    """Pairwise IoU of (n, 4) and (m, 4) arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    return _iou_xyxy(a[:, None, 0], a[:, None, 1], a[:, None, 2], a[:, None, 3],
                     b[None, :, 0], b[None, :, 1], b[None, :, 2], b[None, :, 3])


def _rank(dets):
    # descending confidence, lower original index first on ties
    return sorted(range(len(dets)), key=lambda i: (-dets[i].conf, i))


def nms(dets, iou_thresh=0.45):
    """Greedy per-class NMS; returns kept detections in rank order."""
    if not dets:
        return []
    order = np.array(_rank(dets))
    boxes = np.array([dets[i].box.as_tuple() for i in order], dtype=np.float64)
    classes = np.array([dets[i].cls for i in order])
    keep = np.zeros(len(order), dtype=bool)
    for c in np.unique(classes):
        idx = np.flatnonzero(classes == c)
        alive = np.ones(len(idx), dtype=bool)
        ious = iou_matrix(boxes[idx], boxes[idx])
        for k in range(len(idx)):
            if not alive[k]:
                continue
            keep[idx[k]] = True
            alive[k + 1:] &= ~(ious[k, k + 1:] > iou_thresh)
    return [dets[order[k]] for k in np.flatnonzero(keep)]


def nms_reference(dets, iou_thresh=0.45):
    """Quadratic reference: walk the ranking, keep a box unless a kept box of its class overlaps it."""
    kept = []
    for i in _rank(dets):
        d = dets[i]
        if all(k.cls != d.cls or not iou(k.box, d.box) > iou_thresh for k in kept):
            kept.append(d)
    return kept


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    flags: list  # per detection, in the order given: True for TP


def match(dets, gts, iou_thresh=0.5):
    """Greedy matching in the given (confidence-descending) order.

    Each detection takes the unmatched same-class ground truth with the
    highest IoU at or above the threshold. ``gts[i].matched`` is updated.
    """
    flags = []
    for g in gts:
        g.matched = False
    for d in dets:
        best, best_iou = None, iou_thresh
        for g in gts:
            if g.matched or g.cls != d.cls:
                continue
            v = iou(d.box, g.box)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = g, v
        if best is not None:
            best.matched = True
        flags.append(best is not None)
    tp = sum(flags)
    return MatchResult(tp=tp, fp=len(dets) - tp, fn=len(gts) - tp, flags=flags)


def precision_recall(tp, fp, fn):
    """(P, R, degenerate). Zero denominators yield 0 and set ``degenerate``."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be nonnegative")
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, degenerate


def average_precision_exact(flags, n_gt):
    """All-point interpolated AP as an exact fraction.

    Every TP raises recall by 1/n_gt; the envelope precision there is the
    largest precision at that rank or later.
    """
    n_gt = int(n_gt)
    if n_gt <= 0:
        raise ValueError("average precision needs n_gt >= 1")
    n = len(flags)
    prec = [None] * n
    tp = 0
    for i, f in enumerate(flags):
        tp += bool(f)
        prec[i] = Fraction(tp, i + 1)
    envelope, best = [None] * n, Fraction(0)
    for i in range(n - 1, -1, -1):
        best = max(best, prec[i])
        envelope[i] = best
    return sum((envelope[i] for i in range(n) if flags[i]), Fraction(0)) / n_gt


def average_precision(flags, n_gt):
    return float(average_precision_exact(flags, n_gt))


def average_precision_bruteforce(flags, n_gt):
    """Oracle: build every (recall, precision) point of the staircase and
    integrate the envelope over each recall interval separately."""
    n_gt = int(n_gt)
    points, tp = [], 0
    for i, f in enumerate(flags):
        tp += bool(f)
        points.append((Fraction(tp, n_gt), Fraction(tp, i + 1)))
    levels = sorted({r for r, _ in points} | {Fraction(0)})
    area = Fraction(0)
    for lo, hi in zip(levels, levels[1:]):
        area += (hi - lo) * max(p for r, p in points if r >= hi)
    return area


def map50(aps):
    """Unweighted mean of per-class APs (classes absent from ground truth excluded)."""
    vals = [v for v in (aps.values() if isinstance(aps, dict) else aps) if v is not None]
    return sum(vals) / len(vals) if vals else 0.0


# ---------------------------------------------------------------- dataset accumulation
@dataclass
class ImageResult:
    """Per-image matching outcome; merging these is order independent."""

    index: int
    records: list  # (cls, conf, det_index, is_tp)
    n_gt: dict


def evaluate_image(index, dets, gts, iou_thresh=0.5):
    ranked = _rank(dets)
    ordered = [dets[i] for i in ranked]
    gts = [GroundTruth(g.box, g.cls) for g in gts]
    res = match(ordered, gts, iou_thresh)
    n_gt = {}
    for g in gts:
        n_gt[g.cls] = n_gt.get(g.cls, 0) + 1
    recs = [(d.cls, d.conf, r, f) for d, r, f in zip(ordered, ranked, res.flags)]
    return ImageResult(index, recs, n_gt)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    ap: float
    tp: int
    fp: int
    fn: int
    n_gt: int


@dataclass
class MetricsReport:
    per_class: dict = field(default_factory=dict)   # cls -> ClassMetrics (classes with GT)
    absent: dict = field(default_factory=dict)      # cls -> detections count (no GT)
    map50: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    fps: float = None
    params: int = None
    class_names: tuple = ()

    def _name(self, c):
        return self.class_names[c] if c < len(self.class_names) else str(c)

    def format_table(self):
        lines = [f"{'class':<16} {'P':>6} {'R':>6} {'AP50':>6} {'TP':>5} {'FP':>5} {'FN':>5}"]
        for c, m in sorted(self.per_class.items()):
            lines.append(f"{self._name(c):<16} {m.precision:>6.3f} {m.recall:>6.3f} {m.ap:>6.3f}"
                         f" {m.tp:>5d} {m.fp:>5d} {m.fn:>5d}")
        lines.append(f"{'all':<16} {self.precision:>6.3f} {self.recall:>6.3f} {self.map50:>6.3f}"
                     f" {self.tp:>5d} {self.fp:>5d} {self.fn:>5d}")
        for c, n in sorted(self.absent.items()):
            lines.append(f"(class {self._name(c)} has no ground truth; {n} detections excluded from mAP)")
        return "\n".join(lines)

    def kv_lines(self):
        out = [f"map50={self.map50:.6f}", f"precision={self.precision:.6f}",
               f"recall={self.recall:.6f}", f"tp={self.tp}", f"fp={self.fp}", f"fn={self.fn}"]
        for c, m in sorted(self.per_class.items()):
            out += [f"class{c}_precision={m.precision:.6f}", f"class{c}_recall={m.recall:.6f}",
                    f"class{c}_ap50={m.ap:.6f}"]
        if self.fps is not None:
            out.append(f"fps={self.fps:.3f}")
        if self.params is not None:
            out.append(f"params={self.params}")
        return out


def summarize(results, class_names=()):
    """Merge per-image results into a report. Input order does not matter."""
    results = sorted(results, key=lambda r: r.index)
    n_gt, recs = {}, {}
    for r in results:
        for c, n in r.n_gt.items():
            n_gt[c] = n_gt.get(c, 0) + n
        for cls, conf, j, flag in r.records:
            recs.setdefault(cls, []).append((-conf, r.index, j, flag))
    rep = MetricsReport(class_names=tuple(class_names))
    for c in sorted(set(n_gt) | set(recs)):
        rows = sorted(recs.get(c, []))
        flags = [f for *_, f in rows]
        if not n_gt.get(c):
            rep.absent[c] = len(flags)
            rep.fp += len(flags)
            continue
        tp = sum(flags)
        fp, fn = len(flags) - tp, n_gt[c] - tp
        p, r_, _ = precision_recall(tp, fp, fn)
        rep.per_class[c] = ClassMetrics(p, r_, average_precision(flags, n_gt[c]), tp, fp, fn, n_gt[c])
        rep.tp += tp
        rep.fp += fp
        rep.fn += fn
    rep.map50 = map50({c: m.ap for c, m in rep.per_class.items()})
    rep.precision, rep.recall, _ = precision_recall(rep.tp, rep.fp, rep.fn)
    return rep


def evaluate(det_lists, gt_lists, iou_thresh=0.5, class_names=(), workers=1):
    """Score per-image detection lists against per-image ground truths."""
    jobs = list(enumerate(zip(det_lists, gt_lists)))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda j: evaluate_image(j[0], *j[1], iou_thresh), jobs))
    else:
        results = [evaluate_image(i, d, g, iou_thresh) for i, (d, g) in jobs]
    return summarize(results, class_names)

"""Raw head outputs -> scored boxes."""
import numpy as np

from ..nn.blocks import dfl_expectation
from .metrics import Box, Detection, nms

STRIDES = (8, 16, 32)


def _arr(x):
    return x.data if hasattr(x, "data") and not isinstance(x, np.ndarray) else np.asarray(x)


def decode_arrays(outputs, reg_max=16, strides=STRIDES):
    """Dense decode: per image (A, 4) xyxy boxes and (A, nc) class probabilities."""
    boxes, probs = [], []
    for (reg, cls), s in zip(outputs, strides):
        reg, cls = _arr(reg).astype(np.float64), _arr(cls).astype(np.float64)
        n, _, h, w = reg.shape
        dist = dfl_expectation(reg.reshape(n, 4, reg_max, h, w), reg_max, axis=2)  # (n,4,h,w)
        ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        cx, cy = (xs + 0.5) * s, (ys + 0.5) * s
        b = np.stack([cx - dist[:, 0] * s, cy - dist[:, 1] * s,
                      cx + dist[:, 2] * s, cy + dist[:, 3] * s], axis=-1)  # (n,h,w,4)
        boxes.append(b.reshape(n, h * w, 4))
        with np.errstate(over="ignore"):
            p = 1.0 / (1.0 + np.exp(-cls))
        probs.append(p.reshape(n, cls.shape[1], h * w).transpose(0, 2, 1))
    return np.concatenate(boxes, axis=1), np.concatenate(probs, axis=1)


def decode(outputs, conf_thresh=0.25, reg_max=16, strides=STRIDES):
    """Per-image lists of detections whose best class probability reaches ``conf_thresh``."""
    boxes, probs = decode_arrays(outputs, reg_max, strides)
    result = []
    for b, p in zip(boxes, probs):
        cls = p.argmax(axis=1)
        conf = p[np.arange(len(p)), cls]
        keep = np.flatnonzero(conf >= conf_thresh)
        result.append([Detection(Box(*map(float, b[i])), int(cls[i]), float(conf[i])) for i in keep])
    return result


def postprocess(outputs, conf_thresh=0.25, iou_thresh=0.45, reg_max=16, strides=STRIDES):
    return [nms(d, iou_thresh) for d in decode(outputs, conf_thresh, reg_max, strides)]

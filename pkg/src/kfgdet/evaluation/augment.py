"""Random crop, aspect stretch and Gaussian noise, applied jointly to image and boxes."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentSpec:
    crop: tuple = (0.6, 1.0)      # crop side as a fraction of the image side
    stretch: tuple = (0.8, 1.25)  # horizontal scale factor applied after cropping
    sigma: float = 0.03           # noise std on the [0, 1] intensity scale
    seed: int = 0
    min_area: float = 0.2         # boxes keeping less of their area are dropped
    retries: int = 10

    @classmethod
    def parse(cls, text):
        """``key=value`` pairs separated by commas or whitespace, ranges as ``lo:hi``."""
        kw = {}
        for tok in text.replace(",", " ").split():
            key, _, val = tok.partition("=")
            if key in ("crop", "stretch"):
                lo, _, hi = val.partition(":")
                kw[key] = (float(lo), float(hi or lo))
            elif key in ("sigma", "min_area"):
                kw[key] = float(val)
            elif key in ("seed", "retries"):
                kw[key] = int(val)
            else:
                raise ValueError(f"unknown augment key {key!r}")
        return cls(**kw)


def crop_boxes(boxes, x0, y0, x1, y1, min_area=0.2):
    """Clip (M, 5) boxes to a window and shift into its frame; drop small remnants."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
    out = boxes.copy()
    out[:, 1] = np.clip(boxes[:, 1], x0, x1) - x0
    out[:, 3] = np.clip(boxes[:, 3], x0, x1) - x0
    out[:, 2] = np.clip(boxes[:, 2], y0, y1) - y0
    out[:, 4] = np.clip(boxes[:, 4], y0, y1) - y0
    area = (boxes[:, 3] - boxes[:, 1]) * (boxes[:, 4] - boxes[:, 2])
    kept = (out[:, 3] - out[:, 1]) * (out[:, 4] - out[:, 2])
    ok = (kept > 0) & (kept >= min_area * area)
    return out[ok]


def _resize_nearest(img, h, w):
    sh, sw = img.shape[:2]
    ys = np.minimum(((np.arange(h) + 0.5) * sh / h).astype(np.int64), sh - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * sw / w).astype(np.int64), sw - 1)
    return img[ys][:, xs]


def augment(image, boxes, spec, rng=None):
    """Returns (image', boxes'). ``image`` is (H, W, 3) uint8 or float in [0, 1]."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    as_uint8 = image.dtype == np.uint8
    img = image.astype(np.float64) / 255.0 if as_uint8 else np.asarray(image, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
    h, w = img.shape[:2]

    # crop, retrying when every labeled box would be lost
    window, kept = (0, 0, w, h), boxes
    for _ in range(max(spec.retries, 1)):
        f = rng.uniform(*spec.crop)
        cw, ch = max(1, int(round(w * f))), max(1, int(round(h * f)))
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        cand = crop_boxes(boxes, x0, y0, x0 + cw, y0 + ch, spec.min_area)
        if len(cand) or not len(boxes):
            window, kept = (x0, y0, x0 + cw, y0 + ch), cand
            break
    x0, y0, x1, y1 = window
    img = img[y0:y1, x0:x1]
    if window == (0, 0, w, h):
        kept = boxes.copy()

    # stretch along x
    a = rng.uniform(*spec.stretch)
    ch, cw = img.shape[:2]
    nw = max(1, int(round(cw * a)))
    if nw != cw:
        img = _resize_nearest(img, ch, nw)
        kept = kept.copy()
        kept[:, [1, 3]] *= nw / cw

    if spec.sigma > 0:
        img = np.clip(img + rng.normal(0.0, spec.sigma, img.shape), 0.0, 1.0)
    if as_uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return img, kept


def expand_dataset(images, boxes, spec, factor):
    """Originals plus ``factor - 1`` augmented copies each, with per-copy seeds."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out_imgs, out_boxes, origin = [], [], []
    seeds = np.random.SeedSequence(spec.seed).spawn(len(images) * max(factor - 1, 1))
    for i, (img, b) in enumerate(zip(images, boxes)):
        out_imgs.append(np.asarray(img))
        out_boxes.append(np.asarray(b, dtype=np.float64).reshape(-1, 5))
        origin.append((i, 0))
        for k in range(1, factor):
            rng = np.random.default_rng(seeds[i * (factor - 1) + k - 1])
            ai, ab = augment(np.asarray(img), b, spec, rng)
            out_imgs.append(ai)
            out_boxes.append(ab)
            origin.append((i, k))
    return out_imgs, out_boxes, origin

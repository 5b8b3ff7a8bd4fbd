"""YOLO label files, binary PPM images, dataset folders and synthetic fixtures."""
import os
import re
import warnings

import numpy as np

from ..errors import ImageFormatError, LabelError
from .metrics import Box, GroundTruth

CLASS_NAMES = ("Proliferate", "No Proliferate", "No-DR")


# ---------------------------------------------------------------- labels
def parse_yolo_labels(text, width, height, nc=3, source="<labels>"):
    gts = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise LabelError(f"expected 'class cx cy w h', got {raw!r}", line=lineno)
        try:
            cls = int(parts[0])
            cx, cy, w, h = (float(v) for v in parts[1:])
        except ValueError:
            raise LabelError(f"non-numeric field in {raw!r}", line=lineno) from None
        if not 0 <= cls < nc:
            raise LabelError(f"class {cls} outside [0, {nc})", line=lineno)
        vals = np.array([cx, cy, w, h])
        if not np.all(np.isfinite(vals)):
            raise LabelError(f"non-finite coordinate in {raw!r}", line=lineno)
        if np.any(vals < 0) or np.any(vals > 1):
            warnings.warn(f"{source}:{lineno}: coordinates outside [0, 1] clamped", stacklevel=2)
            cx, cy, w, h = np.clip(vals, 0.0, 1.0)
        x1 = max((cx - w / 2) * width, 0.0)
        y1 = max((cy - h / 2) * height, 0.0)
        x2 = min((cx + w / 2) * width, float(width))
        y2 = min((cy + h / 2) * height, float(height))
        gts.append(GroundTruth(Box(x1, y1, max(x2, x1), max(y2, y1)), cls))
    return gts


def load_yolo_labels(path, width, height, nc=3):
    with open(path, encoding="utf-8") as fh:
        return parse_yolo_labels(fh.read(), width, height, nc, source=str(path))


def format_yolo_labels(boxes, width, height):
    """(M, 5) ``[cls, x1, y1, x2, y2]`` pixel rows -> YOLO text."""
    lines = []
    for c, x1, y1, x2, y2 in np.asarray(boxes, dtype=np.float64).reshape(-1, 5):
        lines.append(f"{int(c)} {(x1 + x2) / 2 / width:.6f} {(y1 + y2) / 2 / height:.6f} "
                     f"{(x2 - x1) / width:.6f} {(y2 - y1) / height:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")


def gts_to_array(gts):
    if not gts:
        return np.zeros((0, 5))
    return np.array([[g.cls, *g.box.as_tuple()] for g in gts], dtype=np.float64)


def array_to_gts(arr):
    return [GroundTruth(Box(*map(float, r[1:])), int(r[0])) for r in np.asarray(arr).reshape(-1, 5)]


# ---------------------------------------------------------------- PPM (P6)
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_ppm(path):
    """Binary PPM -> (H, W, 3) uint8."""
    with open(path, "rb") as fh:
        buf = fh.read()
    fields, pos = [], 0
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if not m:
            raise ImageFormatError(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PPM header") from None
    if maxval != 255 or w < 1 or h < 1:
        raise ImageFormatError(f"{path}: only 8-bit PPM with positive size is supported")
    data = buf[pos + 1:pos + 1 + w * h * 3]
    if len(data) != w * h * 3:
        raise ImageFormatError(f"{path}: pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, image):
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected (H, W, 3) image, got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def to_chw(images):
    """(N, H, W, 3) uint8 -> (N, 3, H, W) float32 in [0, 1]."""
    arr = np.asarray(images)
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=np.float32) / np.float32(255.0)


# ---------------------------------------------------------------- folders
def list_dataset(images_dir, labels_dir):
    """(stem, image path, label path or None) for every image, sorted by stem."""
    out = []
    for name in sorted(os.listdir(images_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() != ".ppm":
            continue
        lab = os.path.join(labels_dir, stem + ".txt")
        out.append((stem, os.path.join(images_dir, name), lab if os.path.exists(lab) else None))
    return out


def load_dataset(images_dir, labels_dir, nc=3):
    """Images (N, H, W, 3) uint8, per-image GroundTruth lists and stems."""
    images, gts, stems = [], [], []
    for stem, ip, lp in list_dataset(images_dir, labels_dir):
        img = read_ppm(ip)
        h, w, _ = img.shape
        images.append(img)
        gts.append(load_yolo_labels(lp, w, h, nc) if lp else [])
        stems.append(stem)
    if not images:
        raise ImageFormatError(f"no .ppm images found in {images_dir}")
    if len({im.shape for im in images}) > 1:
        raise ImageFormatError("images in a dataset must share one size")
    return np.stack(images), gts, stems


def save_dataset(out_dir, images, boxes, stems=None):
    img_dir, lab_dir = os.path.join(out_dir, "images"), os.path.join(out_dir, "labels")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lab_dir, exist_ok=True)
    stems = stems or [f"{i:05d}" for i in range(len(images))]
    for stem, img, b in zip(stems, images, boxes):
        write_ppm(os.path.join(img_dir, stem + ".ppm"), img)
        h, w = np.asarray(img).shape[:2]
        with open(os.path.join(lab_dir, stem + ".txt"), "w", encoding="utf-8") as fh:
            fh.write(format_yolo_labels(b, w, h))
    return img_dir, lab_dir


# ---------------------------------------------------------------- synthetic fixtures
_COLORS = np.array([[220, 40, 40], [40, 200, 60], [50, 80, 230]], dtype=np.float64)


def _draw(img, cls, cx, cy, r):
    h, w, _ = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    if cls == 0:      # filled disk
        mask = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2 <= r * r
    elif cls == 1:    # filled square
        mask = (np.abs(xs + 0.5 - cx) <= r) & (np.abs(ys + 0.5 - cy) <= r)
    else:             # ring
        d2 = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2
        mask = (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    img[mask] = _COLORS[cls]


def synth_fixtures(n, seed=0, size=64, max_blobs=3, nc=3, radius=(6, 11)):
    """Noisy gray images with colored blobs: disks, squares and rings for classes 0/1/2.

    Returns images (n, size, size, 3) uint8 and per-image (M, 5) ``[cls, x1, y1, x2, y2]``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for _ in range(n):
        img = np.clip(rng.normal(110, 12, (size, size, 3)), 0, 255)
        rows = []
        for _ in range(rng.integers(1, max_blobs + 1)):
            for _attempt in range(50):
                r = float(rng.integers(radius[0], radius[1] + 1))
                cx = float(rng.integers(int(r) + 1, size - int(r)))
                cy = float(rng.integers(int(r) + 1, size - int(r)))
                box = (cx - r, cy - r, cx + r, cy + r)
                if all(box[2] + 2 <= b[1] or b[3] + 2 <= box[0] or box[3] + 2 <= b[2] or b[4] + 2 <= box[1]
                       for b in rows):
                    cls = int(rng.integers(0, nc))
                    _draw(img, cls % 3, cx, cy, r)
                    rows.append((cls, *box))
                    break
        images.append(np.round(img).astype(np.uint8))
        labels.append(np.array(rows, dtype=np.float64).reshape(-1, 5))
    return np.stack(images), labels

"""Binary weight files.

Layout (all integers little-endian)::

    b"KFG1" | u16 version | u32 len + config text (utf-8)
    u32 entry count, then per entry:
        u16 len + name | u8 kind
        kind 0/2 (parameter/buffer): u8 dtype | u8 rank | u32 dims[rank] | u64 offset | u64 nbytes
        kind 1 (alias):              u16 len + canonical name
    u64 payload length | payload
    u32 CRC32 of every preceding byte

Shared storage is written once; members appear as alias records.
"""
import io
import struct
import zlib

import numpy as np

from ..errors import (
    AliasMismatchError,
    IntegrityError,
    MagicError,
    MissingTensorError,
    TensorShapeMismatchError,
    UnexpectedTensorError,
    VersionError,
)

MAGIC = b"KFG1"
VERSION = 1
KIND_PARAM, KIND_ALIAS, KIND_BUFFER = 0, 1, 2
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def _pack_str(s, fmt="<H"):
    b = s.encode("utf-8")
    return struct.pack(fmt, len(b)) + b


def save_weights(model, path):
    cfg = getattr(model, "cfg", None)
    cfg_text = cfg.to_text() if cfg is not None else ""
    header = io.BytesIO()
    payload = io.BytesIO()
    entries = [(n, KIND_PARAM, p.data) for n, p in model.named_parameters()]
    entries += [(n, KIND_ALIAS, c) for n, c in sorted(model.aliases().items())]
    entries += [(n, KIND_BUFFER, b) for n, b in model.named_buffers()]
    header.write(MAGIC + struct.pack("<H", VERSION) + _pack_str(cfg_text, "<I"))
    header.write(struct.pack("<I", len(entries)))
    for name, kind, obj in entries:
        header.write(_pack_str(name) + struct.pack("<B", kind))
        if kind == KIND_ALIAS:
            header.write(_pack_str(obj))
            continue
        arr = np.ascontiguousarray(obj)
        code = DTYPE_CODES[arr.dtype]
        raw = arr.astype(DTYPES[code], copy=False).tobytes()
        header.write(struct.pack("<BB", code, arr.ndim))
        header.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        header.write(struct.pack("<QQ", payload.tell(), len(raw)))
        payload.write(raw)
    body = header.getvalue() + struct.pack("<Q", payload.tell()) + payload.getvalue()
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise IntegrityError("weight file is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, fmt="<H"):
        (n,) = self.unpack(fmt)
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise IntegrityError("undecodable name in manifest") from None


def read_weight_file(path):
    """Parse and verify a weight file. Returns (config text, tensors, aliases, buffers)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise MagicError(f"not a weight file (magic {buf[:4]!r})")
    r = _Reader(buf)
    r.take(4)
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise VersionError(f"unsupported weight file version {version} (expected {VERSION})")
    if len(buf) < 10:
        raise IntegrityError("weight file is truncated")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise IntegrityError("checksum mismatch: file truncated or corrupted")
    cfg_text = r.string("<I")
    (count,) = r.unpack("<I")
    manifest = []
    for _ in range(count):
        name = r.string()
        (kind,) = r.unpack("<B")
        if kind == KIND_ALIAS:
            manifest.append((name, kind, r.string()))
        elif kind in (KIND_PARAM, KIND_BUFFER):
            code, rank = r.unpack("<BB")
            if code not in DTYPES:
                raise IntegrityError(f"unknown dtype code {code} for '{name}'")
            dims = r.unpack(f"<{rank}I")
            off, nbytes = r.unpack("<QQ")
            manifest.append((name, kind, (DTYPES[code], dims, off, nbytes)))
        else:
            raise IntegrityError(f"unknown entry kind {kind} for '{name}'")
    (plen,) = r.unpack("<Q")
    payload = r.take(plen)
    if r.pos != len(buf) - 4:
        raise IntegrityError("trailing bytes after payload")
    tensors, aliases, buffers = {}, {}, {}
    for name, kind, info in manifest:
        if kind == KIND_ALIAS:
            aliases[name] = info
            continue
        dt, dims, off, nbytes = info
        if nbytes != int(np.prod(dims, dtype=np.int64)) * dt.itemsize or off + nbytes > plen:
            raise IntegrityError(f"payload range for '{name}' is inconsistent")
        arr = np.frombuffer(payload, dtype=dt, count=nbytes // dt.itemsize, offset=off)
        arr = arr.reshape(dims).astype(dt.newbyteorder("="))
        (tensors if kind == KIND_PARAM else buffers)[name] = arr
    for name, target in aliases.items():
        if target not in tensors:
            raise IntegrityError(f"alias '{name}' points at missing tensor '{target}'")
    return cfg_text, tensors, aliases, buffers


def _owner(model, name):
    mods = dict(model.named_modules())
    mod_name, _, attr = name.rpartition(".")
    return mods[mod_name], attr


def _check_names(expected, found):
    missing = sorted(set(expected) - set(found))
    extra = sorted(set(found) - set(expected))
    if missing and (not extra or missing[0] <= extra[0]):
        raise MissingTensorError(missing[0])
    if extra:
        raise UnexpectedTensorError(extra[0])


def load_weights(path, model=None):
    """Load a weight file. Without ``model`` one is built from the embedded config.

    The file is fully validated before the model is touched, so a failed load
    never leaves a half-populated model behind.
    """
    from .config import parse_config_text
    from .model import build_model

    cfg_text, tensors, aliases, buffers = read_weight_file(path)
    if model is None:
        model = build_model(parse_config_text(cfg_text))
    params = dict(model.named_parameters())
    model_aliases = model.aliases()
    model_buffers = dict(model.named_buffers())
    _check_names(list(params) + list(model_aliases) + list(model_buffers),
                 list(tensors) + list(aliases) + list(buffers))
    for name, target in aliases.items():
        if model_aliases.get(name) != target:
            raise AliasMismatchError(name, model_aliases.get(name), target)
    for src, dst in ((tensors, params), (buffers, model_buffers)):
        for name, arr in src.items():
            cur = dst[name].shape
            if tuple(arr.shape) != tuple(cur):
                raise TensorShapeMismatchError(name, cur, arr.shape)
    for name, arr in tensors.items():
        params[name].data = arr.astype(params[name].dtype, copy=True)
        params[name].grad = None
    for name, target in aliases.items():
        mod, attr = _owner(model, name)
        setattr(mod, attr, params[target])
    for name, arr in buffers.items():
        mod, attr = _owner(model, name)
        getattr(mod, attr)[...] = arr
    return model

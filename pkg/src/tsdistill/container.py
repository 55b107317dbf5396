"""Little-endian binary containers for clips ("TSDC") and parameters ("TSDP").

Clip file::

    magic "TSDC" | version u32 = 1 | label u32 | T, H, W, C u32
    | dtype u8 | 3 pad bytes | T*H*W*C scalars, row-major, frame-major

Checkpoint file::

    magic "TSDP" | version u32 = 1 | record count u32
    then per record:
    name length u32 | name (utf-8) | dtype u8 | rank u8 | 2 pad bytes
    | extents u32 * rank | payload

dtype codes: 0 float32, 1 float64, 2 uint8 (opaque bytes, used for metadata).
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError

VERSION = 1
CLIP_MAGIC = b"TSDC"
PARAM_MAGIC = b"TSDP"
_CLIP_HEADER = struct.Struct("<4sIIIIIIB3x")
_PARAM_HEADER = struct.Struct("<4sII")
_RECORD_HEAD = struct.Struct("<IBB2x")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}
MAX_EXTENT = 1 << 24
MAX_NAME = 4096


def dtype_code(dtype) -> int:
    try:
        return _CODES[np.dtype(dtype).newbyteorder("=")]
    except KeyError:
        raise FormatError(f"unsupported dtype {dtype}") from None


def _atomic_write(path, blob: bytes):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def encode_clip(clip: np.ndarray, label: int) -> bytes:
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise FormatError(f"clip must be rank 4 (T,H,W,C), got shape {clip.shape}")
    code = dtype_code(clip.dtype)
    if code == 2:
        raise FormatError("clip payload must be floating point")
    head = _CLIP_HEADER.pack(CLIP_MAGIC, VERSION, int(label), *clip.shape, code)
    return head + np.ascontiguousarray(clip, dtype=_DTYPES[code]).tobytes()


def decode_clip(blob: bytes):
    """Parse a clip file; returns ``(clip, label)``."""
    if len(blob) < _CLIP_HEADER.size:
        raise FormatError(f"truncated header: {len(blob)} of {_CLIP_HEADER.size} bytes", len(blob))
    magic, version, label, T, H, W, C, code = _CLIP_HEADER.unpack_from(blob, 0)
    if magic != CLIP_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    for i, n in enumerate((T, H, W, C)):
        if not 1 <= n <= MAX_EXTENT:
            raise FormatError(f"extent {n} out of range", 12 + 4 * i)
    if code not in (0, 1):
        raise FormatError(f"unknown dtype code {code}", 28)
    dt = _DTYPES[code]
    count = T * H * W * C
    need = _CLIP_HEADER.size + count * dt.itemsize
    if len(blob) != need:
        raise FormatError(f"payload size mismatch: file has {len(blob)} bytes, header implies {need}",
                          min(len(blob), need))
    clip = np.frombuffer(blob, dtype=dt, count=count, offset=_CLIP_HEADER.size)
    bad = np.flatnonzero(~((clip >= 0) & (clip <= 1)))
    if bad.size:
        raise FormatError("pixel value outside [0, 1]", _CLIP_HEADER.size + int(bad[0]) * dt.itemsize)
    return clip.astype(dt.newbyteorder("="), copy=True).reshape(T, H, W, C), int(label)


def write_clip_file(path, clip, label):
    _atomic_write(path, encode_clip(clip, label))


def read_clip_file(path):
    with open(path, "rb") as fh:
        return decode_clip(fh.read())


def encode_params(arrays: dict) -> bytes:
    parts = [_PARAM_HEADER.pack(PARAM_MAGIC, VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if not raw or len(raw) > MAX_NAME:
            raise FormatError(f"bad record name {name!r}")
        if arr.ndim > 255:
            raise FormatError(f"rank {arr.ndim} too large for {name!r}")
        code = dtype_code(arr.dtype)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB2x", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode_params(blob: bytes) -> dict:
    """Parse a checkpoint into ``{name: array}`` preserving record order."""
    if len(blob) < _PARAM_HEADER.size:
        raise FormatError("truncated header", len(blob))
    magic, version, count = _PARAM_HEADER.unpack_from(blob, 0)
    if magic != PARAM_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    pos = _PARAM_HEADER.size
    out = {}

    def take(n, what):
        nonlocal pos
        if n > len(blob) - pos:
            raise FormatError(f"truncated {what}", pos)
        start = pos
        pos += n
        return start

    for _ in range(count):
        start = take(4, "record name length")
        (name_len,) = struct.unpack_from("<I", blob, start)
        if not 1 <= name_len <= MAX_NAME:
            raise FormatError(f"name length {name_len} out of range", start)
        start = take(name_len, "record name")
        try:
            name = blob[start:start + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("record name is not utf-8", start) from None
        if name in out:
            raise FormatError(f"duplicate record {name!r}", start)
        start = take(4, "record type")
        code, rank = struct.unpack_from("<BB", blob, start)
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}", start)
        start = take(4 * rank, "record extents")
        shape = struct.unpack_from(f"<{rank}I", blob, start)
        if any(not 1 <= n <= MAX_EXTENT for n in shape):
            raise FormatError(f"extent out of range in {shape}", start)
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        start = take(size, "record payload")
        arr = np.frombuffer(blob, dtype=dt, count=size // dt.itemsize, offset=start)
        if code != 2 and not np.all(np.isfinite(arr)):
            raise FormatError(f"non-finite value in {name!r}", start)
        out[name] = arr.astype(dt.newbyteorder("="), copy=True).reshape(shape)
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes", pos)
    return out


def write_params_file(path, arrays: dict):
    _atomic_write(path, encode_params(arrays))


def read_params_file(path) -> dict:
    with open(path, "rb") as fh:
        return decode_params(fh.read())

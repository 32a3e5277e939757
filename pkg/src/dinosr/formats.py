"""Little-endian binary containers: DSRC checkpoints and DSRF feature files."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"DSRC"
FEATURE_MAGIC = b"DSRF"
VERSION = 1


class FormatError(ValueError):
    pass


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError("corrupt: truncated file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError("corrupt: trailing bytes")


def _header(r: _Reader, magic: bytes, what: str) -> None:
    if len(r.buf) < 4 or r.buf[:4] != magic:
        raise FormatError(f"not a {what}")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")


def _dump_json(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_checkpoint(tensors: dict[str, np.ndarray], metadata: dict) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = _dump_json(metadata)
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(buf)
    _header(r, CHECKPOINT_MAGIC, "checkpoint")
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("corrupt: bad tensor name") from exc
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    (meta_len,) = r.unpack("<I")
    try:
        metadata = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("corrupt: bad metadata") from exc
    r.done()
    return tensors, metadata


def write_checkpoint_file(path, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors, metadata))


def read_checkpoint_file(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_checkpoint(Path(path).read_bytes())


def encode_features(frames: np.ndarray, labels: np.ndarray | None) -> bytes:
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ValueError("frames must be a (T, F) matrix")
    T, F = frames.shape
    if T == 0:
        raise ValueError("empty utterance")
    parts = [FEATURE_MAGIC, struct.pack("<IIIB", VERSION, T, F, labels is not None)]
    parts.append(np.ascontiguousarray(frames, dtype="<f4").tobytes())
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (T,):
            raise ValueError("labels length must equal T")
        if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
            raise ValueError("phone ids must fit in u16")
        parts.append(np.ascontiguousarray(labels, dtype="<u2").tobytes())
    return b"".join(parts)


def decode_features(buf: bytes) -> tuple[np.ndarray, np.ndarray | None]:
    r = _Reader(buf)
    _header(r, FEATURE_MAGIC, "feature file")
    T, F, has_labels = r.unpack("<IIB")
    if has_labels not in (0, 1):
        raise FormatError("corrupt: bad label flag")
    frames = np.frombuffer(r.take(4 * T * F), dtype="<f4").astype(np.float64).reshape(T, F)
    labels = None
    if has_labels:
        labels = np.frombuffer(r.take(2 * T), dtype="<u2").astype(np.int64)
    r.done()
    return frames, labels

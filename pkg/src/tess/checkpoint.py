"""Versioned binary checkpoints.

All integers and floats are little-endian. Layout::

    offset  size  field
    0       8     magic b"TESSCKPT"
    8       4     u32 format version (1)
    12      4     u32 weighted layer count L
    16      4     u32 config length K
    20      K     resolved config text, UTF-8
    ...           L weight tensors
    ...           u64 optimizer step, u8 moments flag; if 1, L pairs (m, v)
    ...           u32 length + JSON of the shuffle RNG bit-generator state
    ...           f64 learning rate, f64 best validation metric (NaN if none),
                  u32 epochs without improvement, u32 epochs completed

A tensor is ``u32 ndim``, ``ndim`` x ``u32`` extents, then the float64 values
in row-major order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tess.errors import FormatError

MAGIC = b"TESSCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    config_text: str
    weights: list[np.ndarray]
    optimizer_step: int = 0
    moments: list[tuple[np.ndarray, np.ndarray]] | None = None
    rng_state: dict = field(default_factory=dict)
    lr: float = 0.0
    best_metric: float | None = None
    bad_epochs: int = 0
    epoch: int = 0


def _pack_tensor(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    head = struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape)
    return head + a.tobytes()


def encode(ckpt: Checkpoint) -> bytes:
    config = ckpt.config_text.encode("utf-8")
    parts = [MAGIC, struct.pack("<III", VERSION, len(ckpt.weights), len(config)), config]
    parts += [_pack_tensor(w) for w in ckpt.weights]
    parts.append(struct.pack("<QB", ckpt.optimizer_step, 1 if ckpt.moments else 0))
    if ckpt.moments:
        for m, v in ckpt.moments:
            parts += [_pack_tensor(m), _pack_tensor(v)]
    rng = json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(rng)), rng]
    best = math.nan if ckpt.best_metric is None else ckpt.best_metric
    parts.append(struct.pack("<ddII", ckpt.lr, best, ckpt.bad_epochs, ckpt.epoch))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def tensor(self, what: str) -> np.ndarray:
        (ndim,) = self.unpack("<I", what)
        if ndim > 8:
            raise FormatError(f"implausible tensor rank {ndim} in {what}", self.pos - 4)
        shape = self.unpack(f"<{ndim}I", what)
        count = int(np.prod(shape)) if ndim else 1
        data = self.take(8 * count, what)
        return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def decode(blob: bytes) -> Checkpoint:
    r = _Reader(blob)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("not a checkpoint (bad magic)", 0)
    version, layers, config_len = r.unpack("<III", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    try:
        config = r.take(config_len, "config").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("config text is not UTF-8", 20) from exc
    weights = [r.tensor(f"weights of layer {i}") for i in range(layers)]
    step, has_moments = r.unpack("<QB", "optimizer header")
    moments = None
    if has_moments:
        moments = [(r.tensor(f"m of layer {i}"), r.tensor(f"v of layer {i}")) for i in range(layers)]
    (rng_len,) = r.unpack("<I", "rng length")
    start = r.pos
    try:
        rng_state = json.loads(r.take(rng_len, "rng state").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("corrupt rng state", start) from exc
    lr, best, bad, epoch = r.unpack("<ddII", "scheduler state")
    if r.pos != len(blob):
        raise FormatError("trailing bytes after checkpoint", r.pos)
    return Checkpoint(
        config, weights, step, moments, rng_state, lr,
        None if math.isnan(best) else best, bad, epoch,
    )


def save(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode(ckpt))


def load(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}", 0) from exc
    return decode(blob)

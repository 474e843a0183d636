"""Datasets: direct coding of static images, the EVF1 event-frame container,
and seeded synthetic spiking tasks.

EVF1 layout (little-endian)::

    offset  size  field
    0       4     magic b"EVF1"
    4       4     u32 sample count N
    8       4     u32 time steps T
    12      4     u32 height H
    16      4     u32 width W
    20      4     u32 channels C
    24      4     u32 class count K
    28      ...   N records: u8 label, then T*C*H*W u8 values (T, C, H, W order)

Values are divided by 255 on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tess.core import DTYPE
from tess.errors import ConfigError, DataError, FormatError

EVF_MAGIC = b"EVF1"
_EVF_HEADER = struct.Struct("<4s6I")


@dataclass(frozen=True)
class SpikeDataset:
    """``inputs`` is ``(N, T, *frame_shape)`` with values in [0, 1]."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise DataError("inputs and labels differ in length")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise DataError("input values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def T(self) -> int:
        return self.inputs.shape[1]

    @property
    def frame_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[2:])

    def subset(self, index: np.ndarray) -> SpikeDataset:
        return SpikeDataset(self.inputs[index], self.labels[index], self.num_classes)

    def split(self, seed: int, fractions=(0.8, 0.1, 0.1)) -> tuple[SpikeDataset, SpikeDataset, SpikeDataset]:
        """Seeded shuffle, then train/val/test slices in the given proportions."""
        order = np.random.default_rng(seed).permutation(len(self))
        n_train = int(round(fractions[0] * len(self)))
        n_val = int(round(fractions[1] * len(self)))
        return (
            self.subset(order[:n_train]),
            self.subset(order[n_train:n_train + n_val]),
            self.subset(order[n_train + n_val:]),
        )


def encode_static(image: np.ndarray, T: int, mode: str = "repeat") -> np.ndarray:
    """Direct coding: the normalised image is presented unchanged at every step."""
    if T < 1:
        raise ConfigError(f"need at least one time step, got T={T}")
    if mode != "repeat":
        raise ConfigError(f"unknown encoding mode {mode!r}")
    image = np.asarray(image, dtype=DTYPE)
    return np.repeat(image[None], T, axis=0)


def augment_static(
    image: np.ndarray,
    rng: np.random.Generator,
    pad: int = 4,
    flip: bool = True,
    cutout: int = 0,
) -> np.ndarray:
    """Zero-pad and random-crop, optional horizontal flip and square cutout.

    ``image`` is ``(C, H, W)``; the result keeps that shape.
    """
    c, h, w = image.shape
    out = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    top, left = rng.integers(0, 2 * pad + 1, size=2)
    out = out[:, top:top + h, left:left + w]
    if flip and rng.random() < 0.5:
        out = out[:, :, ::-1]
    if cutout:
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        out = out.copy()
        out[:, max(cy - cutout // 2, 0):cy + cutout // 2, max(cx - cutout // 2, 0):cx + cutout // 2] = 0.0
    return np.ascontiguousarray(out)


def write_event_frames(path: str | Path, dataset: SpikeDataset) -> None:
    """Write a dataset of ``(N, T, C, H, W)`` frames as EVF1 (8-bit quantised)."""
    inputs = dataset.inputs
    if inputs.ndim != 5:
        raise DataError(f"EVF1 stores (N, T, C, H, W) frames, got {inputs.shape}")
    n, t, c, h, w = inputs.shape
    header = _EVF_HEADER.pack(EVF_MAGIC, n, t, h, w, c, dataset.num_classes)
    quantised = np.clip(np.rint(inputs * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(header)
        for label, frames in zip(dataset.labels, quantised):
            fh.write(struct.pack("<B", int(label)))
            fh.write(frames.tobytes(order="C"))


def load_event_frames(path: str | Path) -> SpikeDataset:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _EVF_HEADER.size:
        raise FormatError("truncated EVF1 header", len(blob))
    magic, n, t, h, w, c, k = _EVF_HEADER.unpack_from(blob, 0)
    if magic != EVF_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    frame_bytes = t * c * h * w
    record = 1 + frame_bytes
    offset = _EVF_HEADER.size
    expected = offset + n * record
    if len(blob) < expected:
        missing_at = offset + (len(blob) - offset) // record * record
        raise FormatError(f"truncated EVF1 body: expected {expected} bytes, got {len(blob)}", missing_at)
    if len(blob) > expected:
        raise FormatError("trailing bytes after the last EVF1 record", expected)
    body = np.frombuffer(blob, dtype=np.uint8, offset=offset, count=n * record).reshape(n, record)
    labels = body[:, 0].astype(np.int64)
    if n and labels.max() >= k:
        bad = int(np.argmax(labels >= k))
        raise FormatError(f"label {labels[bad]} >= class count {k}", offset + bad * record)
    inputs = np.clip(body[:, 1:].reshape(n, t, c, h, w).astype(DTYPE) / 255.0, 0.0, 1.0)
    return SpikeDataset(inputs, labels, k)


def _distinct_prototypes(rng: np.random.Generator, classes: int, shape: tuple[int, ...], density: float):
    while True:
        protos = (rng.random((classes, *shape)) < density).astype(DTYPE)
        flat = protos.reshape(classes, -1)
        if len({row.tobytes() for row in flat}) == classes:
            return protos


def synth_pattern_task(
    classes: int,
    neurons: int,
    T: int,
    noise: float,
    seed: int,
    samples: int = 1000,
    density: float = 0.2,
) -> SpikeDataset:
    """Noisy copies of one random ``(T, neurons)`` prototype raster per class.

    Every spike bit is flipped independently with probability ``noise``.
    Labels are balanced and shuffled.
    """
    if classes > neurons:
        raise ConfigError("need at least as many neurons as classes")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f"noise must be a probability, got {noise}")
    rng = np.random.default_rng(seed)
    protos = _distinct_prototypes(rng, classes, (T, neurons), density)
    labels = rng.permutation(np.arange(samples) % classes)
    flips = rng.random((samples, T, neurons)) < noise
    inputs = np.abs(protos[labels] - flips.astype(DTYPE))
    return SpikeDataset(inputs, labels.astype(np.int64), classes)


def _bar_pattern(kind: int, size: int, phase: int, period: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size]
    coord = (y, x, y + x, y - x + size)[kind % 4]
    return (((coord + phase) // (period // 2)) % 2 == 0).astype(DTYPE)


def synth_frame_task(
    classes: int,
    size: int,
    T: int,
    noise: float,
    seed: int,
    samples: int = 800,
    period: int = 4,
) -> SpikeDataset:
    """Oriented stripe frames (horizontal, vertical, two diagonals) with random
    phase; each time step is an independent event frame with bit-flip noise."""
    if not 2 <= classes <= 4:
        raise ConfigError("the frame task supports 2 to 4 classes")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(samples) % classes)
    phases = rng.integers(0, period, size=samples)
    frames = np.stack([_bar_pattern(k, size, p, period) for k, p in zip(labels, phases)])
    inputs = np.repeat(frames[:, None, None], T, axis=1)
    flips = rng.random(inputs.shape) < noise
    inputs = np.abs(inputs - flips.astype(DTYPE))
    return SpikeDataset(inputs, labels.astype(np.int64), classes)


def parse_source(source: str) -> tuple[str, tuple]:
    """``synth:CxNxT``, ``frames:CxSIZExT`` or ``evf:PATH``."""
    kind, _, rest = source.partition(":")
    if kind in ("synth", "frames"):
        try:
            dims = tuple(int(v) for v in rest.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"bad dataset source {source!r}") from exc
        if len(dims) != 3 or min(dims) < 1:
            raise ConfigError(f"bad dataset source {source!r}")
        return kind, dims
    if kind == "evf" and rest:
        return kind, (rest,)
    raise ConfigError(f"unknown dataset source {source!r}")


def load_source(source: str, noise: float, samples: int, seed: int) -> SpikeDataset:
    kind, args = parse_source(source)
    if kind == "synth":
        classes, neurons, steps = args
        return synth_pattern_task(classes, neurons, steps, noise, seed, samples)
    if kind == "frames":
        classes, size, steps = args
        return synth_frame_task(classes, size, steps, noise, seed, samples)
    return load_event_frames(args[0])

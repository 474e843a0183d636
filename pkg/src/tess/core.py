"""Numeric substrate: LIF dynamics, the triangular secondary activation, and
the dense/convolutional kernels used by the forward pass and the local
weight updates.

Tensors are plain ``numpy.ndarray`` objects in float64, C (row-major) order.
Functions never mutate their arguments.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tess.errors import ConfigError, NumericError, ShapeError

DTYPE = np.float64


@dataclass(frozen=True)
class LifParams:
    """Leak factor, firing threshold and amplitude of the triangular bump."""

    gamma: float = 0.5
    v_th: float = 0.6
    psi_amplitude: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.v_th > 0.0:
            raise ConfigError(f"v_th must be positive, got {self.v_th}")
        if not self.psi_amplitude > 0.0:
            raise ConfigError(f"psi_amplitude must be positive, got {self.psi_amplitude}")


@dataclass(frozen=True)
class LifLayerState:
    """Membrane potentials ``u`` and the spikes emitted on the previous step."""

    u: np.ndarray
    o_prev: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.o_prev.shape:
            raise ShapeError(f"u {self.u.shape} and o_prev {self.o_prev.shape} differ")

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> LifLayerState:
        return cls(np.zeros(shape, DTYPE), np.zeros(shape, DTYPE))

    @property
    def scalars(self) -> int:
        return self.u.size + self.o_prev.size


@dataclass
class OpCounter:
    """Instrumentation for cost-model checks.

    ``lsg_macs`` counts multiply-accumulates spent generating learning signals
    (per sample). ``lif_steps`` counts per-sample LIF updates keyed by layer.
    """

    lsg_macs: int = 0
    lif_steps: Counter = field(default_factory=Counter)


def _check_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite values")


def heaviside(x: np.ndarray) -> np.ndarray:
    """Strict step: 1 where ``x > 0``, else 0 (so exactly-at-threshold is silent)."""
    return (np.asarray(x) > 0).astype(DTYPE)


def lif_step(
    state: LifLayerState, synaptic_input: np.ndarray, params: LifParams
) -> tuple[LifLayerState, np.ndarray]:
    """Advance one LIF step.

    ``synaptic_input`` is the already weighted sum of presynaptic activity.
    Subtractive reset uses the spikes from the previous step.
    """
    synaptic_input = np.asarray(synaptic_input, dtype=DTYPE)
    if synaptic_input.shape != state.u.shape:
        raise ShapeError(
            f"synaptic input {synaptic_input.shape} does not match state {state.u.shape}"
        )
    _check_finite("synaptic input", synaptic_input)
    u = params.gamma * (state.u - params.v_th * state.o_prev) + synaptic_input
    spikes = heaviside(u - params.v_th)
    return LifLayerState(u, spikes), spikes


def psi(u: np.ndarray, params: LifParams) -> np.ndarray:
    """Triangular secondary activation centred on the threshold."""
    u = np.asarray(u, dtype=DTYPE)
    return params.psi_amplitude * np.maximum(1.0 - np.abs(u - params.v_th), 0.0)


def smooth_spike(u: np.ndarray, params: LifParams) -> np.ndarray:
    """Antiderivative of :func:`psi`, rising from 0 to ``psi_amplitude``.

    Used as a differentiable stand-in for the step so finite differences can
    check surrogate-gradient recursions; its exact derivative is ``psi``.
    """
    x = np.asarray(u, dtype=DTYPE) - params.v_th
    a = params.psi_amplitude
    left = 0.5 * (x + 1.0) ** 2
    right = 0.5 + x - 0.5 * x * x
    out = np.where(x <= 0.0, left, right)
    out = np.where(x <= -1.0, 0.0, out)
    out = np.where(x >= 1.0, 1.0, out)
    return a * out


def matvec(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``w @ x`` for a single vector or the batched form ``x @ w.T``."""
    w = np.asarray(w, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"cannot multiply {w.shape} by {x.shape}")
    if x.ndim == 1:
        return w @ x
    return x @ w.T


def outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Outer product; for 2-D inputs the batch axis is summed out."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim == 1 and b.ndim == 1:
        return np.outer(a, b)
    if a.ndim == 2 and b.ndim == 2 and a.shape[0] == b.shape[0]:
        return a.T @ b
    raise ShapeError(f"cannot form outer product of {a.shape} and {b.shape}")


@dataclass(frozen=True)
class Conv2dGeometry:
    """Square-kernel, zero-padded convolution with stride 1 or 2."""

    in_channels: int
    out_channels: int
    kernel: int
    in_height: int
    in_width: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ConfigError(f"only stride 1 or 2 is supported, got {self.stride}")
        if self.kernel < 1 or self.padding < 0:
            raise ConfigError("kernel must be >= 1 and padding >= 0")
        if self.out_height < 1 or self.out_width < 1:
            raise ConfigError("kernel does not fit the padded input")

    @property
    def out_height(self) -> int:
        return (self.in_height + 2 * self.padding - self.kernel) // self.stride + 1

    @property
    def out_width(self) -> int:
        return (self.in_width + 2 * self.padding - self.kernel) // self.stride + 1

    @property
    def in_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.in_height, self.in_width)

    @property
    def out_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.out_height, self.out_width)

    @property
    def kernel_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel * self.kernel


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ShapeError(f"expected {ndim - 1}-D or {ndim}-D input, got shape {x.shape}")
    return x, False


def _patches(x: np.ndarray, geometry: Conv2dGeometry) -> np.ndarray:
    # (B, C, H, W) -> (B, Ho, Wo, C, k, k)
    if x.shape[1:] != geometry.in_shape:
        raise ShapeError(f"input {x.shape[1:]} does not match geometry {geometry.in_shape}")
    p = geometry.padding
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    k, s = geometry.kernel, geometry.stride
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    win = win[:, :, : geometry.out_height, : geometry.out_width]
    return win.transpose(0, 2, 3, 1, 4, 5)


def conv2d_forward(w: np.ndarray, x: np.ndarray, geometry: Conv2dGeometry) -> np.ndarray:
    """Cross-correlate ``x`` (``(C,H,W)`` or ``(B,C,H,W)``) with kernel ``w``."""
    w = np.asarray(w, dtype=DTYPE)
    if w.shape != geometry.kernel_shape:
        raise ShapeError(f"kernel {w.shape} does not match geometry {geometry.kernel_shape}")
    xb, squeeze = _batched(x, 4)
    out = np.tensordot(_patches(xb, geometry), w, axes=([3, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    return out[0] if squeeze else out


def conv2d_update_from_outer(
    post_factor: np.ndarray, pre_trace: np.ndarray, geometry: Conv2dGeometry
) -> np.ndarray:
    """Kernel-shaped update under weight sharing.

    Every kernel weight accumulates the post factor at each output position
    times the pre-trace value it touched there. Batched inputs are summed.
    """
    pb, squeeze_p = _batched(post_factor, 4)
    qb, squeeze_q = _batched(pre_trace, 4)
    if squeeze_p != squeeze_q or pb.shape[0] != qb.shape[0]:
        raise ShapeError(f"post {np.shape(post_factor)} and pre {np.shape(pre_trace)} disagree")
    if pb.shape[1:] != geometry.out_shape:
        raise ShapeError(f"post factor {pb.shape[1:]} does not match {geometry.out_shape}")
    patches = _patches(qb, geometry)
    return np.tensordot(pb, patches, axes=([0, 2, 3], [0, 1, 2]))


def avgpool2d(x: np.ndarray, size: int) -> np.ndarray:
    """Non-overlapping average pooling over the two trailing axes."""
    x = np.asarray(x, dtype=DTYPE)
    h, w = x.shape[-2:]
    if h % size or w % size:
        raise ShapeError(f"spatial extent {(h, w)} not divisible by pool size {size}")
    lead = x.shape[:-2]
    return x.reshape(*lead, h // size, size, w // size, size).mean(axis=(-3, -1))

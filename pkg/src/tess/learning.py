"""Per-layer update engine, optimiser and learning-rate schedule.

:func:`tess_layer_step` is the loop body run for one layer at one time step.
All arrays carry a leading batch axis; the accumulated update is the sum over
the batch (callers divide by the batch size before applying it).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from tess.core import (
    DTYPE,
    Conv2dGeometry,
    LifLayerState,
    LifParams,
    OpCounter,
    conv2d_forward,
    conv2d_update_from_outer,
    lif_step,
    psi,
)
from tess.errors import ConfigError, ShapeError
from tess.lsg import BasisMatrix, learning_signal
from tess.traces import TraceParams, TraceState, eligibility_post, eligibility_pre, update_h, update_q

DIRECTIONS = ("descent", "as-written")


@dataclass(frozen=True)
class LayerRule:
    """Everything a layer needs to learn, besides its weights and state.

    ``geometry`` is ``None`` for dense layers. Learning signals are generated
    for steps ``t > t_l`` (``t`` is 1-based), i.e. ``T - t_l`` steps.
    """

    lif: LifParams
    trace: TraceParams
    basis: BasisMatrix
    t_l: int = 0
    task: str = "classification"
    geometry: Conv2dGeometry | None = None
    index: int = 0


@dataclass(frozen=True)
class LayerUpdateAccumulator:
    delta_w: np.ndarray
    t_l: int = 0
    step_count: int = 0

    @classmethod
    def zeros(cls, weight_shape: tuple[int, ...], t_l: int = 0) -> LayerUpdateAccumulator:
        return cls(np.zeros(weight_shape, DTYPE), t_l, 0)


def synaptic_input(weights: np.ndarray, x: np.ndarray, geometry: Conv2dGeometry | None) -> np.ndarray:
    if geometry is None:
        if x.ndim != 2 or x.shape[1] != weights.shape[1]:
            raise ShapeError(f"dense input {x.shape} does not match weights {weights.shape}")
        return x @ weights.T
    return conv2d_forward(weights, x, geometry)


def weight_update(post: np.ndarray, pre: np.ndarray, geometry: Conv2dGeometry | None) -> np.ndarray:
    """Batch-summed outer product (dense) or patch correlation (conv)."""
    if geometry is None:
        return post.T @ pre
    return conv2d_update_from_outer(post, pre, geometry)


def tess_layer_step(
    weights: np.ndarray,
    lif_state: LifLayerState,
    trace_state: TraceState,
    acc: LayerUpdateAccumulator,
    input_spikes: np.ndarray,
    target: np.ndarray,
    t: int,
    rule: LayerRule,
    counter: OpCounter | None = None,
) -> tuple[LifLayerState, TraceState, LayerUpdateAccumulator, np.ndarray]:
    """Run one time step of the local rule for a single layer.

    Order: h from psi(u[t-1]); LIF integrate-and-fire; q from the current
    input; then, inside the learning window, the learning signal gates the
    causal and non-causal eligibility factors into ``acc``.
    """
    if t < 1:
        raise ConfigError(f"time steps are 1-based, got t={t}")
    x = np.asarray(input_spikes, dtype=DTYPE)
    trace_state = update_h(trace_state, psi(lif_state.u, rule.lif), rule.trace)
    lif_state, spikes = lif_step(lif_state, synaptic_input(weights, x, rule.geometry), rule.lif)
    trace_state = update_q(trace_state, x, rule.trace)
    if counter is not None:
        counter.lif_steps[rule.index] += spikes.shape[0]

    if t <= rule.t_l:
        return lif_state, trace_state, acc, spikes

    batch = spikes.shape[0]
    signal = learning_signal(
        rule.basis, spikes.reshape(batch, -1), target, rule.task, counter
    )
    m = signal.m.reshape(spikes.shape)
    pre = eligibility_pre(psi(lif_state.u, rule.lif), trace_state.q, rule.trace)
    delta = weight_update(m * pre.post, pre.pre, rule.geometry)
    post = eligibility_post(trace_state.h, x, rule.trace)
    if post is not None:
        delta = delta + weight_update(m * post.post, post.pre, rule.geometry)
    acc = LayerUpdateAccumulator(acc.delta_w + delta, acc.t_l, acc.step_count + 1)
    return lif_state, trace_state, acc, spikes


def warn_if_empty_window(t_l: int, steps: int) -> None:
    if t_l >= steps:
        warnings.warn(
            f"t_l={t_l} leaves no learning steps in a sequence of length {steps}",
            RuntimeWarning,
            stacklevel=2,
        )


def apply_update(
    weights: np.ndarray, acc: np.ndarray, learning_rate: float, direction: str = "descent"
) -> np.ndarray:
    """Plain gradient step. ``as-written`` adds the accumulated update instead."""
    if direction == "descent":
        return weights - learning_rate * acc
    if direction == "as-written":
        return weights + learning_rate * acc
    raise ConfigError(f"unknown update direction {direction!r}")


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> AdamState:
        return cls(np.zeros(shape, DTYPE), np.zeros(shape, DTYPE), 0)


def adam_step(state: AdamState, grads: np.ndarray, hyper: AdamHyper) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected Adam; returns the delta to add to the parameters."""
    step = state.step + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grads
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grads * grads
    m_hat = m / (1.0 - hyper.beta1**step)
    v_hat = v / (1.0 - hyper.beta2**step)
    delta = -hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return AdamState(m, v, step), delta


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` once the monitored metric has
    failed to improve for ``patience`` consecutive epochs."""

    lr: float
    factor: float = 0.5
    patience: int = 5
    best: float | None = None
    bad_epochs: int = 0

    def step(self, metric: float) -> float:
        if self.best is None or metric > self.best:
            self.best = metric
            self.bad_epochs = 0
            return self.lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr *= self.factor
            self.bad_epochs = 0
        return self.lr


def plateau_scheduler(state: PlateauScheduler, val_metric: float) -> float:
    return state.step(val_metric)


class LayerOptimizer:
    """Applies batch-averaged accumulated updates to a list of weight tensors."""

    def __init__(
        self,
        shapes: list[tuple[int, ...]],
        hyper: AdamHyper = AdamHyper(),
        name: str = "adam",
        direction: str = "descent",
    ):
        if name not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {name!r}")
        if direction not in DIRECTIONS:
            raise ConfigError(f"unknown update direction {direction!r}")
        self.hyper = hyper
        self.name = name
        self.direction = direction
        self.states = [AdamState.zeros(s) for s in shapes]

    @property
    def lr(self) -> float:
        return self.hyper.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.hyper = replace(self.hyper, lr=value)

    def step(self, weights: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if self.name == "sgd":
            return [apply_update(w, g, self.hyper.lr, self.direction) for w, g in zip(weights, grads)]
        sign = 1.0 if self.direction == "descent" else -1.0
        out = []
        for i, (w, g) in enumerate(zip(weights, grads)):
            self.states[i], delta = adam_step(self.states[i], sign * g, self.hyper)
            out.append(w + delta)
        return out

"""Backpropagation-through-time reference for tiny dense networks.

The loss is cross-entropy on the time-summed head logits ``sum_t B_head o[t]``.
Two spike functions are available:

* ``"surrogate"``: Heaviside forward, ``psi`` in place of its derivative (the
  usual surrogate-gradient BPTT).
* ``"smooth"``: the forward uses :func:`tess.core.smooth_spike`, whose exact
  derivative is ``psi``; the same backward recursion is then the exact
  gradient of the forward, which finite differences can check.
"""

from __future__ import annotations

import numpy as np

from tess.core import DTYPE, LifParams, heaviside, psi, smooth_spike
from tess.errors import ConfigError, ShapeError
from tess.lsg import softmax
from tess.network import Network, WeightedLayer

MAX_NEURONS = 64
MAX_STEPS = 10
SPIKE_FUNCTIONS = ("surrogate", "smooth")


def membrane_jacobian(u: np.ndarray, lif: LifParams) -> np.ndarray:
    """Diagonal of ``du[t+1]/du[t]`` through leak and subtractive reset."""
    return lif.gamma * (1.0 - lif.v_th * psi(u, lif))


def _check_oracle_scope(net: Network, steps: int) -> list[WeightedLayer]:
    if len(net.weighted) != len(net.layers) or any(l.kind != "dense" for l in net.weighted):
        raise ConfigError("the BPTT oracle only handles all-dense networks")
    neurons = sum(layer.shape.n_out for layer in net.weighted)
    if neurons > MAX_NEURONS:
        raise ConfigError(f"BPTT oracle limited to {MAX_NEURONS} neurons, network has {neurons}")
    if steps > MAX_STEPS:
        raise ConfigError(f"BPTT oracle limited to T <= {MAX_STEPS}, got {steps}")
    return net.weighted


def _spike(u: np.ndarray, lif: LifParams, spike_fn: str) -> np.ndarray:
    if spike_fn == "surrogate":
        return heaviside(u - lif.v_th)
    if spike_fn == "smooth":
        return smooth_spike(u, lif)
    raise ConfigError(f"unknown spike function {spike_fn!r}")


def _forward(layers, weights, x_seq, spike_fn):
    steps = x_seq.shape[0]
    us = [np.zeros((steps, w.shape[0]), DTYPE) for w in weights]
    os_ = [np.zeros((steps, w.shape[0]), DTYPE) for w in weights]
    for i, (layer, w) in enumerate(zip(layers, weights)):
        lif = layer.rule.lif
        inp = x_seq if i == 0 else os_[i - 1]
        u_prev = np.zeros(w.shape[0], DTYPE)
        o_prev = np.zeros(w.shape[0], DTYPE)
        for t in range(steps):
            u = lif.gamma * (u_prev - lif.v_th * o_prev) + w @ inp[t]
            o = _spike(u, lif, spike_fn)
            us[i][t], os_[i][t] = u, o
            u_prev, o_prev = u, o
    return us, os_


def _prepare(net, inputs, target, weights):
    x_seq = np.asarray(inputs, dtype=DTYPE).reshape(len(inputs), -1)
    layers = _check_oracle_scope(net, x_seq.shape[0])
    weights = [np.asarray(w, DTYPE) for w in (weights if weights is not None else net.weights)]
    target = np.asarray(target, dtype=DTYPE)
    if target.shape != (net.num_classes,):
        raise ShapeError(f"target {target.shape} vs ({net.num_classes},)")
    return layers, weights, x_seq, target


def bptt_loss(
    net: Network,
    inputs: np.ndarray,
    target: np.ndarray,
    spike_fn: str = "smooth",
    weights: list[np.ndarray] | None = None,
) -> float:
    """Cross-entropy of ``softmax(sum_t B_head o_head[t])`` against ``target``."""
    layers, weights, x_seq, target = _prepare(net, inputs, target, weights)
    _, os_ = _forward(layers, weights, x_seq, spike_fn)
    logits = os_[-1].sum(axis=0) @ layers[-1].rule.basis.b.T
    return float(-(target * np.log(softmax(logits))).sum())


def bptt_oracle_gradients(
    net: Network,
    inputs: np.ndarray,
    target: np.ndarray,
    spike_fn: str = "surrogate",
    weights: list[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """Exact unrolled gradients ``dL/dW`` for every layer of a small dense net.

    ``inputs`` is ``(T, n_in)``, ``target`` one-hot ``(C,)``.
    """
    layers, weights, x_seq, target = _prepare(net, inputs, target, weights)
    steps = x_seq.shape[0]
    us, os_ = _forward(layers, weights, x_seq, spike_fn)
    head_basis = layers[-1].rule.basis.b
    logits = os_[-1].sum(axis=0) @ head_basis.T
    dlogits = softmax(logits) - target

    grads = [np.zeros_like(w) for w in weights]
    # dL/do[t] arriving from above; for the head it is the readout term.
    from_above = np.tile(dlogits @ head_basis, (steps, 1))
    for i in reversed(range(len(layers))):
        lif = layers[i].rule.lif
        inp = x_seq if i == 0 else os_[i - 1]
        surrogate = psi(us[i], lif)
        du = np.zeros_like(us[i])
        du_next = np.zeros(us[i].shape[1], DTYPE)
        for t in reversed(range(steps)):
            du[t] = from_above[t] * surrogate[t] + du_next * membrane_jacobian(us[i][t], lif)
            du_next = du[t]
        grads[i] = du.T @ inp
        from_above = du @ weights[i]
    return grads

"""Layer-local learning-signal generation.

A layer's spikes are projected onto a fixed ``C x n`` matrix, compared with
the target through softmax (classification) or identity (regression), and the
error is projected back with the transpose. Nothing crosses layer boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tess.core import DTYPE, OpCounter
from tess.errors import ConfigError, ShapeError

BASIS_KINDS = ("square-wave", "identity")
TASKS = ("classification", "regression")


@dataclass(frozen=True)
class BasisMatrix:
    b: np.ndarray
    kind: str

    @property
    def class_count(self) -> int:
        return self.b.shape[0]

    @property
    def layer_width(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class LearningSignal:
    m: np.ndarray
    err: np.ndarray


def square_wave_rows(classes: int, n: int) -> np.ndarray:
    # Row c holds c+1 full periods over the neuron index.
    j = np.arange(n)
    rows = [np.where(((j * (c + 1) * 2) // n) % 2 == 0, 1.0, -1.0) for c in range(classes)]
    return np.array(rows, dtype=DTYPE)


def build_basis(classes: int, n: int, kind: str = "square-wave") -> BasisMatrix:
    if kind == "square-wave":
        if classes < 2 or n < classes:
            raise ConfigError(f"square-wave basis needs n >= C >= 2, got C={classes}, n={n}")
        return BasisMatrix(square_wave_rows(classes, n), kind)
    if kind == "identity":
        if n != classes:
            raise ConfigError(f"identity basis needs n == C, got C={classes}, n={n}")
        return BasisMatrix(np.eye(classes, dtype=DTYPE), kind)
    raise ConfigError(f"unknown basis kind {kind!r}; expected one of {BASIS_KINDS}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def learning_signal(
    basis: BasisMatrix,
    spikes: np.ndarray,
    target: np.ndarray,
    task: str = "classification",
    counter: OpCounter | None = None,
) -> LearningSignal:
    """Compute ``m = B.T (f(B o) - y)`` for ``(n,)`` or batched ``(batch, n)`` spikes."""
    spikes = np.asarray(spikes, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    b = basis.b
    if spikes.shape[-1] != basis.layer_width:
        raise ShapeError(f"spikes of width {spikes.shape[-1]} vs basis width {basis.layer_width}")
    if target.shape[-1] != basis.class_count or target.shape[:-1] != spikes.shape[:-1]:
        raise ShapeError(f"target {target.shape} does not match spikes {spikes.shape}")
    projected = spikes @ b.T
    if task == "classification":
        err = softmax(projected) - target
    elif task == "regression":
        err = projected - target
    else:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    m = err @ b
    if counter is not None:
        samples = 1 if spikes.ndim == 1 else spikes.shape[0]
        counter.lsg_macs += 2 * basis.class_count * basis.layer_width * samples
    return LearningSignal(m, err)

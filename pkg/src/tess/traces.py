"""Forward-in-time synaptic traces and factored eligibility terms.

Each layer keeps a presynaptic trace ``q`` (shaped like the layer input) and,
only when the non-causal term is enabled, a postsynaptic trace ``h`` (shaped
like the layer output). Eligibility is never materialised as a weight-sized
buffer: it is returned as a (post, pre) factor pair whose outer product is
formed inside the update kernel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, NamedTuple

import numpy as np

from tess.core import DTYPE
from tess.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class TraceParams:
    lambda_pre: float = 0.5
    lambda_post: float = 0.2
    alpha_pre: float = 1.0
    alpha_post: float = 1.0

    def __post_init__(self):
        for name in ("lambda_pre", "lambda_post"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {value}")
        if self.alpha_post not in (-1, 0, 1):
            raise ConfigError(f"alpha_post must be -1, 0 or +1, got {self.alpha_post}")

    @property
    def tracks_post(self) -> bool:
        return self.alpha_post != 0


@dataclass(frozen=True)
class TraceState:
    """``h`` is ``None`` when the non-causal term is disabled (never allocated)."""

    q: np.ndarray
    h: np.ndarray | None = None

    @classmethod
    def zeros(
        cls, in_shape: tuple[int, ...], out_shape: tuple[int, ...], params: TraceParams
    ) -> TraceState:
        h = np.zeros(out_shape, DTYPE) if params.tracks_post else None
        return cls(np.zeros(in_shape, DTYPE), h)

    @property
    def scalars(self) -> int:
        return self.q.size + (0 if self.h is None else self.h.size)


class EligibilityFactors(NamedTuple):
    """Post- and presynaptic factors of a rank-one eligibility term."""

    post: np.ndarray
    pre: np.ndarray

    def materialize(self) -> np.ndarray:
        """Dense outer product, for single-sample dense layers (tests only)."""
        return np.outer(self.post.ravel(), self.pre.ravel())


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: {a.shape} vs {b.shape}")


def update_q(state: TraceState, input_spikes: np.ndarray, params: TraceParams) -> TraceState:
    """Low-pass filter of presynaptic activity: ``q <- lambda_pre * q + o_in``."""
    input_spikes = np.asarray(input_spikes, dtype=DTYPE)
    _same_shape(state.q, input_spikes, "q trace and input spikes")
    return TraceState(params.lambda_pre * state.q + input_spikes, state.h)


def update_h(state: TraceState, psi_prev: np.ndarray, params: TraceParams) -> TraceState:
    """``h <- lambda_post * h + psi(u[t-1])``; a no-op when ``alpha_post == 0``."""
    if not params.tracks_post:
        return state
    if state.h is None:
        raise ConfigError("alpha_post is non-zero but the h trace was never allocated")
    psi_prev = np.asarray(psi_prev, dtype=DTYPE)
    _same_shape(state.h, psi_prev, "h trace and psi")
    return TraceState(state.q, params.lambda_post * state.h + psi_prev)


def eligibility_pre(psi_now: np.ndarray, q: np.ndarray, params: TraceParams) -> EligibilityFactors:
    """Causal term: ``alpha_pre * psi(u[t])`` against the presynaptic trace."""
    return EligibilityFactors(params.alpha_pre * np.asarray(psi_now, dtype=DTYPE), q)


def eligibility_post(
    h: np.ndarray | None, input_spikes: np.ndarray, params: TraceParams
) -> EligibilityFactors | None:
    """Non-causal term, or ``None`` when it is excluded (``alpha_post == 0``)."""
    if not params.tracks_post or h is None:
        return None
    return EligibilityFactors(params.alpha_post * h, np.asarray(input_spikes, dtype=DTYPE))


class TraceRecorder:
    """Collects debug rows ``(t, layer, tensor, flat_index, value)``.

    Rows are emitted in row-major order of each tensor so two identical runs
    produce identical files.
    """

    header = ("t", "layer", "tensor", "index", "value")

    def __init__(self):
        self.rows: list[tuple[int, int, str, int, float]] = []

    def record(self, t: int, layer: int, name: str, tensor: np.ndarray) -> None:
        flat = np.ascontiguousarray(tensor).ravel()
        self.rows.extend((t, layer, name, i, float(v)) for i, v in enumerate(flat))

    def write(self, stream: IO[str]) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(self.header)
        for t, layer, name, index, value in self.rows:
            writer.writerow((t, layer, name, index, repr(value)))

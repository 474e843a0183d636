"""Layered SNN models: construction, inference and single-sweep local training.

Layer stacks are described by :class:`LayerSpec` lists. Dense and conv layers
are LIF layers with weights, a fixed projection basis and their own traces;
average-pool layers carry nothing and pass real-valued pooled spikes on.
The last weighted layer is the head and must be dense with one neuron per
class.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from tess.core import (
    DTYPE,
    Conv2dGeometry,
    LifLayerState,
    LifParams,
    OpCounter,
    avgpool2d,
    lif_step,
)
from tess.errors import ConfigError, NumericError, ShapeError
from tess.learning import (
    LayerOptimizer,
    LayerRule,
    LayerUpdateAccumulator,
    synaptic_input,
    tess_layer_step,
    warn_if_empty_window,
)
from tess.lsg import build_basis, softmax
from tess.traces import TraceParams, TraceRecorder, TraceState

LAYER_KINDS = ("dense", "conv", "avgpool")
UPDATE_MODES = ("per-sequence", "per-step")
PRESETS = ("toy-dense", "toy-conv", "vgg9-paper")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_features: int = 0
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    pool: int = 2
    basis: str | None = None
    lif: LifParams | None = None
    trace: TraceParams | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "dense":
            return f"dense:{self.out_features}"
        if self.kind == "conv":
            return f"conv:{self.out_channels}:{self.kernel}:{self.stride}:{self.padding}"
        return f"avgpool:{self.pool}"


def parse_layers(text: str) -> list[LayerSpec]:
    """Parse ``dense:128,conv:8:3:1:1,avgpool:2`` style layer lists.

    Conv fields are ``channels[:kernel[:stride[:padding]]]``.
    """
    specs = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        kind, *args = item.split(":")
        try:
            nums = [int(a) for a in args]
        except ValueError as exc:
            raise ConfigError(f"bad layer description {item!r}") from exc
        if kind == "dense" and len(nums) == 1:
            specs.append(LayerSpec("dense", out_features=nums[0]))
        elif kind == "conv" and 1 <= len(nums) <= 4:
            defaults = [0, 3, 1, 1]
            defaults[: len(nums)] = nums
            c, k, s, p = defaults
            specs.append(LayerSpec("conv", out_channels=c, kernel=k, stride=s, padding=p))
        elif kind == "avgpool" and len(nums) == 1:
            specs.append(LayerSpec("avgpool", pool=nums[0]))
        else:
            raise ConfigError(f"bad layer description {item!r}")
    return specs


def preset_specs(name: str, num_classes: int, hidden: int = 128, input_size: int = 32) -> list[LayerSpec]:
    """Named reference architectures.

    ``vgg9-paper`` is a geometry reconstruction used for cost modelling only:
    64C3-128C3-AP2-256C3-256C3-AP2-512C3-512C3-AP2-512C3-512C3-GAP-FC.
    """
    if name == "toy-dense":
        return [LayerSpec("dense", out_features=hidden), LayerSpec("dense", out_features=num_classes)]
    if name == "toy-conv":
        return [
            LayerSpec("conv", out_channels=8, kernel=3, stride=1, padding=1),
            LayerSpec("conv", out_channels=16, kernel=3, stride=2, padding=1),
            LayerSpec("avgpool", pool=2),
            LayerSpec("dense", out_features=num_classes),
        ]
    if name == "vgg9-paper":
        def conv(c):
            return LayerSpec("conv", out_channels=c, kernel=3, stride=1, padding=1)

        pool = LayerSpec("avgpool", pool=2)
        return [
            conv(64), conv(128), pool,
            conv(256), conv(256), pool,
            conv(512), conv(512), pool,
            conv(512), conv(512),
            LayerSpec("avgpool", pool=input_size // 8),
            LayerSpec("dense", out_features=num_classes),
        ]
    raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")


@dataclass(frozen=True)
class LayerShape:
    """Resolved geometry of one layer in a stack."""

    spec: LayerSpec
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    geometry: Conv2dGeometry | None = None

    @property
    def weighted(self) -> bool:
        return self.spec.kind != "avgpool"

    @property
    def n_in(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def n_out(self) -> int:
        return int(np.prod(self.out_shape))

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.geometry is not None:
            return self.geometry.kernel_shape
        return (self.n_out, self.n_in)

    @property
    def fan_in(self) -> int:
        return self.geometry.fan_in if self.geometry is not None else self.n_in

    @property
    def connections(self) -> int:
        """Output activations times kernel fan-in (equals ``n_out * n_in`` for dense)."""
        return self.n_out * self.fan_in


def infer_shapes(input_shape: tuple[int, ...], specs: list[LayerSpec]) -> list[LayerShape]:
    shapes = []
    current = tuple(input_shape)
    for spec in specs:
        if spec.kind == "dense":
            if spec.out_features < 1:
                raise ConfigError("dense layer needs out_features >= 1")
            out = (spec.out_features,)
            shapes.append(LayerShape(spec, (int(np.prod(current)),), out))
        elif spec.kind == "conv":
            if len(current) != 3:
                raise ShapeError(f"conv layer needs a (C, H, W) input, got {current}")
            geometry = Conv2dGeometry(
                current[0], spec.out_channels, spec.kernel, current[1], current[2],
                spec.stride, spec.padding,
            )
            out = geometry.out_shape
            shapes.append(LayerShape(spec, current, out, geometry))
        else:
            if len(current) != 3 or current[1] % spec.pool or current[2] % spec.pool:
                raise ShapeError(f"cannot pool {current} by {spec.pool}")
            out = (current[0], current[1] // spec.pool, current[2] // spec.pool)
            shapes.append(LayerShape(spec, current, out))
        current = out
    return shapes


@dataclass
class WeightedLayer:
    shape: LayerShape
    weights: np.ndarray
    rule: LayerRule

    @property
    def kind(self) -> str:
        return self.shape.spec.kind


@dataclass
class PoolLayer:
    shape: LayerShape


class Network:
    """A feed-forward LIF stack trained with layer-local learning signals."""

    def __init__(
        self,
        input_shape: tuple[int, ...],
        specs: list[LayerSpec],
        num_classes: int,
        lif: LifParams = LifParams(),
        trace: TraceParams = TraceParams(),
        t_l: int = 0,
        task: str = "classification",
        seed: int | np.random.Generator = 0,
        hidden_basis: str = "square-wave",
        head_basis: str = "identity",
    ):
        if not specs:
            raise ConfigError("a network needs at least one layer")
        self.input_shape = tuple(input_shape)
        self.specs = list(specs)
        self.num_classes = num_classes
        self.t_l = t_l
        self.task = task
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        shapes = infer_shapes(self.input_shape, self.specs)
        head_index = max(i for i, s in enumerate(shapes) if s.weighted)
        head = shapes[head_index]
        if head.spec.kind != "dense" or head.n_out != num_classes:
            raise ConfigError("the last weighted layer must be dense with one unit per class")

        self.layers: list[WeightedLayer | PoolLayer] = []
        weighted_index = 0
        for i, shape in enumerate(shapes):
            if not shape.weighted:
                self.layers.append(PoolLayer(shape))
                continue
            spec = shape.spec
            kind = spec.basis or (head_basis if i == head_index else hidden_basis)
            rule = LayerRule(
                lif=spec.lif or lif,
                trace=spec.trace or trace,
                basis=build_basis(num_classes, shape.n_out, kind),
                t_l=t_l,
                task=task,
                geometry=shape.geometry,
                index=weighted_index,
            )
            bound = np.sqrt(1.0 / shape.fan_in)
            weights = rng.uniform(-bound, bound, size=shape.weight_shape)
            self.layers.append(WeightedLayer(shape, weights, rule))
            weighted_index += 1

    @property
    def weighted(self) -> list[WeightedLayer]:
        return [layer for layer in self.layers if isinstance(layer, WeightedLayer)]

    @property
    def head(self) -> WeightedLayer:
        return self.weighted[-1]

    @property
    def weights(self) -> list[np.ndarray]:
        return [layer.weights for layer in self.weighted]

    def set_weights(self, weights: list[np.ndarray]) -> None:
        layers = self.weighted
        if len(weights) != len(layers):
            raise ShapeError(f"expected {len(layers)} weight tensors, got {len(weights)}")
        for layer, w in zip(layers, weights):
            if w.shape != layer.weights.shape:
                raise ShapeError(f"weight shape {w.shape} vs {layer.weights.shape}")
            layer.weights = np.asarray(w, dtype=DTYPE)

    def trace_scalars(self) -> int:
        """Per-sample learning-state allocation (q plus h where enabled)."""
        return sum(
            layer.shape.n_in + (layer.shape.n_out if layer.rule.trace.tracks_post else 0)
            for layer in self.weighted
        )

    def inference_scalars(self) -> int:
        """Per-sample inference state: membrane potential and spike buffer per neuron."""
        return sum(2 * layer.shape.n_out for layer in self.weighted)


@dataclass
class NetworkState:
    lif: list[LifLayerState]
    traces: list[TraceState]
    accs: list[LayerUpdateAccumulator]

    @classmethod
    def zeros(cls, net: Network, batch: int) -> NetworkState:
        lif, traces, accs = [], [], []
        for layer in net.weighted:
            s = layer.shape
            lif.append(LifLayerState.zeros((batch, *s.out_shape)))
            traces.append(TraceState.zeros((batch, *s.in_shape), (batch, *s.out_shape), layer.rule.trace))
            accs.append(LayerUpdateAccumulator.zeros(layer.weights.shape, layer.rule.t_l))
        return cls(lif, traces, accs)

    def trace_scalars(self) -> int:
        return sum(t.scalars for t in self.traces)

    def inference_scalars(self) -> int:
        return sum(s.scalars for s in self.lif)


def _batched_inputs(net: Network, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=DTYPE)
    if x.shape[-len(net.input_shape):] != net.input_shape:
        raise ShapeError(f"input frames {x.shape} do not end with {net.input_shape}")
    if x.ndim == len(net.input_shape) + 1:
        x = x[None]
    if x.ndim != len(net.input_shape) + 2:
        raise ShapeError(f"expected (batch, T, *{net.input_shape}) inputs, got {x.shape}")
    return x


def _layer_input(layer: WeightedLayer, x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1) if layer.kind == "dense" else x


def head_scores(net: Network, head_spikes: np.ndarray) -> np.ndarray:
    return softmax(head_spikes @ net.head.rule.basis.b.T)


def cross_entropy(scores_sum: np.ndarray, labels: np.ndarray, steps: int) -> np.ndarray:
    probs = scores_sum / steps if steps else np.full_like(scores_sum, 1.0 / scores_sum.shape[-1])
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(picked, 1e-12))


@dataclass
class ForwardResult:
    class_scores: np.ndarray
    predictions: np.ndarray
    spike_counts: list[np.ndarray]
    spike_record: list[np.ndarray] | None = None


def forward_sequence(
    net: Network,
    inputs: np.ndarray,
    record: bool = False,
    counter: OpCounter | None = None,
) -> ForwardResult:
    """Inference over a whole sequence.

    Class scores are ``softmax(B_head o_head[t])`` summed over time; the
    prediction is their argmax.
    """
    x_seq = _batched_inputs(net, inputs)
    batch, steps = x_seq.shape[:2]
    state = NetworkState.zeros(net, batch)
    scores = np.zeros((batch, net.num_classes), DTYPE)
    counts = [np.zeros((batch, *layer.shape.out_shape), DTYPE) for layer in net.weighted]
    history: list[list[np.ndarray]] = [[] for _ in net.weighted]
    for t in range(steps):
        x = x_seq[:, t]
        for layer in net.layers:
            if isinstance(layer, PoolLayer):
                x = avgpool2d(x, layer.shape.spec.pool)
                continue
            i = layer.rule.index
            drive = synaptic_input(layer.weights, _layer_input(layer, x), layer.rule.geometry)
            state.lif[i], x = lif_step(state.lif[i], drive, layer.rule.lif)
            if counter is not None:
                counter.lif_steps[i] += batch
            counts[i] += x
            if record:
                history[i].append(x)
        if steps:
            scores += head_scores(net, x)
    if steps == 0:
        scores[:] = 1.0 / net.num_classes
    spike_record = [np.stack(h) for h in history] if record and steps else None
    return ForwardResult(scores, scores.argmax(axis=1), counts, spike_record)


@dataclass
class TrainResult:
    updates: list[np.ndarray]
    update_norms: list[float]
    class_scores: np.ndarray
    loss: float
    correct: int
    state: NetworkState = field(repr=False)


StepHook = Callable[[int, Network], None]


def train_sequence(
    net: Network,
    inputs: np.ndarray,
    targets: np.ndarray,
    optimizer: LayerOptimizer | None = None,
    update_mode: str = "per-sequence",
    counter: OpCounter | None = None,
    step_hook: StepHook | None = None,
    recorder: TraceRecorder | None = None,
) -> TrainResult:
    """One forward sweep over the sequence with every layer learning locally.

    ``targets`` are one-hot ``(batch, C)``. ``updates`` holds the batch-summed
    accumulated update of each weighted layer. With an optimizer the batch
    mean is applied once at the end (``per-sequence``) or after every
    learning step (``per-step``). ``step_hook(t, net)`` runs after step ``t``.
    """
    if update_mode not in UPDATE_MODES:
        raise ConfigError(f"unknown update mode {update_mode!r}")
    x_seq = _batched_inputs(net, inputs)
    targets = np.asarray(targets, dtype=DTYPE)
    batch, steps = x_seq.shape[:2]
    if targets.shape != (batch, net.num_classes):
        raise ShapeError(f"targets {targets.shape} vs expected {(batch, net.num_classes)}")
    warn_if_empty_window(net.t_l, steps)
    state = NetworkState.zeros(net, batch)
    totals = [np.zeros(layer.weights.shape, DTYPE) for layer in net.weighted]
    scores = np.zeros((batch, net.num_classes), DTYPE)

    for t in range(1, steps + 1):
        x = x_seq[:, t - 1]
        for layer in net.layers:
            if isinstance(layer, PoolLayer):
                x = avgpool2d(x, layer.shape.spec.pool)
                continue
            i = layer.rule.index
            state.lif[i], state.traces[i], state.accs[i], x = tess_layer_step(
                layer.weights, state.lif[i], state.traces[i], state.accs[i],
                _layer_input(layer, x), targets, t, layer.rule, counter,
            )
            if recorder is not None:
                recorder.record(t, i, "u", state.lif[i].u)
                recorder.record(t, i, "q", state.traces[i].q)
                if state.traces[i].h is not None:
                    recorder.record(t, i, "h", state.traces[i].h)
        scores += head_scores(net, x)
        if update_mode == "per-step" and t > net.t_l:
            step_updates = [acc.delta_w for acc in state.accs]
            for i, u in enumerate(step_updates):
                totals[i] += u
            if optimizer is not None:
                _apply(net, optimizer, step_updates, batch, t)
            state.accs = [LayerUpdateAccumulator(np.zeros_like(a.delta_w), a.t_l, a.step_count)
                          for a in state.accs]
        if step_hook is not None:
            step_hook(t, net)

    if update_mode == "per-sequence":
        totals = [acc.delta_w for acc in state.accs]
        if optimizer is not None and steps > net.t_l:
            _apply(net, optimizer, totals, batch, steps)

    labels = targets.argmax(axis=1)
    loss = float(cross_entropy(scores, labels, steps).sum())
    if steps == 0:
        scores[:] = 1.0 / net.num_classes
    correct = int((scores.argmax(axis=1) == labels).sum())
    norms = [float(np.linalg.norm(u)) for u in totals]
    return TrainResult(totals, norms, scores, loss, correct, state)


def _apply(net: Network, optimizer: LayerOptimizer, updates: list[np.ndarray], batch: int, t: int) -> None:
    # divergence surfaces as NumericError below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        new = optimizer.step(net.weights, [u / batch for u in updates])
    for i, w in enumerate(new):
        if not np.all(np.isfinite(w)):
            raise NumericError(f"non-finite weights in layer {i} after update at step {t}")
    net.set_weights(new)

"""Analytical MAC and memory accounting for BPTT, S-TLLR and the local rule.

Widths ``n[0..L]`` count neurons per layer (``n[0]`` is the input). Conv
layers contribute their neuron count to ``n`` and their connection count
(output activations times kernel fan-in) to the MAC terms that would be
``n[l] * n[l-1]`` for a dense layer. Element-wise operations are not counted.

Memory is reported two ways:

* ``formula``: the closed forms ``T * sum(n)``, ``2 * sum(n)`` (``sum(n)``
  for the local rule without the non-causal trace), summed over ``l = 0..L``;
* ``allocated``: the exact trace allocation of the local rule, one presynaptic
  trace per layer input and one postsynaptic trace per layer output.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from tess.errors import ConfigError
from tess.network import LayerSpec, Network, infer_shapes

RULES = ("bptt", "s-tllr", "tess")
MB = 1_000_000


@dataclass(frozen=True)
class ArchDescriptor:
    widths: tuple[int, ...]
    T: int
    t_l: int = 0
    C: int = 10
    connections: tuple[int, ...] = ()
    input_widths: tuple[int, ...] = ()
    name: str = ""

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError("an architecture needs an input width and at least one layer")
        if any(int(n) < 1 for n in self.widths) or self.T < 1 or self.C < 1:
            raise ConfigError("widths, T and C must be positive integers")
        if not 0 <= self.t_l <= self.T:
            raise ConfigError(f"t_l must lie in [0, T], got {self.t_l}")
        layers = len(self.widths) - 1
        if not self.connections:
            conns = tuple(self.widths[l] * self.widths[l - 1] for l in range(1, layers + 1))
            object.__setattr__(self, "connections", conns)
        if not self.input_widths:
            object.__setattr__(self, "input_widths", tuple(self.widths[:-1]))
        if len(self.connections) != layers or len(self.input_widths) != layers:
            raise ConfigError("connections and input_widths need one entry per layer")

    @property
    def L(self) -> int:
        return len(self.widths) - 1

    @property
    def learning_steps(self) -> int:
        return self.T - self.t_l


@dataclass(frozen=True)
class CostReport:
    rule: str
    per_layer_macs: tuple[int, ...] = ()
    per_layer_scalars: tuple[int, ...] = ()
    allocated_per_layer: tuple[int, ...] = ()
    bytes_per_scalar: int = 4
    notes: tuple[str, ...] = field(default=())

    @property
    def total_macs(self) -> int:
        return sum(self.per_layer_macs)

    @property
    def total_scalars(self) -> int:
        return sum(self.per_layer_scalars)

    @property
    def allocated_scalars(self) -> int:
        return sum(self.allocated_per_layer)

    @property
    def total_bytes(self) -> int:
        return self.total_scalars * self.bytes_per_scalar

    @property
    def megabytes(self) -> float:
        return self.total_bytes / MB


def _check_rule(rule: str) -> None:
    if rule not in RULES:
        raise ConfigError(f"unknown rule {rule!r}; expected one of {RULES}")


def mem_cost(
    arch: ArchDescriptor, rule: str, alpha_post_nonzero: bool = True, bytes_per_scalar: int = 4
) -> CostReport:
    """Learning-memory scalars; ``per_layer_scalars`` is indexed ``l = 0..L``."""
    _check_rule(rule)
    if rule == "bptt":
        factor = arch.T
    elif rule == "s-tllr":
        factor = 2
    else:
        factor = 2 if alpha_post_nonzero else 1
    per_layer = tuple(factor * n for n in arch.widths)
    allocated: tuple[int, ...] = ()
    if rule == "tess":
        allocated = tuple(
            n_in + (n_out if alpha_post_nonzero else 0)
            for n_in, n_out in zip(arch.input_widths, arch.widths[1:])
        )
    return CostReport(rule, (), per_layer, allocated, bytes_per_scalar)


def mac_cost(arch: ArchDescriptor, rule: str) -> CostReport:
    """MACs spent producing learning signals for one sample; indexed ``l = 1..L``."""
    _check_rule(rule)
    if rule == "bptt":
        per_layer = tuple(arch.T * c for c in arch.connections)
    elif rule == "s-tllr":
        per_layer = tuple(arch.learning_steps * c for c in arch.connections)
    else:
        per_layer = tuple(arch.learning_steps * 2 * n * arch.C for n in arch.widths[1:])
    return CostReport(rule, per_layer)


def arch_from_specs(
    input_shape: tuple[int, ...], specs: list[LayerSpec], T: int, C: int, t_l: int = 0, name: str = ""
) -> ArchDescriptor:
    """Describe a layer stack without allocating weights (pool layers are folded away)."""
    shapes = [s for s in infer_shapes(tuple(input_shape), specs) if s.weighted]
    n0 = 1
    for d in input_shape:
        n0 *= d
    return ArchDescriptor(
        widths=(n0, *(s.n_out for s in shapes)),
        T=T,
        t_l=t_l,
        C=C,
        connections=tuple(s.connections for s in shapes),
        input_widths=tuple(s.n_in for s in shapes),
        name=name,
    )


def arch_from_network(net: Network, T: int) -> ArchDescriptor:
    return arch_from_specs(net.input_shape, net.specs, T, net.num_classes, net.t_l)


@dataclass(frozen=True)
class ComplexityRow:
    method: str
    memory: str
    time: str
    temporal_local: bool
    spatial_local: bool
    memory_value: int
    time_value: int


_COMPLEXITY = (
    ("BPTT", "TLn", "TLn^2", False, False),
    ("e-prop", "Ln^2", "Ln^2", True, False),
    ("OSTL", "Ln^2", "Ln^2", True, False),
    ("ETLP", "Ln^2", "LCn", True, True),
    ("OSTTP", "Ln^2", "LCn", True, True),
    ("OTTT", "Ln", "Ln^2", True, False),
    ("S-TLLR", "Ln", "Ln^2", True, False),
    ("TESS", "Ln", "LCn", True, True),
)


def _evaluate(expr: str, T: int, L: int, n: int, C: int) -> int:
    value = 1
    if "T" in expr:
        value *= T
    if "L" in expr:
        value *= L
    if "C" in expr:
        value *= C
    return value * (n * n if "n^2" in expr else n)


def complexity_table(arch: ArchDescriptor) -> list[ComplexityRow]:
    """Asymptotic memory/time classes evaluated with ``n`` = mean layer width.

    Only BPTT, S-TLLR and TESS have executable or formula-level cost models
    here; the remaining rows are class strings evaluated for comparison.
    """
    n = round(sum(arch.widths[1:]) / arch.L)
    return [
        ComplexityRow(m, mem, tim, tl, sl,
                      _evaluate(mem, arch.T, arch.L, n, arch.C),
                      _evaluate(tim, arch.T, arch.L, n, arch.C))
        for m, mem, tim, tl, sl in _COMPLEXITY
    ]


def format_reports(arch: ArchDescriptor, rules: list[str], alpha_post_nonzero: bool,
                   fmt: str = "text", bytes_per_scalar: int = 4) -> str:
    """Render per-layer and total MAC/memory figures as aligned text or CSV."""
    rows = []
    for rule in rules:
        macs = mac_cost(arch, rule)
        mem = mem_cost(arch, rule, alpha_post_nonzero, bytes_per_scalar)
        for l, scalars in enumerate(mem.per_layer_scalars):
            layer_macs = macs.per_layer_macs[l - 1] if l else 0
            rows.append((rule, str(l), str(layer_macs), str(scalars)))
        rows.append((rule, "total", str(macs.total_macs), str(mem.total_scalars)))
        rows.append((rule, "megabytes", "", f"{mem.megabytes:.4f}"))
        if rule == "tess":
            rows.append((rule, "allocated", "", str(mem.allocated_scalars)))
    header = ("rule", "layer", "macs", "memory_scalars")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "text":
        raise ConfigError(f"unknown format {fmt!r}")
    widths = [max(len(r[i]) for r in (header, *rows)) for i in range(4)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in (header, *rows)]
    return "\n".join(lines) + "\n"


def format_complexity(rows: list[ComplexityRow], fmt: str = "text") -> str:
    header = ("method", "memory", "time", "temporal_local", "spatial_local", "memory_value", "time_value")
    body = [
        (r.method, r.memory, r.time, "yes" if r.temporal_local else "no",
         "yes" if r.spatial_local else "no", str(r.memory_value), str(r.time_value))
        for r in rows
    ]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
        return buf.getvalue()
    widths = [max(len(r[i]) for r in (header, *body)) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in (header, *body)) + "\n"

"""Fully local three-factor training for spiking neural networks.

The package implements leaky integrate-and-fire dynamics, forward-in-time
pre/post-synaptic traces, layer-local learning-signal generation with fixed
square-wave projections, an analytical MAC/memory cost model, and a BPTT
reference used to check the local updates on tiny dense networks.
"""

from tess.core import LifLayerState, LifParams, lif_step, psi
from tess.errors import (
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    ShapeError,
    TessError,
)
from tess.lsg import BasisMatrix, build_basis, learning_signal
from tess.traces import TraceParams, TraceState

__all__ = [
    "BasisMatrix",
    "ConfigError",
    "DataError",
    "FormatError",
    "LifLayerState",
    "LifParams",
    "NumericError",
    "ShapeError",
    "TessError",
    "TraceParams",
    "TraceState",
    "build_basis",
    "learning_signal",
    "lif_step",
    "psi",
]

__version__ = "0.1.0"

"""Gradient-free training by recursive local representation alignment.

The core pieces are :mod:`reclra.network` (architectures and inference),
:mod:`reclra.credit` (the local credit-assignment engine and a backprop
baseline) and :mod:`reclra.optimize` (re-projected SGD/Adam steps).
"""

from .activations import Activation
from .credit import (
    ErrorState,
    RecLRAConfig,
    backprop_updates,
    compute_error_neurons,
    compute_signals_parallel,
    compute_target,
    compute_updates,
    reclra_updates,
    total_discrepancy,
)
from .network import (
    ForwardTrace,
    LayerSpec,
    NetworkGraph,
    build,
    chain_wiring,
    run_inference,
    skip_wiring,
)
from .optimize import Optimizer, reproject
from .tensor import RngStream

__version__ = "0.1.0"

__all__ = [
    "Activation", "ErrorState", "ForwardTrace", "LayerSpec", "NetworkGraph", "Optimizer",
    "RecLRAConfig", "RngStream", "backprop_updates", "build", "chain_wiring",
    "compute_error_neurons", "compute_signals_parallel", "compute_target", "compute_updates",
    "reclra_updates", "reproject", "run_inference", "skip_wiring", "total_discrepancy",
]

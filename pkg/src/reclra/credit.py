"""Recursive local representation alignment and the backprop baseline.

The local engine runs in two phases over a frozen :class:`ForwardTrace`:

1. Starting at the output, ``e_L = z_L - y``. For each error edge ``j -> i``
   the delta ``d_i = E[j->i] e_j`` nudges the target ``y_i = phi_i(h_i -
   beta d_i)`` and the error neurons become ``e_i = z_i - y_i``. Sibling
   subtrees share nothing, so they may be computed concurrently.
2. Every parameter gets a local delta: ``e_j z_{j-1}^T`` for forward weights,
   ``-gamma d_i e_j^T`` for error synapses, and the summed Hadamard product of
   error map and rectified perturbed map for mask weights.

All deltas are batch means and are descent directions: optimizers subtract
them. Neither phase evaluates an activation derivative.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from . import activations as act
from .activations import Activation
from .errors import ShapeError, WiringError
from .network import (
    ForwardTrace,
    NetworkGraph,
    bias_name,
    error_name,
    mask_weight_name,
    perturbed_maps,
    weight_name,
)

UpdateSet = dict  # parameter name -> delta array shaped like the parameter

Kappa = Union[float, Sequence[float], Mapping[int, float]]


@dataclass(frozen=True)
class RecLRAConfig:
    beta: float = 0.1
    gamma: float = 0.995
    kappa: Kappa = 1.0
    p: float = 2.0
    q: float = 2.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("norm orders p and q must be positive")


@dataclass
class ErrorState:
    """Error neurons, delta signals and targets keyed by layer index.

    ``deltas`` has no entry for the output layer.
    """

    errors: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)
    config: RecLRAConfig = field(default_factory=RecLRAConfig)


def kappa_for(kappa: Kappa, layer: int) -> float:
    if isinstance(kappa, Mapping):
        return float(kappa.get(layer, 1.0))
    if isinstance(kappa, (int, float, np.floating, np.integer)):
        return float(kappa)
    return float(kappa[layer - 1])


def total_discrepancy(trace: ForwardTrace, targets: Mapping[int, np.ndarray],
                      kappa: Kappa = 1.0, p: float = 2.0, q: float = 2.0) -> float:
    """Weighted sum over layers of ``||z_l - y_l||_p ** q``, averaged over the batch."""
    total = 0.0
    for layer in sorted(targets):
        z = np.asarray(trace.z[layer])
        y = np.asarray(targets[layer])
        if z.shape != y.shape:
            raise ShapeError(f"layer {layer}: activity {z.shape} vs target {y.shape}")
        diff = np.abs(z - y).reshape(z.shape[0], -1) if z.ndim > 1 else np.abs(z - y)[None, :]
        if p == 2:
            norms = np.sqrt(np.sum(diff * diff, axis=1))
        else:
            norms = np.sum(diff ** p, axis=1) ** (1.0 / p)
        total += kappa_for(kappa, layer) * float(np.mean(norms ** q))
    return total


def compute_target(h_i, e_j, E, beta: float, phi: Activation):
    """Return ``(y_i, d_i)`` with ``d_i = E e_j`` and ``y_i = phi(h_i - beta d_i)``.

    Works on single vectors or on batches laid out as rows.
    """
    h_i = np.asarray(h_i, dtype=np.float64)
    e_j = np.asarray(e_j, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or e_j.shape[-1] != E.shape[1] or h_i.shape[-1] != E.shape[0]:
        raise ShapeError(f"E {E.shape} cannot map e_j {e_j.shape} onto h_i {h_i.shape}")
    if h_i.shape[:-1] != e_j.shape[:-1]:
        raise ShapeError(f"batch extents differ: {h_i.shape} vs {e_j.shape}")
    d_i = e_j @ E.T
    y_i = act.apply(phi, h_i - beta * d_i)
    return y_i, d_i


def _output_error(net: NetworkGraph, trace: ForwardTrace, y) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    z_out = trace.z[net.num_layers]
    if y.ndim == 1 and z_out.ndim == 2 and z_out.shape[0] == 1:
        y = y[None, :]
    if y.shape != z_out.shape:
        raise ShapeError(f"labels {y.shape} do not match output {z_out.shape}")
    return y, z_out - y


def _descend(net: NetworkGraph, trace: ForwardTrace, node: int, e_node: np.ndarray,
             beta: float, out: ErrorState) -> None:
    for child in net.children[node]:
        y_i, d_i = compute_target(trace.h[child], e_node, net.E(node, child), beta,
                                  net.spec(child).activation)
        e_i = trace.z[child] - y_i
        out.deltas[child] = d_i
        out.targets[child] = y_i
        out.errors[child] = e_i
        _descend(net, trace, child, e_i, beta, out)


def compute_error_neurons(net: NetworkGraph, trace: ForwardTrace, y,
                          config: RecLRAConfig = RecLRAConfig()) -> ErrorState:
    """Populate error neurons, deltas and targets by recursing down the wiring."""
    L = net.num_layers
    y, e_out = _output_error(net, trace, y)
    state = ErrorState(config=config)
    state.errors[L] = e_out
    state.targets[L] = y
    _descend(net, trace, L, e_out, config.beta, state)
    _check_complete(net, state)
    return state


def _check_complete(net: NetworkGraph, state: ErrorState) -> None:
    missing = [n for n in range(1, net.num_layers + 1) if n not in state.errors]
    if missing:
        raise WiringError(f"layers {missing} were not reached by the error wiring")


def _subtree(net, trace, root, e_parent, parent, beta) -> ErrorState:
    part = ErrorState()
    y_i, d_i = compute_target(trace.h[root], e_parent, net.E(parent, root), beta,
                              net.spec(root).activation)
    e_i = trace.z[root] - y_i
    part.deltas[root] = d_i
    part.targets[root] = y_i
    part.errors[root] = e_i
    _descend(net, trace, root, e_i, beta, part)
    return part


def compute_signals_parallel(net: NetworkGraph, trace: ForwardTrace, y,
                             config: RecLRAConfig = RecLRAConfig(),
                             workers: int = 1) -> ErrorState:
    """Same result as :func:`compute_error_neurons`, with each subtree hanging
    off the output handed to its own worker. Subtrees share no mutable state,
    so the merged result is bit-identical to the sequential recursion."""
    if workers <= 1:
        return compute_error_neurons(net, trace, y, config)
    L = net.num_layers
    y, e_out = _output_error(net, trace, y)
    state = ErrorState(config=config)
    state.errors[L] = e_out
    state.targets[L] = y
    roots = net.children[L]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(
            lambda r: _subtree(net, trace, r, e_out, L, config.beta), roots))
    for part in parts:
        state.errors.update(part.errors)
        state.deltas.update(part.deltas)
        state.targets.update(part.targets)
    _check_complete(net, state)
    return state


def _batch_rows(a: np.ndarray) -> np.ndarray:
    return a[None, :] if a.ndim == 1 else a


def mask_weight_delta(e: np.ndarray, z_prev: np.ndarray, noise: np.ndarray,
                      channels_in: int, channels_out: int) -> np.ndarray:
    """Batch mean of ``sum_positions e^c * relu(z_prev^m + n^m)`` for every (c, m)."""
    batch = e.shape[0]
    size = noise.shape[1]
    maps = perturbed_maps(z_prev.reshape(batch, channels_in, size), noise)
    return np.einsum("bcs,bms->cm", e.reshape(batch, channels_out, size), maps) / batch


def compute_updates(net: NetworkGraph, trace: ForwardTrace, errs: ErrorState) -> UpdateSet:
    """Local deltas for every trainable parameter from one frozen ErrorState."""
    gamma = errs.config.gamma
    updates: UpdateSet = {}
    for layer in range(1, net.num_layers + 1):
        if layer not in errs.errors:
            raise WiringError(f"no error neurons for layer {layer}")
        e = _batch_rows(errs.errors[layer])
        z_prev = _batch_rows(trace.z[layer - 1])
        batch = e.shape[0]
        spec = net.spec(layer)
        if spec.kind == "perturbative":
            c_in = net.maps[layer - 1][0]
            updates[mask_weight_name(layer)] = mask_weight_delta(
                e, z_prev, net.noise[layer].maps, c_in, spec.width)
        else:
            updates[weight_name(layer)] = e.T @ z_prev / batch
            updates[bias_name(layer)] = e.mean(axis=0)
    for j, i in net.wiring:
        d_i = _batch_rows(errs.deltas[i])
        e_j = _batch_rows(errs.errors[j])
        updates[error_name(j, i)] = -gamma * (d_i.T @ e_j) / d_i.shape[0]
    return updates


def reclra_updates(net: NetworkGraph, trace: ForwardTrace, y,
                   config: RecLRAConfig = RecLRAConfig(), workers: int = 1):
    """Error state and local updates for one batch."""
    errs = compute_signals_parallel(net, trace, y, config, workers)
    return errs, compute_updates(net, trace, errs)


def backprop_updates(net: NetworkGraph, trace: ForwardTrace, y) -> UpdateSet:
    """Exact batch-mean gradients of the softmax/NLL loss.

    Error synapses receive no update. Raises UnsupportedDerivativeError
    before doing any work when a sign activation is present.
    """
    L = net.num_layers
    for layer in range(1, L):
        if not net.spec(layer).activation.differentiable:
            act.derivative(net.spec(layer).activation, np.zeros(1))
    out_act = net.spec(L).activation
    if out_act.name != "softmax":
        if not out_act.differentiable:
            act.derivative(out_act, np.zeros(1))
        raise ValueError("backprop baseline needs a softmax output layer for the NLL loss")
    y, delta = _output_error(net, trace, y)
    batch = delta.shape[0]
    grad_z: dict[int, np.ndarray] = {}
    updates: UpdateSet = {}
    for layer in range(L, 0, -1):
        spec = net.spec(layer)
        if layer < L:
            delta = grad_z.pop(layer) * act.derivative(spec.activation, trace.h[layer])
        z_prev = trace.z[layer - 1]
        if spec.kind == "perturbative":
            c_in, size = net.maps[layer - 1]
            noise = net.noise[layer].maps
            w = net.mask_weights(layer)
            updates[mask_weight_name(layer)] = mask_weight_delta(
                delta, z_prev, noise, c_in, spec.width)
            if layer > 1:
                maps_prev = z_prev.reshape(batch, c_in, size)
                idx = np.arange(noise.shape[0]) % c_in
                active = (maps_prev[:, idx, :] + noise) > 0.0
                g_maps = np.einsum("bcs,cm->bms", delta.reshape(batch, spec.width, size), w)
                g_maps = g_maps * active
                g_prev = np.zeros_like(maps_prev)
                for k in range(c_in):
                    g_prev[:, k, :] = g_maps[:, idx == k, :].sum(axis=1)
                _accumulate(grad_z, layer - 1, g_prev.reshape(batch, -1))
        else:
            updates[weight_name(layer)] = delta.T @ z_prev / batch
            updates[bias_name(layer)] = delta.mean(axis=0)
            if layer > 1:
                _accumulate(grad_z, layer - 1, delta @ net.W(layer))
            if spec.kind == "residual" and layer - net.gap >= 1:
                _accumulate(grad_z, layer - net.gap, delta)
    return updates


def _accumulate(store: dict, layer: int, value: np.ndarray) -> None:
    if layer in store:
        store[layer] = store[layer] + value
    else:
        store[layer] = value

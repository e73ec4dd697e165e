"""Architecture description, parameter storage and forward inference.

A network has layers ``1..L`` on top of the input ``z_0 = x``. Three layer
kinds exist:

``dense``
    ``h = z_prev @ W.T + b``, ``z = phi(h)``.
``residual``
    like dense, plus the forward shortcut ``z_{l-g}`` added into ``h``.
``perturbative``
    a fixed-noise pseudo-convolution: every output channel is a weighted sum
    of rectified, noise-perturbed input maps, ``h^c = sum_m w[c, m] *
    relu(z_prev^(m mod C_in) + n^m)``, ``z = phi(h)``.

Error synapses ``E[j->i]`` (shape ``width_i x width_j``) carry mismatch
signals from layer ``j`` to layer ``i``. They are never read by the forward
pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import activations as act
from .activations import Activation
from .errors import NonFiniteError, ShapeError, WiringError
from .tensor import RngStream, gaussian_fill

LAYER_KINDS = ("dense", "residual", "perturbative")

DEFAULT_NOISE_SIGMA = 0.1


@dataclass(frozen=True)
class LayerSpec:
    """One layer. ``width`` counts units for dense/residual layers and output
    channels for perturbative layers, whose maps keep the incoming map size."""

    kind: str
    width: int
    activation: Activation
    masks: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.width <= 0:
            raise ShapeError(f"layer width must be positive, got {self.width}")
        if self.kind == "perturbative" and self.masks <= 0:
            raise ShapeError("perturbative layers need a positive mask count")

    @classmethod
    def dense(cls, width: int, activation="tanh") -> "LayerSpec":
        return cls("dense", width, _as_activation(activation))

    @classmethod
    def residual(cls, width: int, activation="tanh") -> "LayerSpec":
        return cls("residual", width, _as_activation(activation))

    @classmethod
    def perturbative(cls, channels: int, masks: int, activation="identity") -> "LayerSpec":
        return cls("perturbative", channels, _as_activation(activation), masks)


def _as_activation(a) -> Activation:
    return a if isinstance(a, Activation) else Activation.parse(a)


@dataclass(frozen=True)
class NoiseBank:
    """``masks`` fixed Gaussian noise maps, regenerable from their seed."""

    seed: int
    sigma: float
    maps: np.ndarray

    @classmethod
    def generate(cls, seed: int, masks: int, map_size: int, sigma: float) -> "NoiseBank":
        maps = gaussian_fill((masks, map_size), 0.0, sigma, RngStream(seed))
        maps.setflags(write=False)
        return cls(seed, sigma, maps)


@dataclass
class ForwardTrace:
    """Pre-activations ``h[1..L]`` and post-activations ``z[0..L]``.

    ``h[0]`` is ``None`` so that both lists index layers directly.
    """

    h: list
    z: list

    @property
    def output(self) -> np.ndarray:
        return self.z[-1]


@dataclass
class NetworkGraph:
    input_shape: tuple[int, int]
    specs: tuple[LayerSpec, ...]
    wiring: tuple[tuple[int, int], ...]
    gap: int
    noise_sigma: float
    params: dict[str, np.ndarray] = field(default_factory=dict)
    noise: dict[int, NoiseBank] = field(default_factory=dict)

    def __post_init__(self):
        self.maps = _map_layout(self.input_shape, self.specs)
        self.widths = [c * s for c, s in self.maps]
        self.children = validate_wiring(self.num_layers, self.wiring)

    @property
    def num_layers(self) -> int:
        return len(self.specs)

    def spec(self, layer: int) -> LayerSpec:
        return self.specs[layer - 1]

    def parameter_names(self) -> list[str]:
        return list(self.params)

    def W(self, layer: int) -> np.ndarray:
        return self.params[weight_name(layer)]

    def b(self, layer: int) -> np.ndarray:
        return self.params[bias_name(layer)]

    def E(self, source: int, target: int) -> np.ndarray:
        return self.params[error_name(source, target)]

    def mask_weights(self, layer: int) -> np.ndarray:
        return self.params[mask_weight_name(layer)]

    def copy(self) -> "NetworkGraph":
        return NetworkGraph(
            self.input_shape, self.specs, self.wiring, self.gap, self.noise_sigma,
            {k: v.copy() for k, v in self.params.items()}, dict(self.noise),
        )


def weight_name(layer: int) -> str:
    return f"W{layer}"


def bias_name(layer: int) -> str:
    return f"b{layer}"


def error_name(source: int, target: int) -> str:
    return f"E{source}>{target}"


def mask_weight_name(layer: int) -> str:
    return f"w{layer}"


def _map_layout(input_shape, specs) -> list[tuple[int, int]]:
    """(channels, map size) of every representation ``z_0..z_L``."""
    channels, size = (int(n) for n in input_shape)
    if channels <= 0 or size <= 0:
        raise ShapeError(f"input shape must be positive, got {input_shape}")
    layout = [(channels, size)]
    for spec in specs:
        if spec.kind == "perturbative":
            layout.append((spec.width, layout[-1][1]))
        else:
            layout.append((1, spec.width))
    return layout


def validate_wiring(num_layers: int, wiring) -> dict[int, list[int]]:
    """Check the error digraph and return each node's children in wiring order.

    Every layer below the output must be targeted by exactly one edge, the
    output by none, and following parents from any layer must reach the
    output without revisiting a node.
    """
    L = num_layers
    parent: dict[int, int] = {}
    children: dict[int, list[int]] = {n: [] for n in range(1, L + 1)}
    for j, i in wiring:
        if not (1 <= j <= L and 1 <= i <= L):
            raise WiringError(f"edge {j}->{i} leaves the layer range 1..{L}")
        if j == i:
            raise WiringError(f"self-loop on layer {j}")
        if i == L:
            raise WiringError("the output layer cannot receive an error edge")
        if i in parent:
            raise WiringError(f"layer {i} is targeted by both {parent[i]} and {j}")
        parent[i] = j
        children[j].append(i)
    missing = [n for n in range(1, L) if n not in parent]
    if missing:
        raise WiringError(f"layers {missing} receive no error edge")
    for start in range(1, L):
        seen = {start}
        node = start
        while node != L:
            node = parent[node]
            if node in seen:
                raise WiringError(f"error wiring has a cycle through layer {node}")
            seen.add(node)
    return children


def chain_wiring(num_layers: int) -> list[tuple[int, int]]:
    return [(layer + 1, layer) for layer in range(num_layers - 1, 0, -1)]


def skip_wiring(num_layers: int, gap: int) -> list[tuple[int, int]]:
    """Residual-style wiring: layers at multiples of ``gap`` hear the output
    directly, every other layer hears the layer above it."""
    L = num_layers
    edges = []
    for layer in range(L - 1, 0, -1):
        edges.append((L, layer) if layer % gap == 0 else (layer + 1, layer))
    return edges


def build(
    specs: Sequence[LayerSpec],
    wiring,
    init_sigma: float,
    rng: RngStream,
    input_shape,
    gap: int = 0,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
) -> NetworkGraph:
    """Allocate and initialise a network.

    Forward weights, error synapses and perturbative mask weights are drawn
    from N(0, init_sigma^2); biases start at zero; noise banks are drawn from
    N(0, noise_sigma^2) once and never change.
    """
    if isinstance(input_shape, (int, np.integer)):
        input_shape = (1, int(input_shape))
    net = NetworkGraph(tuple(input_shape), tuple(specs), tuple(map(tuple, wiring)),
                       int(gap), float(noise_sigma))
    _check_residuals(net)
    for layer, spec in enumerate(net.specs, start=1):
        stream = rng.spawn(layer)
        if spec.kind == "perturbative":
            net.params[mask_weight_name(layer)] = gaussian_fill(
                (spec.width, spec.masks), 0.0, init_sigma, stream)
            seed = int(stream.integers(0, 2**63))
            net.noise[layer] = NoiseBank.generate(
                seed, spec.masks, net.maps[layer - 1][1], noise_sigma)
        else:
            net.params[weight_name(layer)] = gaussian_fill(
                (net.widths[layer], net.widths[layer - 1]), 0.0, init_sigma, stream)
            net.params[bias_name(layer)] = np.zeros(net.widths[layer])
    for n, (j, i) in enumerate(net.wiring):
        net.params[error_name(j, i)] = gaussian_fill(
            (net.widths[i], net.widths[j]), 0.0, init_sigma, rng.spawn(10_000 + n))
    return net


def parameter_shapes(net: NetworkGraph) -> dict[str, tuple[int, ...]]:
    """Shape of every trainable parameter the architecture calls for."""
    shapes = {}
    for layer, spec in enumerate(net.specs, start=1):
        if spec.kind == "perturbative":
            shapes[mask_weight_name(layer)] = (spec.width, spec.masks)
        else:
            shapes[weight_name(layer)] = (net.widths[layer], net.widths[layer - 1])
            shapes[bias_name(layer)] = (net.widths[layer],)
    for j, i in net.wiring:
        shapes[error_name(j, i)] = (net.widths[i], net.widths[j])
    return shapes


def _check_residuals(net: NetworkGraph) -> None:
    for layer, spec in enumerate(net.specs, start=1):
        if spec.kind != "residual":
            continue
        if net.gap < 1:
            raise ShapeError(f"residual layer {layer} needs a positive gap")
        src = layer - net.gap
        if src < 0:
            raise ShapeError(f"residual layer {layer} reaches below the input (gap {net.gap})")
        if net.widths[src] != net.widths[layer]:
            raise ShapeError(
                f"residual layer {layer} (width {net.widths[layer]}) cannot add "
                f"z_{src} (width {net.widths[src]})")


def perturbed_maps(z_prev: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """``relu(z_prev^(m mod C_in) + n^m)`` for every mask ``m``.

    ``z_prev`` is ``(..., C_in, S)``, ``noise`` is ``(M, S)``; the result is
    ``(..., M, S)``.
    """
    c_in = z_prev.shape[-2]
    idx = np.arange(noise.shape[0]) % c_in
    return np.maximum(z_prev[..., idx, :] + noise, 0.0)


def pseudo_conv_forward(z_prev, noise, weights) -> np.ndarray:
    """Weighted sum of rectified noise-perturbed maps.

    ``weights`` of shape ``(M,)`` produce one map ``(..., S)``; shape
    ``(C_out, M)`` produces ``(..., C_out, S)``.
    """
    z_prev = np.asarray(z_prev, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if noise.ndim != 2 or z_prev.ndim < 2 or z_prev.shape[-1] != noise.shape[1]:
        raise ShapeError(f"maps {z_prev.shape} and noise {noise.shape} do not align")
    if weights.shape[-1] != noise.shape[0]:
        raise ShapeError(f"{weights.shape[-1]} weights for {noise.shape[0]} noise maps")
    perturbed = perturbed_maps(z_prev, noise)
    if weights.ndim == 1:
        return np.einsum("m,...ms->...s", weights, perturbed)
    return np.einsum("cm,...ms->...cs", weights, perturbed)


def layer_preactivation(net: NetworkGraph, layer: int, z: list) -> np.ndarray:
    spec = net.spec(layer)
    z_prev = z[layer - 1]
    if spec.kind == "perturbative":
        c_in, size = net.maps[layer - 1]
        maps = z_prev.reshape(z_prev.shape[0], c_in, size)
        out = pseudo_conv_forward(maps, net.noise[layer].maps, net.mask_weights(layer))
        return out.reshape(z_prev.shape[0], -1)
    h = z_prev @ net.W(layer).T + net.b(layer)
    if spec.kind == "residual":
        h = h + z[layer - net.gap]
    return h


def run_inference(net: NetworkGraph, x) -> ForwardTrace:
    """Forward pass over a batch ``x`` of shape ``(batch, input width)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.widths[0]:
        raise ShapeError(f"input of shape {x.shape} does not match width {net.widths[0]}")
    h: list = [None]
    z: list = [x]
    for layer in range(1, net.num_layers + 1):
        pre = layer_preactivation(net, layer, z)
        post = act.apply(net.spec(layer).activation, pre)
        if not (np.all(np.isfinite(pre)) and np.all(np.isfinite(post))):
            raise NonFiniteError(f"non-finite activity at layer {layer}")
        h.append(pre)
        z.append(post)
    return ForwardTrace(h, z)


def predict(net: NetworkGraph, x) -> np.ndarray:
    return run_inference(net, x).output

"""Flat ``key = value`` experiment configuration files.

Example::

    # 3 x 1024 tanh on MNIST
    data_dir = data/mnist
    layers = 3*dense:1024:tanh
    engine = reclra
    lr = 2e-4
    batch_size = 32
    epochs = 50

``layers`` lists the hidden layers; a softmax head sized to the dataset's
class count is appended automatically. Tokens are ``dense:W:act``,
``residual:W:act`` and ``perturb:C:M:act`` (C output channels, M noise
masks), each optionally prefixed with a repeat count ``n*``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..activations import Activation
from ..errors import ConfigError
from ..network import LayerSpec

ENGINES = ("reclra", "backprop")
WIRINGS = ("chain", "skip")


@dataclass
class ExperimentConfig:
    layers: str = "3*dense:1024:tanh"
    engine: str = "reclra"
    wiring: str = "chain"
    gap: int = 2
    beta: float = 0.1
    gamma: float = 0.995
    kappa: float = 1.0
    p: float = 2.0
    q: float = 2.0
    optimizer: str = "adam"
    lr: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    radius: float = 1.0
    init_sigma: float = 0.05
    noise_sigma: float = 0.1
    lrelu_slope: float = 0.01
    elu_alpha: float = 1.0
    batch_size: int = 32
    epochs: int = 50
    seed: int = 1234
    workers: int = 1
    data_dir: str = ""
    n_val: int = 2000
    train_subset: int = 0
    gcn: str = "none"
    zca: bool = False
    zca_eps: float = 1e-5
    zca_max_samples: int = 10_000
    eval_train: bool = True
    topk: str = "1,5"
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.wiring not in WIRINGS:
            raise ConfigError(f"wiring must be one of {WIRINGS}, got {self.wiring!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.gcn not in ("none", "mean", "scaled"):
            raise ConfigError(f"gcn must be none, mean or scaled, got {self.gcn!r}")
        positive = ("lr", "radius", "init_sigma", "noise_sigma", "batch_size", "p", "q",
                    "adam_eps", "workers", "gap", "zca_max_samples")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("beta", "gamma", "kappa", "epochs", "n_val", "train_subset", "zca_eps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam decay constants must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        specs = self.hidden_specs()
        if self.engine == "backprop" and any(s.activation.name == "sign" for s in specs):
            raise ConfigError("the backprop engine cannot train sign activations")
        self.k_list()

    def k_list(self) -> list[int]:
        try:
            ks = sorted({int(k) for k in str(self.topk).split(",") if k.strip()})
        except ValueError as exc:
            raise ConfigError(f"bad topk list {self.topk!r}") from exc
        if not ks or ks[0] < 1:
            raise ConfigError("topk entries must be positive integers")
        return ks

    def hidden_specs(self) -> list[LayerSpec]:
        return parse_layers(self.layers, self.lrelu_slope, self.elu_alpha)

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_layers(text: str, lrelu_slope: float = 0.01, elu_alpha: float = 1.0) -> list[LayerSpec]:
    specs: list[LayerSpec] = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        repeat = 1
        if "*" in token:
            count, token = token.split("*", 1)
            try:
                repeat = int(count)
            except ValueError as exc:
                raise ConfigError(f"bad repeat count in {token!r}") from exc
        parts = token.split(":")
        try:
            kind = parts[0]
            if kind in ("dense", "residual") and len(parts) == 3:
                spec = LayerSpec(kind, int(parts[1]),
                                 Activation.parse(parts[2], lrelu_slope, elu_alpha))
            elif kind == "perturb" and len(parts) == 4:
                spec = LayerSpec("perturbative", int(parts[1]),
                                 Activation.parse(parts[3], lrelu_slope, elu_alpha), int(parts[2]))
            else:
                raise ConfigError(f"cannot parse layer token {token!r}")
        except ValueError as exc:
            raise ConfigError(f"cannot parse layer token {token!r}: {exc}") from exc
        if spec.activation.name == "softmax":
            raise ConfigError("softmax is reserved for the output head")
        specs.extend([spec] * repeat)
    return specs


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool or kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_pairs(pairs: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for key, raw in pairs.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw, _TYPES[key])
    if base is None:
        return ExperimentConfig(**values)
    return base.replace(**values)


def read_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    pairs = read_pairs(text)
    pairs.update(overrides or {})
    return parse_pairs(pairs)

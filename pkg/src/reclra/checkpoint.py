"""Binary checkpoint files.

Layout, all integers little-endian::

    b"RLRA"                      magic
    u32 version                  currently 1
    u32 layer count
    u32 n, n bytes               architecture + metadata as UTF-8 JSON
    u32 record count
    records:
        u32 n, n bytes           parameter id (UTF-8)
        u32 rank
        u32 * rank               extents
        f64 * prod(extents)      row-major values
    u64 checksum                 BLAKE2b-64 of every byte after the version

Noise banks are stored as records too, so a loaded network reproduces the
saved one bit for bit without re-sampling.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import Activation
from .errors import CheckpointError
from .network import LayerSpec, NetworkGraph, NoiseBank, parameter_shapes

MAGIC = b"RLRA"
VERSION = 1
NOISE_PREFIX = "noise"


@dataclass
class Checkpoint:
    net: NetworkGraph
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _arch(net: NetworkGraph, meta: dict) -> dict:
    return {
        "input_shape": list(net.input_shape),
        "layers": [
            {"kind": s.kind, "width": s.width, "activation": str(s.activation), "masks": s.masks}
            for s in net.specs
        ],
        "wiring": [list(e) for e in net.wiring],
        "gap": net.gap,
        "noise_sigma": net.noise_sigma,
        "noise_seeds": {str(k): b.seed for k, b in sorted(net.noise.items())},
        "meta": meta,
    }


def encode(net: NetworkGraph, extras=None, meta=None) -> bytes:
    records = dict(net.params)
    for layer, bank in sorted(net.noise.items()):
        records[f"{NOISE_PREFIX}{layer}"] = bank.maps
    for name, arr in (extras or {}).items():
        if name in records:
            raise CheckpointError(f"extra record {name!r} clashes with a parameter")
        records[name] = arr
    arch = json.dumps(_arch(net, meta or {}), sort_keys=True).encode()
    parts = [struct.pack("<I", net.num_layers), struct.pack("<I", len(arch)), arch,
             struct.pack("<I", len(records))]
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        key = name.encode()
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    return MAGIC + struct.pack("<I", VERSION) + payload + struct.pack("<Q", _checksum(payload))


def save_checkpoint(net: NetworkGraph, path, extras=None, meta=None) -> Path:
    path = Path(path)
    data = encode(net, extras, meta)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(data) < 16:
        raise CheckpointError("checkpoint is truncated")
    payload, tail = data[8:-8], data[-8:]
    reader = _Reader(payload)
    try:
        layer_count = reader.u32()
        arch = json.loads(reader.take(reader.u32()).decode())
        records = {}
        for _ in range(reader.u32()):
            name = reader.take(reader.u32()).decode()
            rank = reader.u32()
            shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            records[name] = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    except (UnicodeDecodeError, json.JSONDecodeError, struct.error) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if reader.pos != len(payload):
        raise CheckpointError("checkpoint is truncated or has trailing bytes")
    if struct.unpack("<Q", tail)[0] != _checksum(payload):
        raise CheckpointError("checkpoint checksum mismatch")
    return _assemble(layer_count, arch, records)


def _assemble(layer_count: int, arch: dict, records: dict) -> Checkpoint:
    try:
        specs = tuple(
            LayerSpec(l["kind"], l["width"], Activation.parse(l["activation"]), l["masks"])
            for l in arch["layers"]
        )
        if len(specs) != layer_count:
            raise CheckpointError("layer count disagrees with the architecture block")
        net = NetworkGraph(tuple(arch["input_shape"]), specs,
                           tuple(tuple(e) for e in arch["wiring"]), arch["gap"],
                           arch["noise_sigma"])
        seeds = {int(k): v for k, v in arch["noise_seeds"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad architecture block: {exc}") from exc
    extras = {}
    for name, arr in records.items():
        if name.startswith(NOISE_PREFIX) and name[len(NOISE_PREFIX):].isdigit():
            layer = int(name[len(NOISE_PREFIX):])
            arr.setflags(write=False)
            net.noise[layer] = NoiseBank(seeds[layer], net.noise_sigma, arr)
        elif _is_param(name):
            net.params[name] = arr
        else:
            extras[name] = arr
    expected = parameter_shapes(net)
    got = {k: v.shape for k, v in net.params.items()}
    if got != expected:
        raise CheckpointError("parameter records do not match the architecture")
    for layer, spec in enumerate(specs, start=1):
        if spec.kind == "perturbative":
            bank = net.noise.get(layer)
            if bank is None or bank.maps.shape != (spec.masks, net.maps[layer - 1][1]):
                raise CheckpointError(f"noise bank for layer {layer} is missing or misshapen")
    return Checkpoint(net, extras, arch.get("meta", {}))


def _is_param(name: str) -> bool:
    return name[:1] in ("W", "b", "E", "w") and name[1:2].isdigit()


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return decode(data)


def load_network(path) -> NetworkGraph:
    return load_checkpoint(path).net

"""Binary checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic b"SPXCKPT\\0"
    uint32    format version
    uint32    observation layout version
    uint32    number of networks
    per network:
        uint16 name length, utf-8 name
        uint8  head (0 linear, 1 tanh)
        uint32 number of layers, then (uint32 in, uint32 out) per layer
    uint32    number of scalars
    per scalar: uint16 name length, utf-8 name
    parameters as float32 <f4: for each network, for each layer, W row-major
    (in x out) then b; then the scalars in declaration order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..environment import OBS_LAYOUT_VERSION
from .mlp import HEADS, Mlp, MlpSpec

MAGIC = b"SPXCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int | None = None, path=None):
        where = f" at byte offset {offset}" if offset is not None else ""
        prefix = f"{path}: " if path is not None else ""
        super().__init__(f"{prefix}{message}{where}")
        self.offset = offset
        self.path = path


def _name(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def encode(networks: dict[str, Mlp], scalars: dict[str, float] | None = None) -> bytes:
    scalars = scalars or {}
    head = [MAGIC, struct.pack("<III", FORMAT_VERSION, OBS_LAYOUT_VERSION, len(networks))]
    for name, net in networks.items():
        layers = net.spec.layers
        head.append(_name(name))
        head.append(struct.pack("<BI", HEADS.index(net.spec.head), len(layers)))
        head += [struct.pack("<II", i, o) for i, o in layers]
    head.append(struct.pack("<I", len(scalars)))
    head += [_name(k) for k in scalars]
    flat = [p.ravel() for net in networks.values() for p in net.params]
    flat.append(np.asarray(list(scalars.values()), dtype=float))
    body = np.concatenate(flat).astype("<f4").tobytes()
    return b"".join(head) + body


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated file while reading {what}", self.pos, self.path)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def name(self, what: str) -> str:
        (n,) = self.unpack("<H", what)
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{what} is not valid utf-8", start, self.path) from None


def decode(data: bytes, path=None) -> tuple[dict[str, Mlp], dict[str, float]]:
    r = _Reader(data, path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint file", 0, path)
    at = r.pos
    version, layout, n_nets = r.unpack("<III", "header")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {FORMAT_VERSION})", at, path)
    if layout != OBS_LAYOUT_VERSION:
        raise CheckpointError(f"observation layout version {layout} does not match {OBS_LAYOUT_VERSION}",
                              at + 4, path)
    specs = {}
    for _ in range(n_nets):
        name = r.name("network name")
        at = r.pos
        head, n_layers = r.unpack("<BI", "network header")
        if head >= len(HEADS):
            raise CheckpointError(f"unknown head code {head}", at, path)
        dims = [r.unpack("<II", "layer table") for _ in range(n_layers)]
        if not dims or any(a < 1 or b < 1 for a, b in dims) or any(
                dims[k][1] != dims[k + 1][0] for k in range(len(dims) - 1)):
            raise CheckpointError(f"inconsistent layer table for {name!r}", at, path)
        specs[name] = MlpSpec((dims[0][0],) + tuple(b for _, b in dims), head=HEADS[head])
    (n_scalars,) = r.unpack("<I", "scalar count")
    scalar_names = [r.name("scalar name") for _ in range(n_scalars)]
    n_values = sum(s.n_params for s in specs.values()) + n_scalars
    at = r.pos
    expected = at + 4 * n_values
    if len(data) != expected:
        raise CheckpointError(f"parameter block holds {len(data) - at} bytes, expected {4 * n_values}",
                              min(len(data), expected), path)
    values = np.frombuffer(data, dtype="<f4", count=n_values, offset=at).astype(float)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise CheckpointError("non-finite parameter", at + 4 * bad, path)
    nets, k = {}, 0
    for name, spec in specs.items():
        params = []
        for i, o in spec.layers:
            params.append(values[k:k + i * o].reshape(i, o))
            k += i * o
            params.append(values[k:k + o].copy())
            k += o
        nets[name] = Mlp(spec, params)
    scalars = {n: float(values[k + j]) for j, n in enumerate(scalar_names)}
    return nets, scalars


def save(path, networks: dict[str, Mlp], scalars: dict[str, float] | None = None) -> Path:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(networks, scalars))
    tmp.replace(path)
    return path


def load(path) -> tuple[dict[str, Mlp], dict[str, float]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint: {err.strerror}", None, path) from err
    return decode(data, path)


def load_actor(path) -> Mlp:
    nets, _ = load(path)
    if "actor" not in nets:
        raise CheckpointError("checkpoint holds no 'actor' network", None, path)
    return nets["actor"]


def save_agent(path, agent, actor_only: bool = False) -> Path:
    if actor_only:
        return save(path, {"actor": agent.actor})
    return save(path, agent.networks(), {"log_alpha": float(agent.log_alpha[0])})

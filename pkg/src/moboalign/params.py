"""Named parameters, Adam state, and the binary checkpoint format.

Checkpoint layout (all integers little-endian, values little-endian f64)::

    magic     4 bytes  b"MOBO"
    version   u8       currently 1
    step      u64      global Adam step counter
    meta_len  u32      length of the UTF-8 JSON metadata blob
    meta      bytes    model/alignment config needed to rebuild the model
    count     u32      number of parameters
    per parameter, in insertion order:
        name_len u16, name (UTF-8)
        ndim     u8, dims u32 * ndim
        value, first moment, second moment: prod(dims) f64 each
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import ShapeError, Tape, Tensor

MAGIC = b"MOBO"
VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-9


class CheckpointError(ValueError):
    pass


class ParameterStore:
    """Ordered collection of named float64 parameters with Adam moments."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.meta: dict = {}

    def add(self, name: str, value) -> None:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __len__(self) -> int:
        return len(self.values)

    def names(self) -> list[str]:
        return list(self.values)

    def watch(self, tape: Tape) -> dict[str, Tensor]:
        """Register every parameter as a leaf on ``tape``."""
        return {name: tape.variable(val, name) for name, val in self.values.items()}

    def constants(self) -> dict[str, Tensor]:
        """Parameters as untracked tensors, for inference."""
        return {name: Tensor(val) for name, val in self.values.items()}

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for name in self.values:
            other.values[name] = self.values[name].copy()
            other.m[name] = self.m[name].copy()
            other.v[name] = self.v[name].copy()
        other.step = self.step
        other.meta = json.loads(json.dumps(self.meta))
        return other


def collect_grads(tape: Tape, leaves: dict[str, Tensor], node_grads) -> dict[str, np.ndarray]:
    """Map backward output onto parameter names; unreachable leaves get zeros."""
    out = {}
    for name, t in leaves.items():
        g = node_grads[t.node]
        out[name] = np.zeros_like(t.value) if g is None else g
    return out


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray], lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> None:
    """One bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if g.shape != store.values[name].shape:
            raise ShapeError(f"adam: gradient for {name!r} has shape {g.shape}, "
                             f"parameter has {store.values[name].shape}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.values[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def save_checkpoint(store: ParameterStore, path) -> None:
    meta = json.dumps(store.meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<BQI", VERSION, store.step, len(meta)), meta,
             struct.pack("<I", len(store))]
    for name, value in store.values.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        for arr in (value, store.m[name], store.v[name]):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> ParameterStore:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, step, meta_len = struct.unpack("<BQI", take(13))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    store = ParameterStore()
    store.step = step
    store.meta = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        arrs = [np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
                for _ in range(3)]
        store.add(name, arrs[0])
        store.m[name] = arrs[1]
        store.v[name] = arrs[2]
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return store

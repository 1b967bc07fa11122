from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .tensor import Tensor

CHECKPOINT_VERSION = 1


class ParameterRegistry:
    """Named trainable tensors.

    Each parameter draws its initial value from an RNG keyed on
    ``(seed, crc32(name))``, so adding or removing one parameter never shifts
    the initialisation of the others.
    """

    def __init__(self, seed: int = 0, init_std: float = 0.02):
        self.seed = int(seed)
        self.init_std = init_std
        self._params: dict[str, Tensor] = {}

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def add(self, name: str, shape: tuple, init: str = "normal", std: float | None = None,
            value: np.ndarray | None = None) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if value is not None:
            data = np.array(value, dtype=np.float64).reshape(shape)
        elif init == "normal":
            data = truncated_normal(self._rng(name), shape, std if std is not None else self.init_std)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "uniform":
            bound = std if std is not None else 1.0
            data = self._rng(name).uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def num_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        for name, arr in state.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            t = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()
        if strict:
            missing = set(self._params) - set(state)
            if missing:
                raise KeyError(f"missing parameters {sorted(missing)}")


def truncated_normal(rng: np.random.Generator, shape: tuple, std: float) -> np.ndarray:
    """Normal(0, std) redrawn outside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


class Adam:
    def __init__(self, registry: ParameterRegistry, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, names: Iterable[str] | None = None):
        self.registry = registry
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.names = list(names) if names is not None else registry.names()
        self.t = 0
        self.m = {n: np.zeros(registry[n].shape) for n in self.names}
        self.v = {n: np.zeros(registry[n].shape) for n in self.names}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n in self.names:
            p = self.registry[n]
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[n]
            v = self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------- checkpoints
#
# layout: u8 version | u64 header length | JSON header | raw little-endian f64
# header = {"meta": {...}, "tensors": [{"name", "shape", "offset"}]}; offsets in
# bytes from the start of the data block.

def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f8"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True,
                        separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<BQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    version, hlen = struct.unpack_from("<BQ", raw, 0)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    start = struct.calcsize("<BQ")
    header = json.loads(raw[start:start + hlen])
    base = start + hlen
    out = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=base + e["offset"])
        out[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return out, header["meta"]

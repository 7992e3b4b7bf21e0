"""Named parameter collections and the binary checkpoint format."""

from __future__ import annotations

import json
import struct
from collections.abc import Iterator

import numpy as np

from .tensor import Tensor

MAGIC = b"MJAM"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Ordered name -> Tensor map. Insertion order is the iteration order."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def uniform(self, name: str, shape, fan_in: int, rng: np.random.Generator) -> Tensor:
        """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def n_values(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype))
        return out

    def copy(self) -> "ParamStore":
        return self.astype(self.dtype)

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, t in self._params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.shape}")
            t.data = arr.astype(self.dtype).copy()
            t.grad = np.zeros_like(t.data)


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Write ``MJAM`` + u32 version + u32 manifest length + JSON manifest + f32 data."""
    manifest = {
        "meta": meta or {},
        "tensors": [
            {"name": k, "shape": list(np.shape(v)), "dtype": "f32"} for k, v in arrays.items()
        ],
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an MJAM checkpoint")
    version, n = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    manifest = json.loads(raw[12:12 + n])
    offset = 12 + n
    arrays = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        arrays[entry["name"]] = data.reshape(entry["shape"]).astype(np.float32)
        offset += 4 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensor data")
    return arrays, manifest["meta"]

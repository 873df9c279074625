"""Named parameter collections and their flat binary container.

Container layout: magic ``DSPF``, version u32, parameter count u32, then per
parameter: name length u32, UTF-8 name, rank u32, dims (u32 each), values as
little-endian 32-bit floats. All integers little-endian. Round-trips of
float32 data are bit-exact.
"""

from __future__ import annotations

import hashlib
import os
import struct
from typing import Iterator

import numpy as np

from .tensor_core import BatchNormState, Tensor

MAGIC = b"DSPF"
VERSION = 1


class ParamSet:
    """Ordered name -> Tensor map for one network, with a freeze switch."""

    def __init__(self, name: str):
        self.name = name
        self.frozen = False
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data), requires_grad=trainable, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def trainable(self) -> list[Tensor]:
        return [t for t in self._params.values() if t.requires_grad]

    def bn_state(self, layer: str) -> BatchNormState:
        return BatchNormState(self._params[f"{layer}/rmean"],
                              self._params[f"{layer}/rvar"])

    def freeze(self) -> None:
        """Make every tensor a constant; gradients stop being recorded."""
        for t in self._params.values():
            t.requires_grad = False
        self.frozen = True

    def constant_view(self) -> "ParamSet":
        """A view sharing the same data arrays with gradients disabled.

        Forward passes through the view leave the original tensors entirely
        off the tape (their gradients stay absent, not merely zero), which is
        the fixed-network contract of the alternating phases.
        """
        view = ParamSet(self.name)
        view.frozen = True
        for name, t in self._params.items():
            shadow = Tensor(t.data, requires_grad=False, name=t.name)
            view._params[name] = shadow  # asarray passthrough: storage is shared
        return view

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def checksum(self, trainable_only: bool = False) -> str:
        """sha256 over values; ``trainable_only`` skips batch-norm running
        statistics, which move during train-mode forwards regardless of the
        optimizer."""
        h = hashlib.sha256()
        for name, t in self._params.items():
            if trainable_only and not name.endswith(("rmean", "rvar")) is False:
                pass
            if trainable_only and name.endswith(("/rmean", "/rvar")):
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype=np.float32).tobytes())
        return h.hexdigest()

    def as_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + name: t.data for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        """Overwrite parameter values in place; every tensor must be present."""
        for name, t in self._params.items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"missing parameter {key!r} in container")
            src = arrays[key]
            if src.shape != t.data.shape:
                raise ValueError(f"{key}: shape {src.shape} != {t.data.shape}")
            t.data[...] = src.astype(t.data.dtype)


def save_container(path: str | os.PathLike, arrays: dict[str, np.ndarray]) -> None:
    """Write named float arrays to a DSPF container (atomic: tmp then rename)."""
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            enc = name.encode("utf-8")
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_container(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a DSPF container")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    off = 12
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=size,
                                     offset=off).reshape(dims).copy()
        off += 4 * size
    return arrays


# ------------------------------------------------------------------
# Initialization helpers (He-uniform conv/fc, zero bias, unit-gamma BN)
# ------------------------------------------------------------------

def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
               dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def add_conv(ps: ParamSet, layer: str, cin: int, cout: int,
             rng: np.random.Generator, dtype, bn: bool = True) -> None:
    ps.add(f"{layer}/w", he_uniform(rng, (3, 3, cin, cout), 9 * cin, dtype))
    ps.add(f"{layer}/b", np.zeros(cout, dtype=dtype))
    if bn:
        ps.add(f"{layer}/gamma", np.ones(cout, dtype=dtype))
        ps.add(f"{layer}/beta", np.zeros(cout, dtype=dtype))
        ps.add(f"{layer}/rmean", np.zeros(cout, dtype=dtype), trainable=False)
        ps.add(f"{layer}/rvar", np.ones(cout, dtype=dtype), trainable=False)


def add_fc(ps: ParamSet, layer: str, din: int, dout: int,
           rng: np.random.Generator, dtype) -> None:
    ps.add(f"{layer}/w", he_uniform(rng, (din, dout), din, dtype))
    ps.add(f"{layer}/b", np.zeros(dout, dtype=dtype))


def rng_from(seed: int, *tags: int) -> np.random.Generator:
    """Deterministic generator derived from a seed and integer tags."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *tags])))

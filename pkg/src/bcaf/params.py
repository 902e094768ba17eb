"""Named parameter collection and its binary on-disk format.

Parameter files: magic ``BCFP``, version u32, then one record per
tensor: name length u32, UTF-8 name, rank u32, dims u32 each, float32
payload. Everything little-endian; round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from typing import Dict, Iterator, Tuple

import numpy as np

from bcaf.errors import FormatError
from bcaf.tensor import Tensor

MAGIC = b"BCFP"
VERSION = 1


class ParamSet:
    """Ordered mapping of stable names to trainable tensors."""

    def __init__(self):
        self._tensors: Dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor.param(data)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def keys(self):
        return self._tensors.keys()

    def values(self):
        return self._tensors.values()

    def view(self, prefix: str) -> Dict[str, Tensor]:
        """Sub-namespace: all tensors under ``prefix.`` keyed by suffix."""
        dot = prefix + "."
        return {
            name[len(dot):]: t
            for name, t in self._tensors.items()
            if name.startswith(dot)
        }

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, t in self._tensors.items():
            t.data = np.asarray(state[name], dtype=np.float32).reshape(t.data.shape)

    def num_values(self) -> int:
        return sum(t.size for t in self._tensors.values())


def save_params(path, params: ParamSet) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, t in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_params(path) -> Dict[str, np.ndarray]:
    """Read a parameter file back into name -> array, preserving order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    out: Dict[str, np.ndarray] = {}
    off = 8
    while off < len(blob):
        if off + 4 > len(blob):
            raise FormatError(f"{path}: truncated record header")
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        end = off + 4 * count
        if end > len(blob):
            raise FormatError(f"{path}: truncated payload for {name!r}")
        out[name] = np.frombuffer(blob[off:end], dtype="<f4").reshape(shape).copy()
        off = end
    return out

"""Deterministic random state.

All stochastic behaviour in the package (init, dropout, shuffling,
synthetic data) flows through an explicit RngState so that a single
64-bit seed reproduces a run bit-for-bit on any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _derive_seed(seed: int, tag: str) -> int:
    # Python's builtin hash() is salted per process; blake2b is stable.
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "little")) & 0xFFFFFFFFFFFFFFFF


class RngState:
    """A seeded PCG64 stream with stable child-stream derivation."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, tag: str) -> "RngState":
        """Independent stream for a named sub-task (worker, component)."""
        return RngState(_derive_seed(self.seed, tag))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return (self.gen.standard_normal(shape) * std).astype(np.float32)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.gen.uniform(low, high, shape).astype(np.float32)

    def random(self, shape) -> np.ndarray:
        # float64 uniforms in [0, 1); used for dropout keep decisions
        return self.gen.random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self.gen.integers(low, high, size=size)

    def poisson(self, lam: float, size=None):
        return self.gen.poisson(lam, size=size)

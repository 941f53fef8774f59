"""Deterministic, order-independent random streams for parallel Monte Carlo.

Every stochastic operation in this package draws from a stream addressed by
a (master_seed, stream_index) pair.  Streams are realized with the Philox
counter-based generator keyed by that pair, so a stream's output depends only
on its address, never on how many draws other streams made or on the order
in which worker threads reach it.  Sub-computations (permutation iteration i,
classifier fit inside iteration i, ...) get their own streams via `child`,
which folds a path of non-negative integers into a fresh stream index.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

_MAX_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class Seed:
    """Address of one random stream.

    The same (master_seed, stream_index) always yields the same generator
    state; distinct stream indexes under one master seed are statistically
    independent Philox streams.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self) -> None:
        for name in ("master_seed", "stream_index"):
            value = getattr(self, name)
            if not isinstance(value, int) or not 0 <= value <= _MAX_U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")

    def child(self, *path: int) -> "Seed":
        """Derive the stream for a sub-computation.

        The path is a sequence of non-negative integers (a purpose code
        followed by loop indexes, by convention).  Derivation hashes the
        parent stream index together with the path, so child streams of
        distinct parents never coincide by construction order.
        """
        if not path:
            raise ValueError("child() requires at least one path component")
        digest = hashlib.blake2b(digest_size=8)
        digest.update(struct.pack("<Q", self.stream_index))
        for part in path:
            if not isinstance(part, int) or not 0 <= part <= _MAX_U64:
                raise ValueError(f"path components must be unsigned 64-bit integers, got {part!r}")
            digest.update(struct.pack("<Q", part))
        return Seed(self.master_seed, int.from_bytes(digest.digest(), "little"))

    def generator(self) -> np.random.Generator:
        """Instantiate the numpy generator for this stream."""
        key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def spawn_integers(self, count: int) -> np.ndarray:
        """Draw `count` uint64 values from this stream (used to key kernels)."""
        return self.generator().integers(0, _MAX_U64, size=count, dtype=np.uint64, endpoint=True)

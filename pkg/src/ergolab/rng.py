"""Counter-based random streams.

A stream is identified by ``(seed, stream_id)`` and an optional path of
child indices.  Its 64-bit key is derived by the hash

    key = mix64(mix64(seed + GOLDEN) ^ mix64(stream_id + 2 * GOLDEN))
    child(j).key = mix64(key ^ mix64((j + 1) * GOLDEN))

with all arithmetic modulo 2**64 and ``mix64`` the splitmix64 finalizer.
Identical identifiers give identical keys on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import GOLDEN, MASK64, _MUL1, _MUL2, mix64_array


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def child_key(key: int, j: int) -> int:
    return mix64(key ^ mix64((j + 1) * GOLDEN))


def child_keys(keys: np.ndarray, j: int) -> np.ndarray:
    """Vectorised :func:`child_key` over an array of uint64 keys."""
    salt = np.uint64(mix64((j + 1) * GOLDEN))
    return mix64_array(np.asarray(keys, dtype=np.uint64) ^ salt)


def uniform_at(key: int, t: int) -> float:
    """The uniform draw attached to time ``t`` of the stream with ``key``."""
    z = mix64((key + (t & MASK64) * GOLDEN) & MASK64)
    return (z >> 11) * 2.0**-53


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    @property
    def key(self) -> int:
        k = mix64(mix64(self.seed + GOLDEN) ^ mix64(self.stream_id + 2 * GOLDEN))
        for j in self.path:
            k = child_key(k, j)
        return k

    def child(self, j: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + (int(j),))

    def generator(self) -> np.random.Generator:
        """A numpy generator seeded from this stream's key, for auxiliary draws."""
        return np.random.Generator(np.random.PCG64(self.key))

    def keys(self, start: int, count: int) -> np.ndarray:
        """Keys of children ``start .. start+count-1`` as a uint64 array."""
        j = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        salts = mix64_array(j * np.uint64(GOLDEN))
        return mix64_array(np.uint64(self.key) ^ salts)

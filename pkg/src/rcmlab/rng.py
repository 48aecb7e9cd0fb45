"""Counter-based keyed uniforms and stable seed derivation.

Every random quantity that must be shared between coupled constructions
(pair uniforms, per-vertex site and ghost marks) is a pure function of a
64-bit seed and integer keys.  Evaluating the same key twice, in any order or
process, returns the same value.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["mix64", "keyed_uniform", "pair_uniform_keys", "derive_seed", "rep_seeds", "stream_id"]

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / float(1 << 53)

MASK64 = (1 << 64) - 1


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 output function applied elementwise (wrapping uint64 arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(v) -> np.ndarray:
    if isinstance(v, (int, np.integer)):
        return np.atleast_1d(np.array(int(v) & MASK64, dtype=np.uint64))
    return np.atleast_1d(np.asarray(v).astype(np.uint64, copy=False))


def keyed_hash(seed: int, *keys) -> np.ndarray:
    """64-bit hash of (seed, key_1, ..., key_k); keys broadcast against each other."""
    h = mix64(_as_u64(seed))
    for k in keys:
        h = mix64(h ^ mix64(_as_u64(k)))
    return h


def keyed_uniform(seed: int, *keys) -> np.ndarray:
    """Uniform values in [0, 1) with 53-bit resolution, one per broadcast key tuple."""
    h = keyed_hash(seed, *keys)
    return (h >> _S11).astype(np.float64) * _INV53


def pair_uniform_keys(seed: int, a, b) -> np.ndarray:
    """Symmetric pair uniform: the unordered pair {a, b} is ordered before hashing."""
    a = _as_u64(a)
    b = _as_u64(b)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return keyed_uniform(seed, lo, hi)


def stream_id(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def derive_seed(master: int, *labels) -> int:
    """Stable 64-bit child seed for (master, labels...); labels may be str or int."""
    key = tuple(stream_id(x) if isinstance(x, str) else int(x) for x in labels)
    ss = np.random.SeedSequence(int(master) & MASK64, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])


def rep_seeds(master: int, stream: str, rep: int, k: int = 3) -> tuple[int, ...]:
    """``k`` independent 64-bit seeds for replication ``rep`` of a named stream."""
    ss = np.random.SeedSequence(int(master) & MASK64, spawn_key=(stream_id(stream), int(rep)))
    return tuple(int(x) for x in ss.generate_state(k, np.uint64))

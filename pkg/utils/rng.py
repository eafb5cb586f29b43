"""
Dispel Counter-Based Randomness
Philox4x64-10 streams addressed by (seed, purpose, block, row)
"""

import hashlib
from typing import Tuple

import numpy as np
from scipy.special import ndtri

from models.errors import ValidationError

U64_MASK = (1 << 64) - 1

# Philox emits four 64-bit words per counter increment
_WORDS_PER_STEP = 4


def _check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValidationError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed <= U64_MASK:
        raise ValidationError(f"seed {seed} is outside the unsigned 64-bit range")
    return seed


def _digest(seed: int, labels: Tuple, size: int) -> bytes:
    h = hashlib.blake2b(digest_size=size)
    h.update(seed.to_bytes(8, "little", signed=False))
    for label in labels:
        h.update(b"\x00")
        h.update(str(label).encode("utf-8"))
    return h.digest()


def derive_seed(seed: int, *labels) -> int:
    """Child seed for a named sub-task, e.g. derive_seed(seed, "run", 3)"""
    seed = _check_seed(seed)
    return int.from_bytes(_digest(seed, labels, 8), "little", signed=False)


def raw_to_uniform(raw: np.ndarray) -> np.ndarray:
    """Top 53 bits, centred in their cell: values lie strictly inside (0, 1)"""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


class CounterStream:
    """
    Random numbers as a pure function of (seed, purpose, block, row, index).

    Each (block, row) owns a fixed window of Philox counters, so any row range
    can be generated alone, in any order or on any worker, and yields the same
    values. Gaussians use the inverse normal CDF of the uniforms.
    """

    def __init__(self, seed: int, purpose: str):
        seed = _check_seed(seed)
        key = _digest(seed, (purpose,), 16)
        self.seed = seed
        self.purpose = purpose
        self._key = np.frombuffer(key, dtype="<u8").astype(np.uint64)

    def raw(self, block: int, start: int, stop: int, count: int) -> np.ndarray:
        """uint64 array of shape (stop - start, count)"""
        rows = stop - start
        if rows < 0 or start < 0:
            raise ValidationError(f"bad row range [{start}, {stop})")
        if rows == 0 or count == 0:
            return np.zeros((rows, count), dtype=np.uint64)
        steps = -(-count // _WORDS_PER_STEP)
        counter = (int(block) << 192) | (start * steps)
        gen = np.random.Philox(key=self._key, counter=counter)
        words = gen.random_raw(rows * steps * _WORDS_PER_STEP)
        return words.reshape(rows, steps * _WORDS_PER_STEP)[:, :count]

    def uniforms(self, block: int, start: int, stop: int, count: int) -> np.ndarray:
        return raw_to_uniform(self.raw(block, start, stop, count))

    def normals(self, block: int, start: int, stop: int, count: int) -> np.ndarray:
        return ndtri(self.uniforms(block, start, stop, count))

    def integers(self, block: int, start: int, stop: int, bounds: np.ndarray) -> np.ndarray:
        """One draw per row, uniform on [0, bounds[row])"""
        bounds = np.asarray(bounds, dtype=np.int64)
        u = self.uniforms(block, start, stop, 1)[:, 0]
        return np.minimum((u * bounds).astype(np.int64), np.maximum(bounds - 1, 0))

    def generator(self, *labels) -> np.random.Generator:
        """numpy Generator on a derived key, for permutation-style draws"""
        child = derive_seed(self.seed, self.purpose, *labels)
        return np.random.Generator(np.random.Philox(key=child))

"""Deterministic random streams.

One master seed drives every random draw.  Streams are addressed by a
string label plus integer indices and derived with
:class:`numpy.random.SeedSequence` spawn keys, so a chain's stream depends
only on ``(master_seed, label, chain index)``; never on how chains are
batched or how many worker threads run them.
"""
from __future__ import annotations

import hashlib

import numpy as np


def label_key(label: str) -> int:
    """Stable 32-bit integer for a derivation label."""
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:4], "little")


def derive(master_seed: int, label: str, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(label_key(label), *map(int, index)))


def generator(master_seed: int, label: str, *index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive(master_seed, label, *index)))


class SharedStream:
    """Serve lockstep draws for ``n`` chains from one generator.

    Used for single-chain runs and in tests; the draws of different chains are
    then not separable, which is fine when ``n == 1`` or chains are not
    compared individually.
    """

    def __init__(self, rng: np.random.Generator, n: int):
        self.rng = rng
        self.n = n

    def normal(self, width: int) -> np.ndarray:
        return self.rng.standard_normal((self.n, width))

    def uniform(self) -> np.ndarray:
        return self.rng.random(self.n)

    def gamma(self, shape: float) -> np.ndarray:
        return self.rng.standard_gamma(shape, self.n)


class ChainStreams:
    """Independent per-chain streams served in lockstep.

    Chain ``i`` owns ``generator(master_seed, label, i)``.  Draws are buffered
    per chain in blocks to keep the per-step cost vectorized; the sequence a
    chain sees depends only on its own call pattern, which is identical for
    every chain of an ensemble.
    """

    def __init__(self, master_seed: int, label: str, chain_ids, block: int = 64):
        self.chain_ids = np.asarray(chain_ids, dtype=np.int64)
        self.n = self.chain_ids.size
        self._gens = [generator(master_seed, label, int(i)) for i in self.chain_ids]
        self._block = block
        self._buffers: dict = {}

    def _take(self, key, draw) -> np.ndarray:
        buf = self._buffers.get(key)
        if buf is None or buf[1] >= buf[0].shape[1]:
            data = np.stack([draw(g, self._block) for g in self._gens])
            buf = [data, 0]
            self._buffers[key] = buf
        out = buf[0][:, buf[1]]
        buf[1] += 1
        return out

    def normal(self, width: int) -> np.ndarray:
        return self._take(("normal", width), lambda g, b: g.standard_normal((b, width)))

    def uniform(self) -> np.ndarray:
        return self._take(("uniform",), lambda g, b: g.random(b))

    def gamma(self, shape: float) -> np.ndarray:
        return self._take(("gamma", float(shape)), lambda g, b: g.standard_gamma(shape, b))


def as_stream(rng, n: int):
    if isinstance(rng, np.random.Generator):
        return SharedStream(rng, n)
    if rng.n != n:
        raise ValueError(f"stream serves {rng.n} chains, state holds {n}")
    return rng

"""Counter-based random streams.

Every draw is addressed by (seed, stream, block): the Philox key is the seed
and the counter's high words carry the stream tag and the block number, so a
block of paths always receives the same numbers no matter which worker
produces it or in which order blocks are generated.
"""
from __future__ import annotations

import zlib

import numpy as np

BLOCK = 2048


def stream_id(name: str) -> int:
    """Stable 32-bit tag for a named stream."""
    return zlib.crc32(name.encode())


def block_generator(seed: int, block: int, stream: str | int = "increments") -> np.random.Generator:
    sid = stream_id(stream) if isinstance(stream, str) else int(stream)
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, (int(seed) >> 64) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    counter = np.array([0, 0, int(block) & 0xFFFFFFFFFFFFFFFF, sid], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def blocks(n_paths: int, block: int = BLOCK):
    """(block index, first path, last path + 1) covering n_paths."""
    for b in range((n_paths + block - 1) // block):
        lo = b * block
        yield b, lo, min(n_paths, lo + block)


def normal_block(seed: int, b: int, size: int, shape: tuple[int, ...], stream="increments") -> np.ndarray:
    """Standard normals for paths of block b, shape (size, *shape).

    The full block is always drawn so a partial final block matches the prefix
    of what a larger run would produce.
    """
    g = block_generator(seed, b, stream)
    full = g.standard_normal((BLOCK,) + tuple(shape))
    return full[:size]


def uniform_block(seed: int, b: int, size: int, shape: tuple[int, ...], stream="uniform") -> np.ndarray:
    g = block_generator(seed, b, stream)
    return g.random((BLOCK,) + tuple(shape))[:size]

"""Named, seed-derived random streams.

Every consumer draws from its own substream keyed by ``(seed, name, *index)``,
so adding or skipping draws in one place never shifts another.
"""
from __future__ import annotations

import zlib

import numpy as np
import torch


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def substream(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def torch_seed(seed: int, *keys) -> int:
    return int(substream(seed, *keys).integers(0, 2**63 - 1))


def torch_generator(seed: int, *keys) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(torch_seed(seed, *keys))
    return g

"""Counter-based random streams keyed by (seed, purpose, index).

Every stochastic step draws from its own Philox stream so results do not
depend on execution order or on how work is split across workers.
"""
import zlib

import numpy as np


def _tag(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def keyed_rng(seed: int, *keys) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

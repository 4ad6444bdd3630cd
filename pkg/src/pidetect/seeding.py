"""Named random sub-streams derived from a single global seed.

Every stage draws from its own stream, keyed by a path such as
``("train/init", "primal")``, so changing one stage never perturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_words(parts) -> list[int]:
    words = []
    for part in parts:
        if isinstance(part, (int, np.integer)):
            if part < 0:
                raise ValueError("stream key integers must be non-negative")
            words.append(int(part))
        else:
            words.append(zlib.crc32(str(part).encode("utf-8")))
    return words


def derive_seed(seed: int, *parts) -> int:
    """Return a 63-bit integer seed for the sub-stream ``parts`` of ``seed``."""
    ss = np.random.SeedSequence([int(seed), *_key_words(parts)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def stream(seed: int, *parts) -> np.random.Generator:
    """A fresh generator for the named sub-stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *_key_words(parts)]))

"""Deterministic, platform-independent random streams.

Every random draw in the package comes from a PCG64 generator keyed by
(seed, stream label, *indices). PCG64 and SeedSequence produce identical
sequences on every platform, which is what makes batch plans, mixup draws,
and parameter initialization reproducible across machines.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    return int(part) & _MASK


def stream_rng(seed: int, *key: int | str) -> np.random.Generator:
    """A fresh generator for the stream identified by (seed, *key).

    Distinct keys give statistically independent streams; identical keys
    give identical sequences.
    """
    entropy = [_key_part(seed)] + [_key_part(p) for p in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

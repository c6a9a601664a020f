"""Deterministic random streams.

All randomness in the pipeline flows through counter-based Philox generators
keyed by (seed, tags). A stream is fully determined by its key, independent
of call order in other streams, and stable across platforms and runs. Tags
are arbitrary strings/ints naming the consumer, e.g.
``stream(seed, "loader", dataset_name, "shuffle")``.

The 128-bit Philox key is the first 16 bytes of
``sha256("<seed>/<tag>/<tag>/...")``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *tags) -> int:
    text = "/".join([str(int(seed))] + [str(t) for t in tags])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent Philox generator for (seed, tags)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *tags)))

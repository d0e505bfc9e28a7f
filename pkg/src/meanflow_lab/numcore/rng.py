"""Seeded, splittable random streams.

Every stream is a Philox (counter-based) generator keyed by a seed plus a path
of labels, so independent consumers (batches, steps, records) never share
state and can be re-created in any order.
"""

from __future__ import annotations

import hashlib

import numpy as np

Rng = np.random.Generator


def _label_to_int(label: int | str) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"rng labels must be non-negative, got {label}")
        return int(label)
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, *path: int | str) -> Rng:
    """Generator for ``seed`` split along ``path`` (ints or strings)."""
    entropy = [_label_to_int(seed)] + [_label_to_int(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *path: int | str) -> int:
    """A 64-bit child seed, for places that want an int rather than a generator."""
    ss = np.random.SeedSequence([_label_to_int(seed)] + [_label_to_int(p) for p in path])
    return int(ss.generate_state(1, dtype=np.uint64)[0])

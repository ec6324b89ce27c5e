"""Deterministic seeded ranking shared by the sampler and the shuffler.

Every random choice in the pipeline reduces to ranking items by
SHA-256(seed || context || item key). Distinct inputs give distinct
digests (collisions are negligible), so sorting by digest induces a
uniform random permutation: taking the k smallest ranks is a uniform
sample without replacement, and ordering by rank is a uniform shuffle.
The construction is counter-based, has no hidden state, and reproduces
bit-for-bit on any platform or runtime.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

_SEP = b"\x1f"


def rank_key(seed: int, *parts: str | int) -> bytes:
    """32-byte rank for one item under (seed, context parts).

    Parts are length-separated so distinct tuples never collide by
    concatenation (("ab", "c") vs ("a", "bc")).
    """
    digest = hashlib.sha256()
    digest.update(seed.to_bytes(8, "big", signed=False))
    for part in parts:
        digest.update(_SEP)
        digest.update(str(part).encode("utf-8"))
    return digest.digest()


def select_indices(count: int, cap: int, seed: int, *context: str | int) -> list[int]:
    """Indices of a uniform without-replacement sample of size min(count, cap).

    Returned in ascending (original) order. Keyed only on (seed, context,
    within-sequence index), so the selection for one context never depends
    on any other context's items.
    """
    if count <= cap:
        return list(range(count))
    ranked = sorted(range(count), key=lambda i: rank_key(seed, *context, i))
    return sorted(ranked[:cap])


def shuffled_indices(count: int, seed: int, *context: str | int) -> list[int]:
    """A uniform permutation of range(count) keyed on (seed, context)."""
    return sorted(range(count), key=lambda i: rank_key(seed, *context, i))


def permute(items: Sequence, seed: int, *context: str | int) -> list:
    """The items reordered by :func:`shuffled_indices`."""
    return [items[i] for i in shuffled_indices(len(items), seed, *context)]

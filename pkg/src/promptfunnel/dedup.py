"""Per-language embedding-based fuzzy deduplication.

Semantics are fixed as greedy keep-first in input order: item i survives
iff its dot-product similarity to every earlier survivor is at or below
the threshold; strictly greater removes. The implementation compares
candidates against survivors in cache-friendly blocks, but the result is
defined — and tested — to equal the sequential rule exactly.

Vectors are unit-normalized on entry rather than trusting providers, so
the dot product is a bounded cosine similarity.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .model import RawRecord

DEFAULT_THRESHOLD = 0.8
DEFAULT_DIM = 256
DEFAULT_BLOCK_SIZE = 512

_CACHE_MAGIC = b"PFVC"
_CACHE_VERSION = 1
_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR_DTYPE = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class DimensionMismatch(ValueError):
    pass


class AlignmentMismatch(ValueError):
    pass


class ProviderFailure(RuntimeError):
    """An embedding batch failed; the whole batch may be retried."""

    def __init__(self, index: int, detail: str = ""):
        self.index = index
        super().__init__(f"embedding failed at prompt index {index}" + (f": {detail}" if detail else ""))


class EmbeddingProvider(Protocol):
    dim: int

    def embed_batch(self, prompts: Sequence[str]) -> np.ndarray: ...


class HashedNgramEmbedder:
    """Offline deterministic embedding: hashed character trigram frequencies.

    Each trigram of the text is hashed (BLAKE2b, so the bucket assignment
    is stable across platforms and runs) into one of ``dim`` buckets;
    bucket counts are L2-normalized. Texts shorter than the n-gram width
    contribute themselves as a single gram.
    """

    def __init__(self, dim: int = DEFAULT_DIM, ngram: int = 3):
        if dim < 2:
            raise ValueError(f"dim must be >= 2, got {dim}")
        self.dim = dim
        self.ngram = ngram

    def buckets(self, text: str) -> list[int]:
        if len(text) >= self.ngram:
            grams = [text[i : i + self.ngram] for i in range(len(text) - self.ngram + 1)]
        else:
            grams = [text]
        return [
            int.from_bytes(hashlib.blake2b(g.encode("utf-8"), digest_size=8).digest(), "big")
            % self.dim
            for g in grams
        ]

    def embed_batch(self, prompts: Sequence[str]) -> np.ndarray:
        vectors = np.zeros((len(prompts), self.dim), dtype=np.float64)
        for row, text in enumerate(prompts):
            if not text:
                raise ProviderFailure(row, "empty prompt")
            for bucket in self.buckets(text):
                vectors[row, bucket] += 1.0
        return vectors


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Copy with unit-norm rows; zero or non-finite rows are an error."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d batch of vectors, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("embedding contains non-finite values")
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return matrix / norms


def embed_batch(prompts: Sequence[str], provider: EmbeddingProvider) -> np.ndarray:
    """One unit-norm vector per prompt; fails atomically on provider error."""
    vectors = np.asarray(provider.embed_batch(prompts), dtype=np.float64)
    if vectors.shape != (len(prompts), provider.dim):
        raise DimensionMismatch(
            f"provider returned shape {vectors.shape}, expected {(len(prompts), provider.dim)}"
        )
    return normalize_rows(vectors)


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two equal-dimension unit vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(a @ b)


@dataclass(frozen=True)
class DedupResult:
    """Greedy keep-first outcome over one input sequence.

    ``survivors`` and the removed indices partition range(n); every
    removed entry names the earliest survivor that eliminated it and
    their similarity.
    """

    survivors: tuple[int, ...]
    removed: tuple[tuple[int, int, float], ...]

    @property
    def removal_rate(self) -> float:
        total = len(self.survivors) + len(self.removed)
        return len(self.removed) / total if total else 0.0


def pairwise_dedup(
    vectors: np.ndarray | Sequence[np.ndarray],
    threshold: float = DEFAULT_THRESHOLD,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> DedupResult:
    """Greedy keep-first dedup over unit vectors, computed in blocks.

    For each block of candidates, similarities against all previously
    committed survivors come from one matrix product; candidates are then
    committed one at a time so survivors created inside the block are
    honoured. Equivalent to the pure sequential scan for every block size.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.size == 0:
        return DedupResult(survivors=(), removed=())
    vectors = normalize_rows(vectors)
    count, dim = vectors.shape
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")

    packed = np.empty((count, dim), dtype=np.float64)  # survivor rows, in commit order
    survivors: list[int] = []
    removed: list[tuple[int, int, float]] = []
    for start in range(0, count, block_size):
        block = vectors[start : start + block_size]
        against_previous = block @ packed[: len(survivors)].T if survivors else None
        within_block = block @ block.T
        committed_before_block = len(survivors)
        block_survivor_rows: list[int] = []
        for row in range(block.shape[0]):
            culprit = -1
            culprit_similarity = 0.0
            if against_previous is not None:
                hits = np.flatnonzero(against_previous[row] > threshold)
                if hits.size:
                    culprit = survivors[hits[0]]
                    culprit_similarity = float(against_previous[row, hits[0]])
            if culprit < 0 and block_survivor_rows:
                local = within_block[row, block_survivor_rows]
                hits = np.flatnonzero(local > threshold)
                if hits.size:
                    culprit = start + block_survivor_rows[hits[0]]
                    culprit_similarity = float(local[hits[0]])
            if culprit < 0:
                packed[len(survivors)] = block[row]
                survivors.append(start + row)
                block_survivor_rows.append(row)
            else:
                removed.append((start + row, culprit, culprit_similarity))
        del committed_before_block
    return DedupResult(survivors=tuple(survivors), removed=tuple(removed))


def dedup_corpus(
    records: Sequence[RawRecord],
    vectors: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> tuple[list[RawRecord], dict[str, DedupResult]]:
    """Dedup independently within each language group.

    ``vectors`` must align one-to-one with ``records``. Cross-language
    pairs are never compared. Survivors come back in original input
    order; per-language results are indexed within that language's
    subsequence.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(records) != vectors.shape[0]:
        raise AlignmentMismatch(f"{len(records)} records but {vectors.shape[0]} vectors")
    group_positions: dict[str, list[int]] = {}
    for position, record in enumerate(records):
        group_positions.setdefault(record.language, []).append(position)
    results: dict[str, DedupResult] = {}
    kept_positions: list[int] = []
    for language, positions in group_positions.items():
        result = pairwise_dedup(vectors[positions], threshold=threshold, block_size=block_size)
        results[language] = result
        kept_positions.extend(positions[i] for i in result.survivors)
    kept_positions.sort()
    return [records[i] for i in kept_positions], results


def save_vector_cache(path: str | Path, ids: Sequence[str], vectors: np.ndarray) -> None:
    """Versioned binary id->vector cache; round-trips bit-exactly."""
    vectors = np.asarray(vectors)
    if vectors.dtype not in _TAG_FOR_DTYPE:
        raise ValueError(f"unsupported dtype {vectors.dtype}")
    if len(ids) != vectors.shape[0]:
        raise AlignmentMismatch(f"{len(ids)} ids but {vectors.shape[0]} vectors")
    dim = int(vectors.shape[1]) if vectors.ndim == 2 else 0
    tag = _TAG_FOR_DTYPE[vectors.dtype]
    with open(path, "wb") as handle:
        handle.write(_CACHE_MAGIC)
        handle.write(struct.pack("<HBIQ", _CACHE_VERSION, tag, dim, len(ids)))
        little = vectors.astype(vectors.dtype.newbyteorder("<"), copy=False)
        for record_id, row in zip(ids, little):
            encoded = record_id.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
            handle.write(row.tobytes())


def load_vector_cache(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != _CACHE_MAGIC:
            raise ValueError(f"{path}: not a vector cache file")
        version, tag, dim, count = struct.unpack("<HBIQ", handle.read(15))
        if version != _CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        dtype = _DTYPE_TAGS.get(tag)
        if dtype is None:
            raise ValueError(f"{path}: unknown dtype tag {tag}")
        ids: list[str] = []
        vectors = np.empty((count, dim), dtype=dtype)
        row_bytes = dim * dtype.itemsize
        for row in range(count):
            (id_len,) = struct.unpack("<I", handle.read(4))
            ids.append(handle.read(id_len).decode("utf-8"))
            vectors[row] = np.frombuffer(handle.read(row_bytes), dtype=dtype)
    return ids, vectors.astype(dtype.newbyteorder("="))

"""Per-language capped random sampling with seeded determinism.

Each language group is sampled independently: items are ranked by
SHA-256(seed, "sample", language, within-group index) and the cap
smallest ranks survive. Because the key never involves other groups,
editing language A's records cannot change language B's selection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .keying import select_indices
from .model import RawRecord

SAMPLE_CONTEXT = "sample"


@dataclass(frozen=True)
class SamplePlan:
    seed: int
    cap: int = 25_000

    def __post_init__(self) -> None:
        if self.cap < 1:
            raise ValueError(f"sample cap must be >= 1, got {self.cap}")


def sample_per_language(records: Sequence[RawRecord], plan: SamplePlan) -> list[RawRecord]:
    """Uniformly keep at most ``plan.cap`` records per language.

    Output is ordered by (language, original position). Groups smaller
    than the cap pass through whole; larger groups are sampled without
    replacement by the seeded rank construction in :mod:`.keying`.
    """
    groups: dict[str, list[RawRecord]] = {}
    for record in records:
        groups.setdefault(record.language, []).append(record)
    sampled: list[RawRecord] = []
    for language in sorted(groups):
        group = groups[language]
        chosen = select_indices(len(group), plan.cap, plan.seed, SAMPLE_CONTEXT, language)
        sampled.extend(group[i] for i in chosen)
    return sampled


def per_language_counts(records: Sequence[RawRecord]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for record in records:
        counts[record.language] = counts.get(record.language, 0) + 1
    return counts

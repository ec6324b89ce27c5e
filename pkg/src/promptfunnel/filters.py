"""The ordered cleaning funnel: pure keep/drop predicates with accounting.

Each stage is a deterministic, side-effect-free function from a record
to either the (possibly annotated) record or a :class:`Drop` carrying a
reason code. ``run_funnel`` threads records through the stages in order
and produces a :class:`FunnelReport` whose counts chain exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

from .ingest import Tokenizer, turn_token_count
from .langid import Detector, DetectorError
from .model import (
    DEFAULT_ANONYMIZATION_MARKER,
    DEFAULT_KEYWORDS,
    DEFAULT_UNKNOWN_LANGUAGES,
    FunnelReport,
    FunnelStage,
    PipelineConfig,
    RawRecord,
)

DEFAULT_STAGE_ORDER = (
    "moderation",
    "unknown_language",
    "anonymization",
    "model_keyword",
    "confidence",
    "token_limit",
)


@dataclass(frozen=True)
class Drop:
    reason: str


FilterFn = Callable[[RawRecord], "RawRecord | Drop"]


@dataclass(frozen=True)
class FilterStage:
    name: str
    apply: FilterFn


def moderation_filter(record: RawRecord) -> RawRecord | Drop:
    """Drop conversations carrying a precomputed moderation flag."""
    if record.moderation_flagged:
        return Drop("moderation_flagged")
    return record


def unknown_language_filter(
    record: RawRecord, unknown_languages: frozenset[str] = DEFAULT_UNKNOWN_LANGUAGES
) -> RawRecord | Drop:
    """Drop records labeled with a non-recognised or fictional language."""
    if record.language in unknown_languages:
        return Drop("unknown_language")
    return record


def anonymization_filter(
    record: RawRecord, marker: str = DEFAULT_ANONYMIZATION_MARKER
) -> RawRecord | Drop:
    """Drop prompts containing the anonymization placeholder substring.

    Case-insensitive substring match over the first human turn only. The
    default marker "name" matches NAME0, NAME1, ... placeholders — and,
    deliberately, any other occurrence of the substring: the rule is kept
    as blunt as the source convention it mirrors.
    """
    if marker in record.first_prompt().text.casefold():
        return Drop("anonymization_marker")
    return record


def model_keyword_filter(
    record: RawRecord, keywords: Sequence[str] = DEFAULT_KEYWORDS
) -> RawRecord | Drop:
    """Drop prompts that mention one of the assistant model names."""
    prompt = record.first_prompt().text.casefold()
    for keyword in keywords:
        if keyword in prompt:
            return Drop(f"keyword:{keyword}")
    return record


def confidence_filter(
    record: RawRecord, detector: Detector, threshold: float = 0.8
) -> RawRecord | Drop:
    """Drop records whose labeled language gets low detector confidence.

    The detector scores the first human turn; the confidence consulted is
    the mass assigned to the record's own label, not the argmax. Kept
    records carry the detector's Detection. Detector failures (no profile
    for the label, empty text) drop the record and are counted separately.
    """
    text = record.first_prompt().text
    try:
        confidence = detector.confidence_for(text, record.language)
    except DetectorError:
        return Drop("detector_error")
    if confidence < threshold:
        return Drop("low_confidence")
    return replace(record, detection=detector.detect(text))


def token_limit_filter(
    record: RawRecord, tokenizer: Tokenizer | None = None, token_limit: int = 512
) -> RawRecord | Drop:
    """Drop records whose first prompt plus first response exceed the limit.

    Strictly-greater-than comparison: a total of exactly ``token_limit``
    is kept. Precomputed per-turn counts are trusted when present.
    """
    total = turn_token_count(record.first_prompt(), tokenizer)
    response = record.first_response()
    if response is not None:
        total += turn_token_count(response, tokenizer)
    if total > token_limit:
        return Drop("over_token_limit")
    return record


def default_stages(
    config: PipelineConfig,
    detector: Detector,
    tokenizer: Tokenizer | None = None,
) -> list[FilterStage]:
    """The six cleaning stages in their canonical order."""
    return [
        FilterStage("moderation", moderation_filter),
        FilterStage(
            "unknown_language",
            lambda r: unknown_language_filter(r, config.unknown_languages),
        ),
        FilterStage(
            "anonymization",
            lambda r: anonymization_filter(r, config.anonymization_marker),
        ),
        FilterStage(
            "model_keyword",
            lambda r: model_keyword_filter(r, config.keyword_list),
        ),
        FilterStage(
            "confidence",
            lambda r: confidence_filter(r, detector, config.confidence_threshold),
        ),
        FilterStage(
            "token_limit",
            lambda r: token_limit_filter(r, tokenizer, config.token_limit),
        ),
    ]


def run_funnel(
    records: Iterable[RawRecord], stages: Sequence[FilterStage]
) -> tuple[list[RawRecord], FunnelReport]:
    """Apply stages in order; return surviving records plus the report.

    Survivors preserve input order. Per-stage counts equal what a
    stage-at-a-time sweep would produce; records flow one at a time, so
    memory holds only the survivors.
    """
    if not stages:
        raise ValueError("at least one filter stage is required")
    inputs = [0] * len(stages)
    kept_counts = [0] * len(stages)
    breakdowns: list[dict[str, int]] = [{} for _ in stages]
    kept: list[RawRecord] = []
    for record in records:
        current = record
        survived = True
        for position, stage in enumerate(stages):
            inputs[position] += 1
            result = stage.apply(current)
            if isinstance(result, Drop):
                reasons = breakdowns[position]
                reasons[result.reason] = reasons.get(result.reason, 0) + 1
                survived = False
                break
            kept_counts[position] += 1
            current = result
        if survived:
            kept.append(current)
    report = FunnelReport(
        stages=tuple(
            FunnelStage(
                name=stage.name,
                input_count=inputs[position],
                kept_count=kept_counts[position],
                removed_count=inputs[position] - kept_counts[position],
                removed_breakdown=breakdowns[position],
            )
            for position, stage in enumerate(stages)
        )
    )
    return kept, report.validate()

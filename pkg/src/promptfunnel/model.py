"""Domain types and invariants shared by every pipeline stage.

All types are immutable values after construction and safe to share
between concurrent workers. Validation raises typed exceptions instead
of silently repairing data; the ingest layer decides what to do with a
rejected record.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, Mapping

DEFAULT_UNKNOWN_LANGUAGES = frozenset({"unknown", "Klingon", "xx", "zp", "zzp"})
DEFAULT_KEYWORDS = ("gpt", "vicuna", "alpaca", "llama", "koala", "claude", "guanaco")
DEFAULT_ANONYMIZATION_MARKER = "name"


class Role(str, Enum):
    HUMAN = "human"
    ASSISTANT = "assistant"


class FinishState(str, Enum):
    COMPLETE = "complete"
    TRUNCATED = "truncated"
    UNANSWERED = "unanswered"


class ConfigError(ValueError):
    """Invalid or missing pipeline configuration."""


class MalformedRecord(ValueError):
    """A record that violates a structural invariant.

    ``reason`` is a stable machine-readable code (e.g. ``empty_conversation``)
    used for rejection accounting.
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class InvariantViolation(ValueError):
    """A computed artifact violates one of its declared invariants."""


@dataclass(frozen=True)
class Detection:
    """Language-identification outcome for one text.

    ``confidence`` is the probability mass assigned to ``language``; when a
    ``runner_up`` is present its confidence never exceeds the winner's.
    """

    language: str
    confidence: float
    runner_up: tuple[str, float] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise InvariantViolation(f"confidence {self.confidence} outside [0, 1]")
        if self.runner_up is not None and self.runner_up[1] > self.confidence + 1e-12:
            raise InvariantViolation("runner-up confidence exceeds winner confidence")


@dataclass(frozen=True)
class Turn:
    """One message in a conversation."""

    role: Role
    text: str
    token_count: int | None = None

    def __post_init__(self) -> None:
        if self.token_count is not None and self.token_count < 0:
            raise MalformedRecord("negative_token_count", f"token_count={self.token_count}")


@dataclass(frozen=True)
class RawRecord:
    """One source conversation, as read from the input corpus.

    ``extra`` preserves unknown input fields verbatim so they survive a
    round-trip through the pipeline.
    """

    id: str
    source_model: str
    language: str
    turns: tuple[Turn, ...]
    moderation_flagged: bool
    detection: Detection | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def first_prompt(self) -> Turn:
        return self.turns[0]

    def first_response(self) -> Turn | None:
        for turn in self.turns[1:]:
            if turn.role is Role.ASSISTANT:
                return turn
        return None


def validate_record(record: RawRecord) -> RawRecord:
    """Return ``record`` unchanged if its invariants hold.

    Raises :class:`MalformedRecord` with a stable reason code otherwise.
    Idempotent: validating a validated record is a no-op.
    """
    if not record.id:
        raise MalformedRecord("empty_id")
    if not record.language.strip():
        raise MalformedRecord("empty_language", f"record {record.id}")
    if not record.turns:
        raise MalformedRecord("empty_conversation", f"record {record.id}")
    if record.turns[0].role is not Role.HUMAN:
        raise MalformedRecord("non_human_first_turn", f"record {record.id}")
    return record


def is_unknown_language(
    code: str, unknown_languages: frozenset[str] = DEFAULT_UNKNOWN_LANGUAGES
) -> bool:
    """Whether a language label belongs to the configured non-recognised/fictional set."""
    return code in unknown_languages


@dataclass(frozen=True)
class FunnelStage:
    """Per-stage accounting row: every input record is either kept or removed."""

    name: str
    input_count: int
    kept_count: int
    removed_count: int
    removed_breakdown: Mapping[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class FunnelReport:
    """Ordered per-stage accounting for a cleaning funnel.

    Invariants (checked by :meth:`validate`):
      * input = kept + removed within every stage,
      * kept of stage i equals input of stage i+1,
      * kept counts never increase along the funnel.
    """

    stages: tuple[FunnelStage, ...]

    def validate(self) -> "FunnelReport":
        previous_kept: int | None = None
        for stage in self.stages:
            if stage.input_count != stage.kept_count + stage.removed_count:
                raise InvariantViolation(
                    f"stage {stage.name}: input {stage.input_count} != "
                    f"kept {stage.kept_count} + removed {stage.removed_count}"
                )
            if min(stage.input_count, stage.kept_count, stage.removed_count) < 0:
                raise InvariantViolation(f"stage {stage.name}: negative count")
            if previous_kept is not None:
                if stage.input_count != previous_kept:
                    raise InvariantViolation(
                        f"stage {stage.name}: input {stage.input_count} breaks chain "
                        f"(previous kept {previous_kept})"
                    )
                if stage.kept_count > previous_kept:
                    raise InvariantViolation(f"stage {stage.name}: kept count increased")
            previous_kept = stage.kept_count
        return self

    def initial_count(self) -> int:
        return self.stages[0].input_count if self.stages else 0

    def final_kept(self) -> int:
        return self.stages[-1].kept_count if self.stages else 0

    def stage(self, name: str) -> FunnelStage:
        for entry in self.stages:
            if entry.name == name:
                return entry
        raise KeyError(name)

    def extended(self, stage: FunnelStage) -> "FunnelReport":
        """A new report with one more stage appended (re-validated)."""
        return FunnelReport(stages=self.stages + (stage,)).validate()


@dataclass(frozen=True)
class PromptResponsePair:
    """One curated prompt with its synthesized response: the output unit."""

    id: str
    language: str
    prompt: str
    response: str
    finish_state: FinishState


@dataclass(frozen=True)
class PipelineConfig:
    """All tunables for one pipeline run.

    ``seed`` has no default on purpose: sampling and shuffling are random,
    and reproducible runs require an explicit seed.
    """

    seed: int
    confidence_threshold: float = 0.8
    token_limit: int = 512
    sample_cap: int = 25_000
    dedup_threshold: float = 0.8
    keyword_list: tuple[str, ...] = DEFAULT_KEYWORDS
    anonymization_marker: str = DEFAULT_ANONYMIZATION_MARKER
    unknown_languages: frozenset[str] = DEFAULT_UNKNOWN_LANGUAGES
    max_response_tokens: int = 2048
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        for name in ("confidence_threshold", "dedup_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        for name in ("token_limit", "sample_cap", "max_response_tokens"):
            value = getattr(self, name)
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if not self.anonymization_marker:
            raise ConfigError("anonymization_marker must be nonempty")
        if any(k != k.casefold() for k in self.keyword_list):
            raise ConfigError("keyword_list entries must be lowercase")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "PipelineConfig":
        """Build a config from a parsed config-file mapping.

        Unknown keys are ignored (they may belong to CLI-level sections);
        a missing ``seed`` is a :class:`ConfigError` naming the key.
        """
        if "seed" not in mapping:
            raise ConfigError("missing required config key: seed")
        known = {f.name for f in fields(cls)}
        kwargs: dict[str, Any] = {k: v for k, v in mapping.items() if k in known}
        if "keyword_list" in kwargs:
            kwargs["keyword_list"] = tuple(str(k) for k in kwargs["keyword_list"])
        if "unknown_languages" in kwargs:
            kwargs["unknown_languages"] = frozenset(str(k) for k in kwargs["unknown_languages"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def fingerprint(self) -> str:
        """Stable hash of the full configuration, for manifests."""
        payload = {
            "seed": self.seed,
            "confidence_threshold": self.confidence_threshold,
            "token_limit": self.token_limit,
            "sample_cap": self.sample_cap,
            "dedup_threshold": self.dedup_threshold,
            "keyword_list": list(self.keyword_list),
            "anonymization_marker": self.anonymization_marker,
            "unknown_languages": sorted(self.unknown_languages),
            "max_response_tokens": self.max_response_tokens,
            "temperature": self.temperature,
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

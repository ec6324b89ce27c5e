"""Streaming corpus ingestion with precise error accounting.

Input format: one record per line (JSONL, UTF-8). Required fields:
``id``, ``model``, ``language``, ``turns`` (array of ``{role, text}``),
``moderation_flagged``. Optional ``turn_token_counts`` carries
precomputed per-turn token counts from the source corpus; when present
they are trusted and the tokenizer is never invoked. Unknown fields are
preserved verbatim on the record and written back out on serialization.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Protocol

from .model import Detection, InvariantViolation, MalformedRecord, RawRecord, Role, Turn, validate_record

_KNOWN_FIELDS = frozenset(
    {"id", "model", "language", "turns", "moderation_flagged", "turn_token_counts", "detection"}
)

# Han, kana, Hangul and CJK compatibility blocks: counted one token per codepoint.
_CJK_RANGE = "぀-ヿ㐀-䶿一-鿿豈-﫿가-힯"
_TOKEN_RE = re.compile(rf"[{_CJK_RANGE}]|[^\W{_CJK_RANGE}]+|[^\w\s]")


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...


class RuleTokenizer:
    """Deterministic fallback tokenizer.

    Counts maximal runs of word characters as one token each, every CJK
    codepoint as its own token, and every punctuation mark as its own
    token. Absolute counts differ from any model-specific tokenizer; the
    length-bounding semantics of the token filter are what matters.
    """

    def count(self, text: str) -> int:
        return len(_TOKEN_RE.findall(text))


DEFAULT_TOKENIZER = RuleTokenizer()


def count_tokens(text: str, tokenizer: Tokenizer | None = None) -> int:
    return (tokenizer or DEFAULT_TOKENIZER).count(text)


def turn_token_count(turn: Turn, tokenizer: Tokenizer | None = None) -> int:
    """Precomputed count when the source corpus supplied one, else tokenize."""
    if turn.token_count is not None:
        return turn.token_count
    return count_tokens(turn.text, tokenizer)


class MalformedLine(ValueError):
    """Raised in abort mode when a corpus line cannot be parsed."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


@dataclass
class IngestStats:
    lines_read: int = 0
    records_accepted: int = 0
    records_rejected: int = 0
    rejection_breakdown: Counter = field(default_factory=Counter)

    def check(self) -> "IngestStats":
        if self.lines_read != self.records_accepted + self.records_rejected:
            raise InvariantViolation(
                f"lines_read {self.lines_read} != accepted {self.records_accepted} "
                f"+ rejected {self.records_rejected}"
            )
        return self

    def to_json(self) -> dict[str, Any]:
        return {
            "lines_read": self.lines_read,
            "records_accepted": self.records_accepted,
            "records_rejected": self.records_rejected,
            "rejection_breakdown": dict(sorted(self.rejection_breakdown.items())),
        }


def record_from_json(doc: dict[str, Any]) -> RawRecord:
    """Parse one decoded JSON object into a validated RawRecord."""
    if not isinstance(doc, dict):
        raise MalformedRecord("not_an_object")
    for key in ("id", "model", "language", "turns", "moderation_flagged"):
        if key not in doc:
            raise MalformedRecord("missing_field", key)
    raw_turns = doc["turns"]
    if not isinstance(raw_turns, list):
        raise MalformedRecord("bad_turns", "turns must be an array")
    token_counts = doc.get("turn_token_counts")
    if token_counts is not None:
        if not isinstance(token_counts, list) or len(token_counts) != len(raw_turns):
            raise MalformedRecord("bad_token_counts", "must align one-to-one with turns")
    turns = []
    for position, raw in enumerate(raw_turns):
        if not isinstance(raw, dict) or "role" not in raw or "text" not in raw:
            raise MalformedRecord("bad_turn", f"turn {position}")
        try:
            role = Role(raw["role"])
        except ValueError:
            raise MalformedRecord("bad_role", f"turn {position}: {raw['role']!r}") from None
        text = raw["text"]
        if not isinstance(text, str):
            raise MalformedRecord("bad_text", f"turn {position}")
        count = None
        if token_counts is not None:
            count = token_counts[position]
            if not isinstance(count, int) or count < 0:
                raise MalformedRecord("bad_token_counts", f"turn {position}: {count!r}")
        turns.append(Turn(role=role, text=text, token_count=count))
    detection = None
    if isinstance(doc.get("detection"), dict):
        det = doc["detection"]
        detection = Detection(
            language=str(det.get("language", "")),
            confidence=float(det.get("confidence", 0.0)),
        )
    record = RawRecord(
        id=str(doc["id"]),
        source_model=str(doc["model"]),
        language=str(doc["language"]),
        turns=tuple(turns),
        moderation_flagged=bool(doc["moderation_flagged"]),
        detection=detection,
        extra={k: v for k, v in doc.items() if k not in _KNOWN_FIELDS},
    )
    return validate_record(record)


def record_to_json(record: RawRecord) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "id": record.id,
        "model": record.source_model,
        "language": record.language,
        "turns": [{"role": t.role.value, "text": t.text} for t in record.turns],
        "moderation_flagged": record.moderation_flagged,
    }
    if any(t.token_count is not None for t in record.turns):
        doc["turn_token_counts"] = [t.token_count or 0 for t in record.turns]
    if record.detection is not None:
        doc["detection"] = {
            "language": record.detection.language,
            "confidence": record.detection.confidence,
        }
    doc.update(record.extra)
    return doc


class CorpusReader:
    """Iterate validated records from a JSONL corpus, line by line.

    Memory use is bounded by the longest single line, never by file size.
    ``stats`` is complete only once iteration is exhausted.

    strictness:
        ``skip_bad``  malformed lines are counted and skipped;
        ``abort``     the first malformed line raises MalformedLine.
    """

    def __init__(self, path: str | Path, strictness: str = "skip_bad", repair_text: bool = False):
        if strictness not in ("skip_bad", "abort"):
            raise ValueError(f"unknown strictness {strictness!r}")
        self.path = Path(path)
        if not self.path.is_file():
            raise FileNotFoundError(self.path)
        self.strictness = strictness
        self.repair_text = repair_text
        self.stats = IngestStats()

    def __iter__(self) -> Iterator[RawRecord]:
        decode_errors = "replace" if self.repair_text else "strict"
        with open(self.path, "rb") as handle:
            for line_no, raw_line in enumerate(handle, start=1):
                self.stats.lines_read += 1
                try:
                    line = raw_line.decode("utf-8", errors=decode_errors)
                    record = record_from_json(json.loads(line))
                except MalformedRecord as exc:
                    self._reject(line_no, exc.reason)
                    continue
                except (json.JSONDecodeError, UnicodeDecodeError):
                    self._reject(line_no, "unparseable_line")
                    continue
                self.stats.records_accepted += 1
                yield record
        self.stats.check()

    def _reject(self, line_no: int, reason: str) -> None:
        if self.strictness == "abort":
            raise MalformedLine(line_no, reason)
        self.stats.records_rejected += 1
        self.stats.rejection_breakdown[reason] += 1


def read_corpus(path: str | Path, strictness: str = "skip_bad", repair_text: bool = False) -> CorpusReader:
    """Open a corpus for streaming; see :class:`CorpusReader`."""
    return CorpusReader(path, strictness=strictness, repair_text=repair_text)


def write_records(records, path: str | Path) -> int:
    """Serialize records back to the ingest JSONL schema. Returns the count."""
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record_to_json(record), ensure_ascii=False) + "\n")
            count += 1
    return count


def load_records(path: str | Path, strictness: str = "skip_bad") -> list[RawRecord]:
    return list(read_corpus(path, strictness=strictness))

"""Character n-gram language identification.

A small additive-smoothed n-gram model stands in for an external
detector: it is trained from bundled text, produces a calibrated
confidence per language via a softmax over mean log-likelihood scores,
and is pluggable behind the same interface an external detector would
implement (text in, Detection out).

Model: for each language and n-gram order n in {1..n_max}, observed
counts are normalized to frequencies f(g) (so duplicating training text
changes nothing), then smoothed over the closed vocabulary V_n (the
union of n-grams across all training languages) plus one out-of-vocabulary
bucket:

    P(g) = (f(g) + a) / (1 + a * (|V_n| + 1))

Unseen-in-language and out-of-vocabulary grams share the same mass
a / (1 + a * (|V_n| + 1)), so probabilities per order sum to one exactly.
A text is scored per language by the mean log-likelihood of all its
pooled 1..n_max grams; confidences are the softmax over those scores.
"""

from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .model import Detection

DEFAULT_N_MAX = 3
DEFAULT_SMOOTHING = 1e-4

_PROFILE_MAGIC = "promptfunnel-language-profiles"
_PROFILE_VERSION = 1


class DetectorError(ValueError):
    """Base class for language-identification failures."""


class EmptyTextError(DetectorError):
    pass


class NoProfilesError(DetectorError):
    pass


class UnknownTargetError(DetectorError):
    pass


class EmptyTrainingSetError(DetectorError):
    pass


class Detector(Protocol):
    """What the confidence filter needs from any language identifier."""

    def detect(self, text: str) -> Detection: ...

    def confidence_for(self, text: str, target: str) -> float: ...


def _normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text).casefold()


def _ngrams(text: str, n_max: int) -> list[str]:
    normalized = _normalize(text)
    grams: list[str] = []
    for n in range(1, n_max + 1):
        if len(normalized) < n:
            break
        grams.extend(normalized[i : i + n] for i in range(len(normalized) - n + 1))
    return grams


@dataclass(frozen=True)
class LanguageProfile:
    """Smoothed n-gram log-probabilities for one language.

    ``ngram_log_probs`` holds only grams observed in this language's
    training text; every other gram of order n (in or out of vocabulary)
    scores ``default_log_probs[n]``. ``vocab_sizes`` records |V_n| so the
    per-order normalization can be re-checked after deserialization.
    """

    language: str
    ngram_log_probs: Mapping[str, float]
    default_log_probs: Mapping[int, float]
    vocab_sizes: Mapping[int, int]
    smoothing_mass: float
    n_max: int = DEFAULT_N_MAX

    def log_prob(self, gram: str) -> float:
        found = self.ngram_log_probs.get(gram)
        if found is not None:
            return found
        return self.default_log_probs[len(gram)]

    def order_probability_sums(self) -> dict[int, float]:
        """Total probability mass per order over V_n plus the OOV bucket."""
        sums: dict[int, float] = {}
        seen_counts: Counter = Counter()
        for gram, log_p in self.ngram_log_probs.items():
            order = len(gram)
            sums[order] = sums.get(order, 0.0) + math.exp(log_p)
            seen_counts[order] += 1
        for order in range(1, self.n_max + 1):
            unseen = self.vocab_sizes[order] - seen_counts[order] + 1
            sums[order] = sums.get(order, 0.0) + unseen * math.exp(self.default_log_probs[order])
        return sums


def train_profiles(
    labeled_texts: Iterable[tuple[str, str]],
    n_max: int = DEFAULT_N_MAX,
    smoothing: float = DEFAULT_SMOOTHING,
) -> list[LanguageProfile]:
    """Train one profile per language from (language, text) pairs.

    Aggregation is order-free (pure counting), so any permutation of the
    training stream yields identical profiles.
    """
    if smoothing <= 0:
        raise ValueError(f"smoothing must be positive, got {smoothing}")
    counts: dict[str, list[Counter]] = {}
    for language, text in labeled_texts:
        per_order = counts.setdefault(language, [Counter() for _ in range(n_max + 1)])
        normalized = _normalize(text)
        for n in range(1, n_max + 1):
            if len(normalized) < n:
                continue
            per_order[n].update(normalized[i : i + n] for i in range(len(normalized) - n + 1))
    if not counts:
        raise EmptyTrainingSetError("no training texts supplied")

    vocab_sizes = {
        n: len(set().union(*(counts[lang][n].keys() for lang in counts)))
        for n in range(1, n_max + 1)
    }
    profiles = []
    for language in sorted(counts):
        log_probs: dict[str, float] = {}
        defaults: dict[int, float] = {}
        for n in range(1, n_max + 1):
            order_counts = counts[language][n]
            total = sum(order_counts.values())
            denom = 1.0 + smoothing * (vocab_sizes[n] + 1)
            if total == 0:
                # No text of this order: fall back to uniform over V_n + OOV.
                defaults[n] = math.log(1.0 / (vocab_sizes[n] + 1))
                continue
            defaults[n] = math.log(smoothing / denom)
            for gram, count in order_counts.items():
                log_probs[gram] = math.log((count / total + smoothing) / denom)
        profiles.append(
            LanguageProfile(
                language=language,
                ngram_log_probs=log_probs,
                default_log_probs=defaults,
                vocab_sizes=dict(vocab_sizes),
                smoothing_mass=smoothing,
                n_max=n_max,
            )
        )
    return profiles


class NgramDetector:
    """Scores texts against a fixed profile set.

    Lookup tables are merged across profiles at construction so one dict
    probe per gram covers every language. Immutable afterwards; safe for
    unrestricted concurrent use.
    """

    def __init__(self, profiles: Sequence[LanguageProfile]):
        if not profiles:
            raise NoProfilesError("at least one language profile is required")
        by_language = {p.language: p for p in profiles}
        if len(by_language) != len(profiles):
            raise ValueError("duplicate language in profile set")
        self.languages = sorted(by_language)
        self._profiles = [by_language[lang] for lang in self.languages]
        self.n_max = max(p.n_max for p in self._profiles)
        self._defaults = {
            n: np.array(
                [p.default_log_probs.get(n, 0.0) for p in self._profiles], dtype=np.float64
            )
            for n in range(1, self.n_max + 1)
        }
        merged: dict[str, np.ndarray] = {}
        for column, profile in enumerate(self._profiles):
            for gram, log_p in profile.ngram_log_probs.items():
                row = merged.get(gram)
                if row is None:
                    row = self._defaults[len(gram)].copy()
                    merged[gram] = row
                row[column] = log_p
        self._merged = merged

    def scores(self, text: str) -> np.ndarray:
        """Mean per-gram log-likelihood under each profile (language-sorted)."""
        if not text:
            raise EmptyTextError("cannot identify the language of empty text")
        grams = _ngrams(text, self.n_max)
        total = np.zeros(len(self.languages), dtype=np.float64)
        for gram in grams:
            row = self._merged.get(gram)
            total += row if row is not None else self._defaults[len(gram)]
        return total / len(grams)

    def confidences(self, text: str) -> np.ndarray:
        scores = self.scores(text)
        shifted = np.exp(scores - scores.max())
        return shifted / shifted.sum()

    def detect(self, text: str) -> Detection:
        confidences = self.confidences(text)
        # np.argmax returns the first maximum; languages are sorted, so ties
        # resolve to the lexicographically smallest tag.
        best = int(np.argmax(confidences))
        runner_up = None
        if len(confidences) > 1:
            rest = np.delete(confidences, best)
            rest_langs = self.languages[:best] + self.languages[best + 1 :]
            second = int(np.argmax(rest))
            runner_up = (rest_langs[second], float(rest[second]))
        return Detection(
            language=self.languages[best],
            confidence=float(confidences[best]),
            runner_up=runner_up,
        )

    def confidence_for(self, text: str, target: str) -> float:
        """Softmax mass on ``target`` (not the argmax language)."""
        if target not in self.languages:
            raise UnknownTargetError(f"no profile for language {target!r}")
        confidences = self.confidences(text)
        return float(confidences[self.languages.index(target)])


def detect(text: str, profiles: Sequence[LanguageProfile]) -> Detection:
    return NgramDetector(profiles).detect(text)


def confidence_for(text: str, target: str, profiles: Sequence[LanguageProfile]) -> float:
    return NgramDetector(profiles).confidence_for(text, target)


def save_profiles(profiles: Sequence[LanguageProfile], path: str | Path) -> None:
    """Serialize profiles to a versioned JSON file; round-trips exactly."""
    document = {
        "magic": _PROFILE_MAGIC,
        "version": _PROFILE_VERSION,
        "profiles": [
            {
                "language": p.language,
                "n_max": p.n_max,
                "smoothing_mass": p.smoothing_mass,
                "vocab_sizes": {str(k): v for k, v in p.vocab_sizes.items()},
                "default_log_probs": {str(k): v for k, v in p.default_log_probs.items()},
                "ngram_log_probs": dict(p.ngram_log_probs),
            }
            for p in profiles
        ],
    }
    Path(path).write_text(json.dumps(document, ensure_ascii=False), encoding="utf-8")


def load_profiles(path: str | Path) -> list[LanguageProfile]:
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    if document.get("magic") != _PROFILE_MAGIC:
        raise ValueError(f"{path}: not a language-profile file")
    if document.get("version") != _PROFILE_VERSION:
        raise ValueError(f"{path}: unsupported profile version {document.get('version')}")
    return [
        LanguageProfile(
            language=entry["language"],
            ngram_log_probs=entry["ngram_log_probs"],
            default_log_probs={int(k): v for k, v in entry["default_log_probs"].items()},
            vocab_sizes={int(k): v for k, v in entry["vocab_sizes"].items()},
            smoothing_mass=entry["smoothing_mass"],
            n_max=entry["n_max"],
        )
        for entry in document["profiles"]
    ]


def bundled_training_texts() -> list[tuple[str, str]]:
    """(language, line) pairs from the text bundled with the package."""
    pairs: list[tuple[str, str]] = []
    data_dir = resources.files("promptfunnel").joinpath("data/langid")
    for entry in sorted(data_dir.iterdir(), key=lambda e: e.name):
        if not entry.name.endswith(".txt"):
            continue
        language = entry.name[: -len(".txt")]
        for line in entry.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line:
                pairs.append((language, line))
    return pairs


_BUILTIN_PROFILES: list[LanguageProfile] | None = None
_BUILTIN_DETECTOR: NgramDetector | None = None


def builtin_profiles() -> list[LanguageProfile]:
    """Profiles trained from the bundled multilingual text (cached)."""
    global _BUILTIN_PROFILES
    if _BUILTIN_PROFILES is None:
        _BUILTIN_PROFILES = train_profiles(bundled_training_texts())
    return _BUILTIN_PROFILES


def builtin_detector() -> NgramDetector:
    global _BUILTIN_DETECTOR
    if _BUILTIN_DETECTOR is None:
        _BUILTIN_DETECTOR = NgramDetector(builtin_profiles())
    return _BUILTIN_DETECTOR

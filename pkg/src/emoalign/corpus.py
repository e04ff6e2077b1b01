"""Corpus data model: emotion/language taxonomy, manifest I/O, size/duration
filtering, corpus statistics, and deterministic stratified splits.

Manifests are JSONL files with one utterance record per line and exactly the
fields {id, audio_path, sample_rate, duration_s, size_bytes, language,
emotion, dataset, split, synthetic}.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

__all__ = [
    "EmotionLabel",
    "EMOTIONS",
    "KNOWN_LANGUAGES",
    "SPLITS",
    "MANIFEST_FIELDS",
    "ManifestError",
    "Utterance",
    "Manifest",
    "SizeGroup",
    "FilterPolicy",
    "FilterReport",
    "normalize_language",
    "load_manifest",
    "save_manifest",
    "apply_filter_policy",
    "corpus_stats",
    "split_assign",
    "audio_file",
    "stable_hash",
]


class EmotionLabel(enum.IntEnum):
    """The seven emotion classes with stable integer codes."""

    NEUTRAL = 0
    HAPPY = 1
    SAD = 2
    ANGRY = 3
    SURPRISE = 4
    DISGUST = 5
    FEAR = 6

    @property
    def text(self) -> str:
        """Lowercase word form, e.g. ``EmotionLabel.HAPPY.text == "happy"``."""
        return self.name.lower()

    @classmethod
    def from_text(cls, token: str) -> "EmotionLabel":
        try:
            return cls[token.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown emotion token: {token!r}") from None


EMOTIONS: tuple[EmotionLabel, ...] = tuple(EmotionLabel)

# Languages with built-in synthesis timbres; any other lowercase code is
# accepted as an "other" language (useful for zero-shot corpora).
KNOWN_LANGUAGES: tuple[str, ...] = ("en", "fr", "de", "it", "zh", "es")

SPLITS: tuple[str, ...] = ("train", "dev", "test")

# On-disk JSONL key order.
MANIFEST_FIELDS: tuple[str, ...] = (
    "id",
    "audio_path",
    "sample_rate",
    "duration_s",
    "size_bytes",
    "language",
    "emotion",
    "dataset",
    "split",
    "synthetic",
)

_LANGUAGE_RE = re.compile(r"^[a-z][a-z0-9-]{0,15}$")


class ManifestError(ValueError):
    """Raised for malformed manifests, records, or filter configuration."""


def normalize_language(code: str) -> str:
    """Validate and canonicalize a language code (lowercase, ASCII, short)."""
    if not isinstance(code, str):
        raise ManifestError(f"language must be a string, got {type(code).__name__}")
    norm = code.strip().lower()
    if not _LANGUAGE_RE.match(norm):
        raise ManifestError(f"invalid language code: {code!r}")
    return norm


def stable_hash(text: str) -> int:
    """Stable 64-bit hash of a string (process-independent, for seeding)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class Utterance:
    """One audio record; immutable once constructed."""

    id: str
    audio_path: str
    sample_rate: int
    duration_s: float
    size_bytes: int
    language: str
    emotion: EmotionLabel
    dataset: str
    split: str
    synthetic: bool

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("utterance id must be nonempty")
        if isinstance(self.sample_rate, bool) or not isinstance(self.sample_rate, int):
            raise ManifestError(f"{self.id}: sample_rate must be an integer")
        if self.sample_rate <= 0:
            raise ManifestError(f"{self.id}: sample_rate must be positive")
        if not isinstance(self.duration_s, (int, float)) or isinstance(self.duration_s, bool):
            raise ManifestError(f"{self.id}: duration_s must be a number")
        if self.duration_s < 0:
            raise ManifestError(f"{self.id}: duration_s must be nonnegative")
        if isinstance(self.size_bytes, bool) or not isinstance(self.size_bytes, int):
            raise ManifestError(f"{self.id}: size_bytes must be an integer")
        if self.size_bytes < 0:
            raise ManifestError(f"{self.id}: size_bytes must be nonnegative")
        if self.split not in SPLITS:
            raise ManifestError(f"{self.id}: unknown split token: {self.split!r}")
        if not isinstance(self.synthetic, bool):
            raise ManifestError(f"{self.id}: synthetic must be a boolean")
        object.__setattr__(self, "duration_s", float(self.duration_s))
        object.__setattr__(self, "language", normalize_language(self.language))
        if not isinstance(self.emotion, EmotionLabel):
            if isinstance(self.emotion, str):
                object.__setattr__(self, "emotion", EmotionLabel.from_text(self.emotion))
            else:
                object.__setattr__(self, "emotion", EmotionLabel(self.emotion))

    def to_row(self) -> dict:
        """JSON-ready dict in the on-disk key order."""
        row = {
            "id": self.id,
            "audio_path": self.audio_path,
            "sample_rate": self.sample_rate,
            "duration_s": self.duration_s,
            "size_bytes": self.size_bytes,
            "language": self.language,
            "emotion": self.emotion.text,
            "dataset": self.dataset,
            "split": self.split,
            "synthetic": self.synthetic,
        }
        return row

    @classmethod
    def from_row(cls, row: object, where: str = "record") -> "Utterance":
        if not isinstance(row, dict):
            raise ManifestError(f"{where}: expected a JSON object, got {type(row).__name__}")
        missing = [k for k in MANIFEST_FIELDS if k not in row]
        if missing:
            raise ManifestError(f"{where}: missing field {missing[0]!r}")
        extra = [k for k in row if k not in MANIFEST_FIELDS]
        if extra:
            raise ManifestError(f"{where}: unexpected field {extra[0]!r}")
        try:
            return cls(**{k: row[k] for k in MANIFEST_FIELDS})
        except (ManifestError, ValueError) as exc:
            raise ManifestError(f"{where}: {exc}") from None


@dataclass
class Manifest:
    """Ordered collection of utterances; iteration order is on-disk order."""

    entries: list[Utterance] = field(default_factory=list)
    provenance: str = ""

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> Utterance:
        return self.entries[index]


def load_manifest(path: str | Path) -> Manifest:
    """Load a JSONL manifest; errors name the offending 1-based line."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    entries: list[Utterance] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from None
            utt = Utterance.from_row(row, where=f"{path}: line {lineno}")
            if utt.id in seen:
                raise ManifestError(
                    f"{path}: line {lineno}: duplicate id {utt.id!r} "
                    f"(first seen on line {seen[utt.id]})"
                )
            seen[utt.id] = lineno
            entries.append(utt)
    return Manifest(entries=entries, provenance=str(path))


def save_manifest(manifest: Manifest | Iterable[Utterance], path: str | Path) -> None:
    """Write one canonical JSON object per line, keys in the on-disk order."""
    entries = manifest.entries if isinstance(manifest, Manifest) else list(manifest)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt in entries:
            fh.write(json.dumps(utt.to_row(), ensure_ascii=True))
            fh.write("\n")


def audio_file(utt: Utterance, base_dir: str | Path | None = None) -> Path:
    """Resolve an utterance's audio path, relative paths against ``base_dir``."""
    p = Path(utt.audio_path)
    if p.is_absolute() or base_dir is None:
        return p
    return Path(base_dir) / p


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SizeGroup:
    """A named set of datasets sharing one minimum-size threshold."""

    datasets: frozenset[str]
    threshold_bytes: int


def default_size_groups() -> dict[str, SizeGroup]:
    return {
        "small": SizeGroup(frozenset({"IEMOCAP", "MELD"}), 20 * 1024),
        "large": SizeGroup(frozenset({"MEAD", "MOSEI", "MSP"}), 50 * 1024),
    }


@dataclass(frozen=True)
class FilterPolicy:
    """Minimum-duration and per-dataset-group minimum-size rules.

    ``unknown_dataset`` controls datasets that belong to no size group:
    "keep" skips the size rule for them (the duration rule still applies);
    "apply-group" treats an unconfigured dataset as an error.
    """

    min_duration_s: float = 0.5
    size_groups: Mapping[str, SizeGroup] = field(default_factory=default_size_groups)
    unknown_dataset: str = "keep"

    def __post_init__(self) -> None:
        if self.min_duration_s < 0:
            raise ManifestError("min_duration_s must be nonnegative")
        if self.unknown_dataset not in ("keep", "apply-group"):
            raise ManifestError(
                f"unknown_dataset must be 'keep' or 'apply-group', got {self.unknown_dataset!r}"
            )
        claimed: dict[str, str] = {}
        for name, group in self.size_groups.items():
            if group.threshold_bytes < 0:
                raise ManifestError(f"size group {name!r}: threshold must be nonnegative")
            for ds in group.datasets:
                if ds in claimed:
                    raise ManifestError(
                        f"dataset {ds!r} belongs to both groups {claimed[ds]!r} and {name!r}"
                    )
                claimed[ds] = name

    def size_threshold(self, dataset: str) -> int | None:
        """Threshold for a dataset, or None when unconfigured and kept."""
        for group in self.size_groups.values():
            if dataset in group.datasets:
                return group.threshold_bytes
        if self.unknown_dataset == "apply-group":
            raise ManifestError(f"dataset {dataset!r} is not in any size group")
        return None


@dataclass
class FilterReport:
    """Per-rule rejection counts; an utterance failing both rules is counted
    under the duration rule (rules are checked in that order)."""

    input: int = 0
    kept: int = 0
    rejected_duration: int = 0
    rejected_size: int = 0

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "kept": self.kept,
            "rejected_duration": self.rejected_duration,
            "rejected_size": self.rejected_size,
        }


def apply_filter_policy(
    manifest: Manifest, policy: FilterPolicy | None = None
) -> tuple[Manifest, Manifest, FilterReport]:
    """Partition a manifest into (kept, rejected) per the policy, order preserved.

    An utterance is rejected iff its duration is below ``min_duration_s`` or
    its size is below its dataset group's threshold (strict less-than).
    """
    policy = policy or FilterPolicy()
    kept: list[Utterance] = []
    rejected: list[Utterance] = []
    report = FilterReport(input=len(manifest))
    for utt in manifest:
        if utt.duration_s < policy.min_duration_s:
            rejected.append(utt)
            report.rejected_duration += 1
            continue
        threshold = policy.size_threshold(utt.dataset)
        if threshold is not None and utt.size_bytes < threshold:
            rejected.append(utt)
            report.rejected_size += 1
            continue
        kept.append(utt)
    report.kept = len(kept)
    return (
        Manifest(entries=kept, provenance=manifest.provenance),
        Manifest(entries=rejected, provenance=manifest.provenance),
        report,
    )


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def corpus_stats(manifest: Manifest) -> dict:
    """Counts and total duration, overall and per (language, emotion, dataset)."""
    by_language: dict[str, int] = {}
    by_emotion: dict[str, int] = {}
    by_dataset: dict[str, int] = {}
    cells: dict[tuple[str, str, str], dict] = {}
    total_duration = 0.0
    for utt in manifest:
        emo = utt.emotion.text
        by_language[utt.language] = by_language.get(utt.language, 0) + 1
        by_emotion[emo] = by_emotion.get(emo, 0) + 1
        by_dataset[utt.dataset] = by_dataset.get(utt.dataset, 0) + 1
        key = (utt.language, emo, utt.dataset)
        cell = cells.setdefault(
            key,
            {"language": key[0], "emotion": key[1], "dataset": key[2],
             "count": 0, "duration_s": 0.0},
        )
        cell["count"] += 1
        cell["duration_s"] += utt.duration_s
        total_duration += utt.duration_s
    return {
        "total": {"count": len(manifest), "duration_s": total_duration},
        "by_language": dict(sorted(by_language.items())),
        "by_emotion": dict(sorted(by_emotion.items())),
        "by_dataset": dict(sorted(by_dataset.items())),
        "cells": [cells[key] for key in sorted(cells)],
    }


# ---------------------------------------------------------------------------
# Split assignment
# ---------------------------------------------------------------------------

def _split_counts(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Per-stratum (train, dev, test) counts: floor for dev/test, remainder to
    train; any split with a positive fraction gets at least one item when the
    stratum has >= 3 items."""
    f_train, f_dev, f_test = fractions
    # Tiny epsilon so exact products like 10 * 0.1 floor to 1, not 0.
    n_dev = int(n * f_dev + 1e-9)
    n_test = int(n * f_test + 1e-9)
    if n >= 3:
        if f_dev > 0 and n_dev == 0:
            n_dev = 1
        if f_test > 0 and n_test == 0:
            n_test = 1
    if f_train == 0.0:
        # No train share: hand the floor remainder to the larger fraction.
        spare = n - n_dev - n_test
        if spare > 0:
            if f_dev >= f_test:
                n_dev += spare
            else:
                n_test += spare
        n_train = 0
    else:
        n_train = n - n_dev - n_test
        if n_train <= 0:
            # Floors plus minimums overshot; reclaim from the larger split.
            need = 1 - n_train
            while need > 0 and (n_dev > 1 or n_test > 1):
                if n_test >= n_dev and n_test > 1:
                    n_test -= 1
                elif n_dev > 1:
                    n_dev -= 1
                else:
                    break
                need -= 1
            n_train = n - n_dev - n_test
    return n_train, n_dev, n_test


def split_assign(
    manifest: Manifest,
    fractions: tuple[float, float, float],
    seed: int,
) -> Manifest:
    """Deterministic stratified (language, emotion) split reassignment.

    ``fractions`` is (train, dev, test): each nonnegative, summing to 1.
    Every stratum with >= 3 items contributes to every split that has a
    positive fraction.
    """
    if len(fractions) != 3:
        raise ManifestError("fractions must be (train, dev, test)")
    if any(f < 0 for f in fractions):
        raise ManifestError(f"fractions must be nonnegative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ManifestError(f"fractions must sum to 1, got {fractions}")
    if seed < 0:
        raise ManifestError("seed must be nonnegative")

    strata: dict[tuple[str, int], list[int]] = {}
    for idx, utt in enumerate(manifest):
        strata.setdefault((utt.language, int(utt.emotion)), []).append(idx)

    assigned: dict[int, str] = {}
    for (language, emotion), indices in sorted(strata.items()):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([seed, stable_hash(language), emotion]))
        )
        order = [indices[i] for i in rng.permutation(len(indices))]
        n_train, n_dev, n_test = _split_counts(len(indices), tuple(fractions))
        for pos, idx in enumerate(order):
            if pos < n_train:
                assigned[idx] = "train"
            elif pos < n_train + n_dev:
                assigned[idx] = "dev"
            else:
                assigned[idx] = "test"

    entries = [
        dataclasses.replace(utt, split=assigned[idx])
        for idx, utt in enumerate(manifest)
    ]
    return Manifest(entries=entries, provenance=manifest.provenance)

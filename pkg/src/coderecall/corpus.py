"""Distractor corpus: ingestion, length-percentile filtering, seeded sampling.

Distractor functions pad the assembled contexts. A corpus is ingested from a
JSONL file (one ``{"id", "source"}`` object per line) or from a directory of
``*.py``/``*.txt`` files, filtered to the 25th-75th character-count
percentile band, and then sampled reproducibly per seed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

from .rng import SplitMix64

log = logging.getLogger(__name__)

FORMATS = ("jsonl", "dir")

P_LOW = 0.25
P_HIGH = 0.75


class CorpusError(ValueError):
    """Unreadable, malformed, or empty corpus input."""


TokenEstimator = Callable[[str], int]


def estimate_tokens(text: str) -> int:
    """Cheap deterministic token estimate.

    A run of alphanumerics/underscores counts as one token; every other
    non-space character counts as one token on its own. The estimate only
    has to be consistent across snippets (it feeds relative-size metrics),
    so no model tokenizer is required; callers that want one can inject any
    ``TokenEstimator`` where a corpus or context is built.
    """
    count = 0
    in_word = False
    for ch in text:
        if ch.isspace():
            in_word = False
        elif ch.isalnum() or ch == "_":
            if not in_word:
                count += 1
                in_word = True
        else:
            count += 1
            in_word = False
    if text and count == 0:
        # whitespace-only text still occupies at least one slot
        return 1
    return count


@dataclass(frozen=True)
class DistractorFunction:
    id: str
    source: str
    char_count: int
    token_estimate: int


@dataclass(frozen=True)
class Corpus:
    """Ordered distractor entries plus the percentile bounds used to filter."""

    entries: tuple[DistractorFunction, ...]
    p25: int
    p75: int

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class DistractorSample:
    entries: tuple[DistractorFunction, ...]
    with_replacement: bool


def nearest_rank(sorted_values: list[int], p: float) -> int:
    """Nearest-rank percentile: value at 1-based index ceil(p * n)."""
    if not sorted_values:
        raise CorpusError("percentile of empty value list")
    index = max(1, math.ceil(p * len(sorted_values)))
    return sorted_values[index - 1]


def _make_entry(entry_id: str, source: str, estimator: TokenEstimator) -> DistractorFunction:
    return DistractorFunction(
        id=entry_id,
        source=source,
        char_count=len(source),
        token_estimate=estimator(source),
    )


def _build_corpus(entries: list[DistractorFunction]) -> Corpus:
    if not entries:
        raise CorpusError("zero usable entries")
    counts = sorted(entry.char_count for entry in entries)
    return Corpus(
        entries=tuple(entries),
        p25=nearest_rank(counts, P_LOW),
        p75=nearest_rank(counts, P_HIGH),
    )


def _ingest_jsonl(path: Path, estimator: TokenEstimator) -> list[DistractorFunction]:
    entries: list[DistractorFunction] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: expected an object, got {type(record).__name__}")
            for field in ("id", "source"):
                if field not in record:
                    raise CorpusError(f"{path}:{lineno}: record missing required field '{field}'")
                if not isinstance(record[field], str):
                    raise CorpusError(f"{path}:{lineno}: field '{field}' must be a string")
            if not record["source"]:
                raise CorpusError(f"{path}:{lineno}: empty source")
            if record["id"] in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id '{record['id']}'")
            seen.add(record["id"])
            entries.append(_make_entry(record["id"], record["source"], estimator))
    return entries


def _ingest_dir(path: Path, estimator: TokenEstimator) -> list[DistractorFunction]:
    entries: list[DistractorFunction] = []
    for file in sorted(path.rglob("*")):
        if file.suffix not in (".py", ".txt") or not file.is_file():
            continue
        source = file.read_text(encoding="utf-8")
        if not source:
            continue
        entries.append(_make_entry(str(file.relative_to(path)), source, estimator))
    return entries


def ingest(path: str | Path, format: str = "jsonl", *, estimator: TokenEstimator = estimate_tokens) -> Corpus:
    """Load an unfiltered corpus; percentiles are computed over all entries."""
    if format not in FORMATS:
        raise CorpusError(f"unsupported corpus format '{format}' (expected one of {FORMATS})")
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus path does not exist: {path}")
    if format == "jsonl":
        entries = _ingest_jsonl(path, estimator)
    else:
        entries = _ingest_dir(path, estimator)
    corpus = _build_corpus(entries)
    log.info("ingested %d entries from %s (p25=%d, p75=%d)", len(entries), path, corpus.p25, corpus.p75)
    return corpus


def from_entries(pairs: Iterable[tuple[str, str]], *, estimator: TokenEstimator = estimate_tokens) -> Corpus:
    """Build a corpus directly from (id, source) pairs (tests, service calls)."""
    entries: list[DistractorFunction] = []
    seen: set[str] = set()
    for entry_id, source in pairs:
        if entry_id in seen:
            raise CorpusError(f"duplicate id '{entry_id}'")
        if not source:
            raise CorpusError(f"entry '{entry_id}': empty source")
        seen.add(entry_id)
        entries.append(_make_entry(entry_id, source, estimator))
    return _build_corpus(entries)


def filter_by_percentile(corpus: Corpus) -> Corpus:
    """Keep entries with p25 <= char_count <= p75 (inclusive), preserving order.

    The bounds carried by the result are the ones used for the cut, which
    makes the operation idempotent. May return an empty corpus.
    """
    kept = tuple(e for e in corpus.entries if corpus.p25 <= e.char_count <= corpus.p75)
    return replace(corpus, entries=kept)


def sample_distractors(corpus: Corpus, n: int, seed: int) -> DistractorSample:
    """Draw n distractors, without replacement when the corpus is large enough.

    Identical (corpus, n, seed) triples produce identical samples. When the
    corpus holds fewer than n entries the draw switches to sampling with
    replacement and says so in the returned flag.
    """
    if n < 0:
        raise ValueError(f"sample size must be >= 0, got {n}")
    if n == 0:
        return DistractorSample(entries=(), with_replacement=False)
    if not corpus.entries:
        raise CorpusError("cannot sample from an empty corpus")
    rng = SplitMix64(seed)
    if n <= len(corpus.entries):
        picked = rng.sample_indices(len(corpus.entries), n)
        return DistractorSample(
            entries=tuple(corpus.entries[i] for i in picked),
            with_replacement=False,
        )
    picked = [rng.below(len(corpus.entries)) for _ in range(n)]
    return DistractorSample(
        entries=tuple(corpus.entries[i] for i in picked),
        with_replacement=True,
    )

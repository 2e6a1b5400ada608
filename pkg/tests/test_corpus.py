import json

import pytest

from coderecall.corpus import (
    CorpusError,
    estimate_tokens,
    filter_by_percentile,
    from_entries,
    ingest,
    nearest_rank,
    sample_distractors,
)
from coderecall.rng import SplitMix64

from conftest import synth_corpus, write_corpus_jsonl


def corpus_with_counts(counts):
    return from_entries((f"e{i}", "x" * c) for i, c in enumerate(counts))


def test_nearest_rank_four_entries():
    # ceil(0.25 * 4) = 1st value, ceil(0.75 * 4) = 3rd value
    corpus = corpus_with_counts([10, 20, 30, 40])
    assert corpus.p25 == 10
    assert corpus.p75 == 30


def test_nearest_rank_is_order_insensitive():
    assert nearest_rank([1, 2, 3, 4, 5], 0.25) == 2
    assert nearest_rank([1, 2, 3, 4, 5], 0.75) == 4
    assert nearest_rank([7], 0.25) == 7


def test_ingest_jsonl_roundtrip(tmp_path, small_corpus):
    path = tmp_path / "corpus.jsonl"
    write_corpus_jsonl(small_corpus, path)
    loaded = ingest(path, "jsonl")
    assert [e.id for e in loaded.entries] == [e.id for e in small_corpus.entries]
    assert all(e.char_count == len(e.source) for e in loaded.entries)
    assert all(e.token_estimate >= 1 for e in loaded.entries)


def test_ingest_empty_file_is_zero_usable_entries(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(CorpusError, match="zero usable entries"):
        ingest(path, "jsonl")


def test_ingest_missing_source_names_the_record(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"id": "a", "source": "def f(): pass"}) + "\n" + json.dumps({"id": "b"}) + "\n")
    with pytest.raises(CorpusError, match=r"bad\.jsonl:2.*'source'"):
        ingest(path, "jsonl")


def test_ingest_duplicate_ids_rejected(tmp_path):
    path = tmp_path / "dup.jsonl"
    rec = json.dumps({"id": "a", "source": "pass"})
    path.write_text(rec + "\n" + rec + "\n")
    with pytest.raises(CorpusError, match="duplicate id"):
        ingest(path, "jsonl")


def test_ingest_missing_file():
    with pytest.raises(CorpusError, match="does not exist"):
        ingest("/nonexistent/corpus.jsonl", "jsonl")


def test_ingest_directory(tmp_path):
    (tmp_path / "a.py").write_text("def a():\n    return 1")
    (tmp_path / "b.txt").write_text("def b():\n    return 2")
    (tmp_path / "ignored.md").write_text("# not code")
    corpus = ingest(tmp_path, "dir")
    assert sorted(e.id for e in corpus.entries) == ["a.py", "b.txt"]


def test_filter_retains_inclusive_band():
    corpus = corpus_with_counts([10, 20, 30, 40])
    filtered = filter_by_percentile(corpus)
    assert [e.char_count for e in filtered.entries] == [10, 20, 30]


def test_filter_all_equal_counts_retains_all():
    corpus = corpus_with_counts([25] * 8)
    assert len(filter_by_percentile(corpus)) == 8


def test_filter_is_idempotent(small_corpus):
    once = filter_by_percentile(small_corpus)
    twice = filter_by_percentile(once)
    assert once == twice


def test_filter_preserves_relative_order(small_corpus):
    filtered = filter_by_percentile(small_corpus)
    ids = [e.id for e in small_corpus.entries]
    assert [e.id for e in filtered.entries] == [i for i in ids if i in {e.id for e in filtered.entries}]


def test_percentile_monotone(small_corpus):
    assert small_corpus.p25 <= small_corpus.p75


def test_filter_uniform_counts_retains_about_half():
    # oracle: direct simulation of the chosen percentile rule
    rng = SplitMix64(2024)
    counts = [rng.randint(1, 1000) for _ in range(10_000)]
    corpus = corpus_with_counts(counts)
    retained = len(filter_by_percentile(corpus)) / len(corpus)
    assert abs(retained - 0.5) <= 0.05


def test_sample_zero_is_empty(small_corpus):
    assert sample_distractors(small_corpus, 0, seed=1).entries == ()


def test_sample_determinism(small_corpus):
    a = sample_distractors(small_corpus, 10, seed=77)
    b = sample_distractors(small_corpus, 10, seed=77)
    assert [e.id for e in a.entries] == [e.id for e in b.entries]
    assert not a.with_replacement


def test_sample_seeds_not_degenerate(small_corpus):
    seen = {tuple(e.id for e in sample_distractors(small_corpus, 5, seed=s).entries) for s in range(1000)}
    assert len(seen) >= 2


def test_sample_without_replacement_is_distinct(small_corpus):
    sample = sample_distractors(small_corpus, len(small_corpus), seed=3)
    assert len({e.id for e in sample.entries}) == len(small_corpus)


def test_sample_with_replacement_flag():
    corpus = synth_corpus(50, seed=6)
    sample = sample_distractors(corpus, 80, seed=4)
    assert len(sample.entries) == 80
    assert sample.with_replacement


def test_sample_from_empty_corpus_fails():
    corpus = corpus_with_counts([5])
    empty = corpus.__class__(entries=(), p25=0, p75=0)
    with pytest.raises(CorpusError):
        sample_distractors(empty, 1, seed=1)


def test_estimate_tokens_rules():
    assert estimate_tokens("") == 0
    assert estimate_tokens("def f(x):") == 6
    assert estimate_tokens("a_b2 c") == 2
    assert estimate_tokens("   ") == 1  # non-empty floor


def test_estimate_tokens_on_filtered_corpus_is_plausible():
    # informational sanity band around the ~200-token distractor average
    corpus = filter_by_percentile(synth_corpus(400, seed=21))
    mean = sum(e.token_estimate for e in corpus.entries) / len(corpus)
    assert 120 <= mean <= 320

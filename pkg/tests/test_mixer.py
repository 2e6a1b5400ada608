from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from coderecall.corpus import sample_distractors
from coderecall.mixer import (
    MixError,
    PositionVector,
    TargetSnippet,
    concentration,
    context_from_dict,
    context_to_dict,
    granularity,
    mix,
    prefix_count,
    strip,
)
from conftest import synth_corpus

TARGET = TargetSnippet(id="t1", source="def f(x):\n    arr = [0, 0]\n    arr[0] = x + 1\n    arr[1] = x - 2\n    return arr", kind="semtrace")


def make_context(n_distractors=8, position_index=3, positions=11, seed=5):
    corpus = synth_corpus(max(n_distractors, 10), seed=2)
    sample = sample_distractors(corpus, n_distractors, seed=9)
    return mix(TARGET, list(sample.entries), position_index, positions, seed)


def test_prefix_count_endpoints_and_midpoint():
    assert prefix_count(0, 80, 11) == 0
    assert prefix_count(10, 80, 11) == 80
    assert prefix_count(5, 80, 11) == 40


def test_prefix_count_full_grid_equal_spacing():
    counts = [prefix_count(i, 80, 11) for i in range(11)]
    assert counts == [0, 8, 16, 24, 32, 40, 48, 56, 64, 72, 80]


def test_prefix_count_monotone_any_n():
    for n in (1, 3, 20, 25, 33, 50, 79):
        counts = [prefix_count(i, n, 11) for i in range(11)]
        assert counts == sorted(counts)
        assert counts[0] == 0
        assert counts[-1] == n


def test_prefix_count_validation():
    with pytest.raises(MixError):
        prefix_count(11, 80, 11)
    with pytest.raises(MixError):
        prefix_count(0, 80, 1)


def test_mix_places_target_after_prefix():
    context = make_context(n_distractors=10, position_index=5, positions=11)
    first, _ = context.target_span
    distractor_ids_before = {
        line.origin for line in context.lines[:first] if line.origin.startswith("distractor:")
    }
    assert len(distractor_ids_before) == prefix_count(5, 10, 11)


def test_mix_keys_unique_and_hex():
    context = make_context()
    keys = [line.key for line in context.lines]
    assert len(set(keys)) == len(keys)
    assert all(len(k) == 6 and set(k) <= set("0123456789abcdef") for k in keys)


def test_mix_preserves_distractor_order():
    corpus = synth_corpus(12, seed=3)
    sample = sample_distractors(corpus, 6, seed=1)
    context = mix(TARGET, list(sample.entries), 2, 11, seed=8)
    seen = []
    for line in context.lines:
        if line.origin.startswith("distractor:"):
            d_id = line.origin.split(":", 1)[1]
            if not seen or seen[-1] != d_id:
                seen.append(d_id)
    assert seen == [e.id for e in sample.entries]


def test_mix_strip_roundtrip():
    corpus = synth_corpus(10, seed=4)
    sample = sample_distractors(corpus, 5, seed=2)
    context = mix(TARGET, list(sample.entries), 7, 11, seed=13)
    target_source, distractors = strip(context)
    assert target_source == TARGET.source
    assert distractors == [(e.id, e.source) for e in sample.entries]


def test_strip_insensitive_to_key_seed():
    corpus = synth_corpus(10, seed=4)
    sample = sample_distractors(corpus, 5, seed=2)
    a = strip(mix(TARGET, list(sample.entries), 4, 11, seed=1))
    b = strip(mix(TARGET, list(sample.entries), 4, 11, seed=2))
    assert a == b


@given(st.integers(min_value=0, max_value=10), st.integers(min_value=1, max_value=9), st.integers(min_value=0, max_value=2 ** 63 - 1))
def test_mix_roundtrip_property(position_index, n_distractors, seed):
    corpus = synth_corpus(9, seed=6)
    sample = sample_distractors(corpus, n_distractors, seed=seed & 0xFFFF)
    context = mix(TARGET, list(sample.entries), position_index, 11, seed)
    target_source, distractors = strip(context)
    assert target_source == TARGET.source
    assert [d for _, d in distractors] == [e.source for e in sample.entries]
    assert context.concentration == 1


def test_granularity_formula():
    assert granularity(200, 0) == 0
    assert granularity(200, 200) == Fraction(1, 2)
    assert granularity(200, 16000) == Fraction(16000, 16200)
    with pytest.raises(MixError):
        granularity(0, 10)


def test_granularity_strictly_increasing_in_distractors():
    corpus = synth_corpus(30, seed=8)
    values = []
    for n in (4, 8, 12, 20):
        sample = sample_distractors(corpus, n, seed=3)
        values.append(mix(TARGET, list(sample.entries), 0, 11, seed=1).granularity)
    assert values == sorted(values)
    assert len(set(values)) == len(values)


def test_concentration_contiguous_block_is_one():
    assert concentration(PositionVector(bits=(0,) * 10 + (1,) * 50 + (0,) * 5)) == 1


def test_concentration_fragmented():
    assert concentration(PositionVector(bits=(1, 0, 1))) == Fraction(2, 3)


def test_concentration_single_bit():
    assert concentration(PositionVector(bits=(0, 1, 0))) == 1


def test_concentration_errors():
    with pytest.raises(MixError):
        concentration(PositionVector(bits=()))
    with pytest.raises(MixError):
        concentration(PositionVector(bits=(0, 0)))


def test_token_position_vector_popcount_matches_n1():
    context = make_context()
    vector = context.token_position_vector()
    assert vector.n1 == context.n1_tokens
    assert vector.n1 + vector.n2 == context.n1_tokens + context.n2_tokens


def test_separator_lines_are_keyed_and_blank():
    context = make_context(n_distractors=3)
    separators = [line for line in context.lines if line.origin == "separator"]
    assert len(separators) == 3  # units - 1
    assert all(line.text == "" for line in separators)
    assert all(len(line.key) == 6 for line in separators)


def test_context_dict_roundtrip():
    context = make_context()
    restored = context_from_dict(context_to_dict(context))
    assert restored == context


def test_mix_rejects_empty_distractors():
    with pytest.raises(MixError):
        mix(TARGET, [], 0, 11, seed=1)


def test_strip_keeps_adjacent_duplicate_distractors_distinct():
    from coderecall.corpus import from_entries

    corpus = from_entries([("d1", "def a():\n    return 1")])
    entry = corpus.entries[0]
    context = mix(TARGET, [entry, entry], 0, 2, seed=3)
    _, distractors = strip(context)
    assert distractors == [(entry.id, entry.source), (entry.id, entry.source)]


def test_roundtrip_with_replacement_sampling():
    corpus = synth_corpus(3, seed=9)
    sample = sample_distractors(corpus, 8, seed=5)
    assert sample.with_replacement
    context = mix(TARGET, list(sample.entries), 4, 11, seed=6)
    target_source, distractors = strip(context)
    assert target_source == TARGET.source
    assert [(e.id, e.source) for e in sample.entries] == distractors

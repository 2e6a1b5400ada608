from fractions import Fraction

import pytest

from coderecall.mixer import TargetSnippet
from coderecall.pyexec import SemTraceGrammarExecutor
from coderecall.scoring import score_prediction
from coderecall.semtrace import generate, make_task, render
from coderecall.sensitivity import (
    SensitivityError,
    bucket_fraction,
    build_report,
    enumerate_variants,
    oracle_ground_truth,
    read_variants,
    semtrace_removal_curve,
    sensitivity,
    write_variants,
)
from coderecall.tasks import target_from_semtrace

EXAMPLE_TASK = make_task(seed=0, digits=2, x=81, assignments=[(0, -43), (2, -65), (1, 88), (3, -74)])
EXAMPLE_TARGET = target_from_semtrace(EXAMPLE_TASK)


def simple_target(n_body_lines):
    body = [f"    line_{i} = {i}" for i in range(n_body_lines)]
    return TargetSnippet(id=f"fn{n_body_lines}", source="\n".join(["def f(x):"] + body))


def test_full_enumeration_counts():
    assert len(enumerate_variants(simple_target(3), cap=8)) == 6  # 2^3 - 2
    assert len(enumerate_variants(EXAMPLE_TARGET, cap=100)) == 62  # 2^6 - 2


def test_variants_preserve_signature_and_indentation():
    for variant in enumerate_variants(EXAMPLE_TARGET, cap=100):
        lines = variant.source.split("\n")
        assert lines[0] == "def f(x):"
        assert all(line.startswith("    ") for line in lines[1:])
        assert 0 < len(variant.removed_lines) < 6
        assert variant.removed_fraction == Fraction(len(variant.removed_lines), 6)


def test_capped_sampling_exact_count_and_determinism():
    target = simple_target(20)
    a = enumerate_variants(target, cap=4096, seed=5)
    b = enumerate_variants(target, cap=4096, seed=5)
    c = enumerate_variants(target, cap=4096, seed=6)
    assert len(a) == 4096
    assert a == b
    assert a != c
    assert len({v.removed_lines for v in a}) == 4096  # distinct subsets


def test_capped_sampling_is_size_stratified():
    variants = enumerate_variants(simple_target(20), cap=1900, seed=1)
    sizes = {len(v.removed_lines) for v in variants}
    assert sizes == set(range(1, 20))


def test_single_line_body_rejected():
    with pytest.raises(SensitivityError):
        enumerate_variants(simple_target(1), cap=10)


def test_sensitivity_formula_cases():
    eps = Fraction(1, 10 ** 9)
    assert sensitivity(1, [0, 0, 0], eps) == 1 / (1 + eps)
    assert sensitivity(Fraction(7, 10), [Fraction(7, 10)] * 5, eps) == 0
    value = sensitivity(Fraction(8, 10), [Fraction(8, 10), Fraction(4, 10), 0], Fraction(0))
    assert value == Fraction(1, 2)


def test_sensitivity_requires_variants():
    with pytest.raises(SensitivityError):
        sensitivity(1, [], Fraction(1, 10))


def test_sensitivity_permutation_invariant():
    eps = Fraction(1, 10 ** 9)
    values = [Fraction(1, 3), Fraction(2, 3), 0, 1]
    assert sensitivity(1, values, eps) == sensitivity(1, list(reversed(values)), eps)


def test_oracle_annotation_example_cases():
    executor = SemTraceGrammarExecutor()
    variants = enumerate_variants(EXAMPLE_TARGET, cap=100)
    annotated = oracle_ground_truth(variants, "81", executor)

    by_removed = {v.removed_lines: v for v in annotated}
    # removing only "arr[1] = x + 88" (body line 3) leaves slot 1 at 0
    one_line = by_removed[(3,)]
    assert one_line.gold_status == "ok"
    assert one_line.gold_literal == "[38, 0, 16, 7]"
    # removing only the return yields None
    no_return = by_removed[(5,)]
    assert no_return.gold_status == "ok"
    assert no_return.gold_literal == "None"
    # removing only the initializer is a NameError
    no_init = by_removed[(0,)]
    assert no_init.gold_status == "error"
    assert no_init.gold_error_kind == "NameError"


def test_oracle_annotation_requires_executor():
    variants = enumerate_variants(EXAMPLE_TARGET, cap=100)
    with pytest.raises(SensitivityError):
        oracle_ground_truth(variants, "81", None)


def test_removal_curve_closed_form_no_zero_slots():
    tasks = []
    for seed in range(200):
        task = generate(seed, 2)
        if all(v != 0 for v in task.expected):
            tasks.append(task)
    assert tasks
    rows = semtrace_removal_curve(tasks)
    for row in rows:
        m_over_k = row.removed_fraction
        assert row.partial_accuracy == 1 - m_over_k
        if m_over_k > 0:
            assert row.exact_accuracy == 0
        else:
            assert row.exact_accuracy == 1


def test_removal_curve_matches_variant_scoring_simulation():
    # independent route: enumerate the variants, execute them through the
    # grammar oracle, score the variant output against the original gold
    task = None
    for seed in range(100):
        candidate = generate(seed, 2)
        if candidate.k == 4 and all(v != 0 for v in candidate.expected):
            task = candidate
            break
    assert task is not None
    rows = {row.removed_fraction: row for row in semtrace_removal_curve([task])}
    executor = SemTraceGrammarExecutor()
    gold = list(task.expected)

    source_lines = render(task).split("\n")
    assignment_body_indices = [
        i - 1 for i, line in enumerate(source_lines) if "] = x " in line
    ]
    from itertools import combinations

    for m in range(0, task.k + 1):
        exact_accs = []
        partial_accs = []
        for removed in combinations(assignment_body_indices, m):
            kept = [line for i, line in enumerate(source_lines) if (i - 1) not in removed or i == 0]
            variant_source = "\n".join(kept)
            response = executor.execute(variant_source, str(task.x))
            assert response.status == "ok"
            score = score_prediction(response.value_literal, gold, "semtrace_out")
            exact_accs.append(Fraction(1 if score.exact else 0))
            partial_accs.append(score.partial)
        row = rows[Fraction(m, task.k)]
        assert sum(exact_accs) / len(exact_accs) == row.exact_accuracy
        assert sum(partial_accs) / len(partial_accs) == row.partial_accuracy


def test_removal_curve_zero_slot_correction():
    # construct a task where one expected element is exactly 0
    task = make_task(seed=1, digits=2, x=50, assignments=[(0, -50), (1, 10), (2, 20), (3, 30)])
    assert task.expected[0] == 0
    rows = {row.removed_fraction: row for row in semtrace_removal_curve([task])}
    # removing one of four lines: 1/4 of the time the removed slot is the
    # zero slot and the variant output still matches in that position
    assert rows[Fraction(1, 4)].partial_accuracy == Fraction(3, 4) + Fraction(1, 16)
    assert rows[Fraction(1, 4)].exact_accuracy == Fraction(1, 4)
    assert rows[Fraction(4, 4)].partial_accuracy == Fraction(1, 4)


def test_variant_file_roundtrip(tmp_path):
    executor = SemTraceGrammarExecutor()
    variants = oracle_ground_truth(enumerate_variants(EXAMPLE_TARGET, cap=100), "81", executor)
    path = tmp_path / "variants.jsonl"
    assert write_variants(variants, path) == len(variants)
    assert read_variants(path) == variants


def test_bucket_fraction():
    assert bucket_fraction(Fraction(1, 6)) == Fraction(15, 100)
    assert bucket_fraction(Fraction(1, 2)) == Fraction(50, 100)
    assert bucket_fraction(Fraction(0)) == 0


def test_build_report():
    report = build_report(
        {
            "a": (1.0, [(Fraction(1, 4), 0.5), (Fraction(1, 2), 0.0)]),
            "b": (0.5, [(Fraction(1, 4), 0.5)]),
        },
        epsilon=Fraction(0),
    )
    assert report.per_function["a"] == Fraction(3, 4)
    assert report.per_function["b"] == 0
    fractions = [bucket for bucket, _, _ in report.by_fraction]
    assert Fraction(0) in fractions and Fraction(1, 4) in fractions


def test_sensitivity_range_property():
    rng = __import__("coderecall.rng", fromlist=["SplitMix64"]).SplitMix64(31)
    eps = Fraction(1, 10 ** 9)
    for _ in range(200):
        r_full = Fraction(rng.randint(1, 100), 100)
        variants = [Fraction(rng.randint(0, 100), 100) for _ in range(rng.randint(1, 8))]
        value = sensitivity(r_full, variants, eps)
        assert value <= 1
        if all(v <= r_full for v in variants):
            assert 0 <= value <= 1

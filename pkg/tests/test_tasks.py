import os
from fractions import Fraction
from pathlib import Path

import pytest

from coderecall.corpus import from_entries
from coderecall.mixer import TargetSnippet
from coderecall.semtrace import make_task
from coderecall.tasks import (
    GridSpec,
    TaskError,
    build_prompt,
    gold_answer,
    make_instances,
    subsample_targets,
    target_from_semtrace,
    write_instances,
)

GOLDEN_DIR = Path(__file__).parent / "goldens"

EXAMPLE_TASK = make_task(seed=0, digits=2, x=81, assignments=[(0, -43), (2, -65), (1, 88), (3, -74)])
TARGET = target_from_semtrace(EXAMPLE_TASK)

FIXED_DISTRACTORS = from_entries(
    [
        ("d1", "def add(a, b):\n    return a + b"),
        ("d2", "def scale(values, factor):\n    return [v * factor for v in values]"),
    ]
)


def fixed_instance(task_type):
    grid = GridSpec(task_type=task_type, distractor_counts=(2,), positions=2, seed=7)
    instances = make_instances([TARGET], FIXED_DISTRACTORS, grid)
    return instances[0]  # position 0: target before both distractors


def bundle_text(bundle):
    parts = []
    for role, text in bundle.messages:
        parts.append(f"== {role} ==\n{text}")
    return "\n".join(parts) + "\n"


@pytest.mark.parametrize("task_type", ["cruxeval_in", "cruxeval_out", "retrieve_function", "retrieve_line"])
@pytest.mark.parametrize("qac", [True, False])
def test_templates_match_goldens(task_type, qac):
    instance = fixed_instance(task_type)
    rendered = bundle_text(build_prompt(instance, qac=qac))
    name = f"{task_type}_{'qac' if qac else 'noqac'}.txt"
    path = GOLDEN_DIR / name
    if os.environ.get("UPDATE_GOLDENS"):
        GOLDEN_DIR.mkdir(exist_ok=True)
        path.write_text(rendered, encoding="utf-8")
    assert rendered == path.read_text(encoding="utf-8"), f"template drift for {name}"


def test_semtrace_out_uses_output_prediction_template():
    # generated targets share the output-prediction template
    a = build_prompt(fixed_instance("semtrace_out"), qac=True)
    b = build_prompt(fixed_instance("cruxeval_out"), qac=True)
    assert a == b


def test_qac_places_query_twice():
    instance = fixed_instance("semtrace_out")
    user = build_prompt(instance, qac=True).user_text
    assert user.count("assert f(81) == ??") == 2
    assert build_prompt(instance, qac=True).prefill.endswith("assert f(81) == ")


def test_prediction_query_paragraphs_identical():
    instance = fixed_instance("semtrace_out")
    user = build_prompt(instance, qac=True).user_text
    head, _, tail = user.partition("\n\n[FUNCTIONS]\n")
    trailing = tail.split("[/FUNCTIONS]\n\n", 1)[1]
    leading = head.split("\n\n[ASSERTION]")[0]
    assert trailing.endswith(leading)
    assert "[ASSERTION]\nassert f(81) == ??\n[/ASSERTION]" in trailing


def test_no_qac_places_query_once():
    instance = fixed_instance("semtrace_out")
    user = build_prompt(instance, qac=False).user_text
    assert user.count("assert f(81) == ??") == 1


def test_line_retrieval_prefill_names_key():
    instance = fixed_instance("retrieve_line")
    key = instance.query_params["key"]
    bundle = build_prompt(instance)
    assert bundle.prefill == f"Sure! Here is the line with key {key}:\n\n```python\n"


def test_retrieval_keys_match_target_span():
    instance = fixed_instance("retrieve_function")
    first, last = instance.context.target_span
    assert instance.query_params["start"] == instance.context.lines[first].key
    assert instance.query_params["end"] == instance.context.lines[last].key


def test_keys_on_prediction_flag():
    instance = fixed_instance("semtrace_out")
    keyed = build_prompt(instance, keys_on_prediction=True).user_text
    unkeyed = build_prompt(instance, keys_on_prediction=False).user_text
    first_key = instance.context.lines[0].key
    assert first_key in keyed
    assert first_key not in unkeyed


def test_gold_answers():
    assert gold_answer(fixed_instance("semtrace_out")) == "[38, 169, 16, 7]"
    assert gold_answer(fixed_instance("retrieve_function")) == TARGET.source
    line_instance = fixed_instance("retrieve_line")
    assert line_instance.gold in TARGET.source.split("\n")[1:]
    assert not line_instance.gold.startswith("def ")


def test_instance_count_formula(small_corpus):
    targets = [target_from_semtrace(make_task(seed=s, digits=2, x=10, assignments=[(i, i) for i in range(4)])) for s in range(6)]
    targets = [TargetSnippet(id=f"t{n}", source=t.source, input_literal=t.input_literal, output_literal=t.output_literal, kind=t.kind) for n, t in enumerate(targets)]
    grid = GridSpec(task_type="semtrace_out", distractor_counts=(2, 4), positions=5, seed=1)
    instances = make_instances(targets, small_corpus, grid)
    assert len(instances) == 6 * 2 * 5
    assert len({i.id for i in instances}) == len(instances)


def test_subset_fraction_eighth():
    targets = [
        TargetSnippet(id=f"t{i}", source="def f(x):\n    return x", input_literal="1", output_literal="1")
        for i in range(800)
    ]
    chosen = subsample_targets(targets, Fraction(1, 8), seed=3)
    assert len(chosen) == 100
    ids = [t.id for t in targets]
    assert [t.id for t in chosen] == [i for i in ids if i in {t.id for t in chosen}]


def test_make_instances_deterministic(small_corpus):
    grid = GridSpec(task_type="semtrace_out", distractor_counts=(3,), positions=4, seed=99)
    a = make_instances([TARGET], small_corpus, grid)
    b = make_instances([TARGET], small_corpus, grid)
    assert a == b


def test_distractor_draw_shared_across_positions(small_corpus):
    grid = GridSpec(task_type="semtrace_out", distractor_counts=(4,), positions=6, seed=5)
    instances = make_instances([TARGET], small_corpus, grid)
    origin_sets = []
    for instance in instances:
        ids = [l.origin for l in instance.context.lines if l.origin.startswith("distractor:")]
        origin_sets.append(sorted(set(ids)))
    assert all(s == origin_sets[0] for s in origin_sets)


def test_grid_validation():
    with pytest.raises(TaskError):
        GridSpec(task_type="nope", distractor_counts=(1,)).validate()
    with pytest.raises(TaskError):
        GridSpec(task_type="semtrace_out", distractor_counts=()).validate()
    with pytest.raises(TaskError):
        GridSpec(task_type="semtrace_out", distractor_counts=(1,), positions=1).validate()


def test_write_instances_embeds_prompts(tmp_path, small_corpus):
    grid = GridSpec(task_type="retrieve_line", distractor_counts=(2,), positions=2, seed=4)
    instances = make_instances([TARGET], small_corpus, grid)
    path = tmp_path / "instances.jsonl"
    assert write_instances(instances, path) == len(instances)
    import json

    first = json.loads(path.read_text().split("\n")[0])
    assert first["messages"][0]["role"] == "user"
    assert first["messages"][-1]["role"] == "assistant"
    assert first["gold"]

"""Primary-side integration with the external interpreter oracle.

These tests run only when the oracle package has been built
(``cd pyexec && npm install && npm run build``); everything else in the
suite passes without it.
"""

from pathlib import Path

import pytest

from coderecall.mixer import TargetSnippet
from coderecall.pyexec import ProtocolExecutor
from coderecall.scoring import score_input_prediction
from coderecall.semtrace import generate, oracle, render
from coderecall.sensitivity import enumerate_variants, oracle_ground_truth

PYEXEC_MAIN = Path(__file__).parent.parent / "pyexec" / "dist" / "main.js"

pytestmark = pytest.mark.skipif(not PYEXEC_MAIN.exists(), reason="pyexec not built")


@pytest.fixture(scope="module")
def executor():
    with ProtocolExecutor(["node", str(PYEXEC_MAIN)]) as ex:
        yield ex


def test_real_interpreter_matches_closed_form(executor):
    for seed in range(40):
        task = generate(seed, 2)
        response = executor.execute(render(task), str(task.x), timeout_ms=5000)
        assert response.status == "ok"
        assert response.value_literal == repr(oracle(task))


def test_annotation_of_non_grammar_source(executor):
    target = TargetSnippet(
        id="revjoin",
        source='def f(words):\n    out = []\n    for w in words:\n        out.append(w.upper())\n    return "-".join(out)',
        input_literal="['ab', 'cd']",
        output_literal="'AB-CD'",
    )
    variants = enumerate_variants(target, cap=64)
    annotated = oracle_ground_truth(variants, target.input_literal, executor)
    full = executor.execute(target.source, target.input_literal, timeout_ms=5000)
    assert full.status == "ok"
    assert full.value_literal == "'AB-CD'"
    statuses = {v.gold_status for v in annotated}
    assert "ok" in statuses and "error" in statuses  # some removals still run, some raise


def test_input_prediction_graded_by_execution(executor):
    class InstanceStub:
        task_type = "cruxeval_in"
        target_source = "def f(x):\n    return x % 7"
        query_params = {"output": "3"}

    # the reference input and a different-but-valid input both pass
    assert score_input_prediction("3", InstanceStub(), executor).exact
    assert score_input_prediction("10", InstanceStub(), executor).exact
    assert not score_input_prediction("4", InstanceStub(), executor).exact
    crashing = score_input_prediction("'text'", InstanceStub(), executor)
    assert not crashing.exact
    assert crashing.failure_kind == "wrong_value"

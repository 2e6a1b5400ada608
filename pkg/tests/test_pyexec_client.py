import sys
import textwrap

import pytest

from coderecall.pyexec import ExecutorError, ProtocolExecutor, SemTraceGrammarExecutor

# a minimal, well-behaved protocol server used to exercise the client side;
# "HANG" in the source simulates a stuck interpreter, "GARBAGE" a noisy one
FAKE_SERVER = textwrap.dedent(
    """
    import json, sys, time
    print(json.dumps({"type": "hello", "protocol": 1, "name": "fake-exec", "version": "0"}), flush=True)
    for line in sys.stdin:
        req = json.loads(line)
        src = req["source"]
        if "HANG" in src:
            time.sleep(600)
        if "GARBAGE" in src:
            print("not json at all", flush=True)
        resp = {"id": req["id"], "status": "ok", "value_literal": repr(len(src))}
        print(json.dumps(resp), flush=True)
    """
)

BAD_HANDSHAKE_SERVER = 'import json;print(json.dumps({"type": "hello", "protocol": 99}), flush=True)'


def fake_executor(script=FAKE_SERVER):
    return ProtocolExecutor([sys.executable, "-u", "-c", script], handshake_timeout_s=10)


def test_executes_and_correlates_by_id():
    with fake_executor() as executor:
        a = executor.execute("abc", "1", timeout_ms=2000)
        b = executor.execute("defgh", "2", timeout_ms=2000)
    assert a.status == "ok" and a.value_literal == "3"
    assert b.status == "ok" and b.value_literal == "5"


def test_garbage_lines_are_skipped():
    with fake_executor() as executor:
        response = executor.execute("GARBAGE---", "1", timeout_ms=2000)
    assert response.status == "ok"
    assert response.value_literal == repr(len("GARBAGE---"))


def test_hung_child_times_out_and_recovers(monkeypatch):
    monkeypatch.setattr("coderecall.pyexec._GRACE_S", 0.5)
    with fake_executor() as executor:
        hung = executor.execute("HANG", "1", timeout_ms=100)
        assert hung.status == "timeout"
        # the poisoned worker was replaced; the session keeps serving
        after = executor.execute("ok", "1", timeout_ms=2000)
        assert after.status == "ok"


def test_bad_handshake_rejected():
    executor = fake_executor(BAD_HANDSHAKE_SERVER)
    with pytest.raises(ExecutorError):
        executor.execute("x", "1")
    executor.close()


def test_grammar_executor_matches_rendered_tasks():
    from coderecall.semtrace import generate, oracle, render

    executor = SemTraceGrammarExecutor()
    for seed in range(50):
        task = generate(seed, 2)
        response = executor.execute(render(task), str(task.x))
        assert response.status == "ok"
        assert response.value_literal == repr(oracle(task))


def test_grammar_executor_rejects_foreign_source():
    executor = SemTraceGrammarExecutor()
    response = executor.execute("def f(x):\n    return x * 2", "3")
    assert response.status == "error"
    assert response.error_kind == "OutsideGrammar"


def test_grammar_executor_rejects_non_integer_args():
    executor = SemTraceGrammarExecutor()
    assert executor.execute("def f(x):\n    arr = [0]\n    return arr", "'abc'").status == "error"

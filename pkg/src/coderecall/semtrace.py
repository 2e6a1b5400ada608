"""Assignment-trace task generation with seeded determinism.

Each task is a small function ``f(x)`` that fills a k-slot list through one
randomized, order-shuffled assignment per slot (``arr[i] = x + y`` with y
drawn uniformly from a d-digit range). Every assignment contributes one
output element independently, so a wrong element points at exactly one
line. This module generates tasks, renders them as source text, computes
ground truth in closed form, and evaluates rendered (possibly line-removed)
sources under the same restricted grammar.

Draw order from the seed is fixed: k, then x, then one offset per slot in
slot order, then the emission permutation. Generator: splitmix64 (rng
module).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .rng import SplitMix64

K_MIN = 4
K_MAX = 10
DIGITS_MIN = 2
DIGITS_MAX = 6
DEFAULT_DATASET_SIZE = 800

SIGNATURE = "def f(x):"
INDENT = "    "

_ASSIGN_RE = re.compile(r"^    arr\[(\d+)\] = x ([+-]) (\d+)$")
_INIT_RE = re.compile(r"^    arr = \[0(?:, 0)*\]$")
_RETURN_LINE = "    return arr"


class SemTraceError(ValueError):
    """Invalid task parameters or unparseable task source."""


@dataclass(frozen=True)
class SemTraceTask:
    """One generated task: input, ordered slot assignments, expected output.

    ``assignments`` holds (slot index, offset) pairs in emission order; the
    indices are a permutation of 0..k-1. ``expected[i] = x + offset_i``.
    """

    seed: int
    digits: int
    x: int
    k: int
    assignments: tuple[tuple[int, int], ...]
    expected: tuple[int, ...]

    @property
    def id(self) -> str:
        return f"semtrace-d{self.digits}-{self.seed}"


def _validate(task: SemTraceTask) -> None:
    if not K_MIN <= task.k <= K_MAX:
        raise SemTraceError(f"k={task.k} outside [{K_MIN}, {K_MAX}]")
    if sorted(i for i, _ in task.assignments) != list(range(task.k)):
        raise SemTraceError("assignment indices are not a permutation of 0..k-1")
    lo, hi = -(10 ** task.digits), 10 ** task.digits - 1
    for _, y in task.assignments:
        if not lo <= y <= hi:
            raise SemTraceError(f"offset {y} outside [{lo}, {hi}]")
    if len(task.expected) != task.k:
        raise SemTraceError("expected length != k")


def make_task(seed: int, digits: int, x: int, assignments: Iterable[tuple[int, int]]) -> SemTraceTask:
    """Construct a task from explicit parts (expected output is derived)."""
    assignments = tuple((int(i), int(y)) for i, y in assignments)
    k = len(assignments)
    offsets = {i: y for i, y in assignments}
    task = SemTraceTask(
        seed=seed,
        digits=digits,
        x=x,
        k=k,
        assignments=assignments,
        expected=tuple(x + offsets[i] for i in range(k)),
    )
    _validate(task)
    return task


def generate(seed: int, digits: int = 2) -> SemTraceTask:
    """Seeded task draw: k ~ U[4,10], x ~ U[0, 10^d - 1], offsets ~ U[-10^d, 10^d - 1]."""
    if not DIGITS_MIN <= digits <= DIGITS_MAX:
        raise SemTraceError(f"digits={digits} outside [{DIGITS_MIN}, {DIGITS_MAX}]")
    rng = SplitMix64(seed)
    k = rng.randint(K_MIN, K_MAX)
    bound = 10 ** digits
    x = rng.randint(0, bound - 1)
    offsets = [rng.randint(-bound, bound - 1) for _ in range(k)]
    order = list(range(k))
    rng.shuffle(order)
    return make_task(seed, digits, x, [(i, offsets[i]) for i in order])


def generate_dataset(seed: int, digits: int = 2, count: int = DEFAULT_DATASET_SIZE) -> list[SemTraceTask]:
    """count tasks seeded seed, seed+1, ... (stable ids, trivially resumable)."""
    return [generate(seed + offset, digits) for offset in range(count)]


def render(task: SemTraceTask) -> str:
    """Emit the task as source: signature, zero initializer, assignments, return."""
    lines = [SIGNATURE, INDENT + "arr = [" + ", ".join(["0"] * task.k) + "]"]
    for index, offset in task.assignments:
        op = "+" if offset >= 0 else "-"
        lines.append(f"{INDENT}arr[{index}] = x {op} {abs(offset)}")
    lines.append(_RETURN_LINE)
    return "\n".join(lines)


def oracle(task: SemTraceTask) -> list[int]:
    """Ground-truth output array, in closed form from the stored assignments."""
    return list(task.expected)


def guess_probability(task: SemTraceTask) -> Fraction:
    """Chance of guessing the whole output: (1 / (2 * 10^d))^k, exact."""
    return Fraction(1, 2 * 10 ** task.digits) ** task.k


@dataclass(frozen=True)
class ParsedBody:
    """Structure of a rendered (possibly line-removed) task source."""

    initializer_k: int | None
    assignments: tuple[tuple[int, int], ...]
    has_return: bool
    body_line_count: int


def parse_source(source: str, *, strict: bool = True) -> ParsedBody:
    """Parse rendered source back into its parts.

    ``strict`` demands the exact full shape produced by :func:`render`
    (initializer, assignments, return, nothing else). Non-strict mode
    tolerates removed lines so incomplete variants stay parseable.
    """
    lines = source.split("\n")
    if not lines or lines[0] != SIGNATURE:
        raise SemTraceError(f"source does not start with '{SIGNATURE}'")
    initializer_k: int | None = None
    assignments: list[tuple[int, int]] = []
    has_return = False
    body = lines[1:]
    while body and body[-1] == "":
        body = body[:-1]
    for lineno, line in enumerate(body, start=2):
        if _INIT_RE.match(line):
            if initializer_k is not None:
                raise SemTraceError(f"line {lineno}: duplicate initializer")
            initializer_k = line.count("0")
        elif match := _ASSIGN_RE.match(line):
            index, sign, magnitude = match.groups()
            offset = int(magnitude) if sign == "+" else -int(magnitude)
            assignments.append((int(index), offset))
        elif line == _RETURN_LINE:
            has_return = True
        else:
            raise SemTraceError(f"line {lineno}: not part of the task grammar: {line!r}")
    parsed = ParsedBody(
        initializer_k=initializer_k,
        assignments=tuple(assignments),
        has_return=has_return,
        body_line_count=len(body),
    )
    if strict:
        if initializer_k is None:
            raise SemTraceError("missing initializer line")
        if not has_return:
            raise SemTraceError("missing return line")
        if sorted(i for i, _ in parsed.assignments) != list(range(initializer_k)):
            raise SemTraceError("assignments do not cover slots 0..k-1 exactly once")
    return parsed


@dataclass(frozen=True)
class EvalOutcome:
    """Result of evaluating task-grammar source on an input."""

    status: str  # "ok" | "error"
    value: list[int] | None = None
    error_kind: str | None = None

    @property
    def value_literal(self) -> str | None:
        if self.status != "ok":
            return None
        return repr(self.value)


def evaluate_source(source: str, x: int) -> EvalOutcome:
    """Evaluate task-grammar source (complete or line-removed) on input x.

    Mirrors interpreter semantics for this grammar without executing
    anything: assignments into a list that was never initialized raise
    NameError, out-of-range slots raise IndexError, and a missing return
    yields None. Only the grammar emitted by :func:`render` is accepted.
    """
    parse_source(source, strict=False)  # reject anything outside the grammar
    arr: list[int] | None = None
    # replay the body in order: statements before a missing initializer fail
    for line in source.split("\n")[1:]:
        if not line:
            continue
        if _INIT_RE.match(line):
            arr = [0] * line.count("0")
        elif match := _ASSIGN_RE.match(line):
            if arr is None:
                return EvalOutcome(status="error", error_kind="NameError")
            index = int(match.group(1))
            if index >= len(arr):
                return EvalOutcome(status="error", error_kind="IndexError")
            magnitude = int(match.group(3))
            arr[index] = x + magnitude if match.group(2) == "+" else x - magnitude
        elif line == _RETURN_LINE:
            if arr is None:
                return EvalOutcome(status="error", error_kind="NameError")
            return EvalOutcome(status="ok", value=list(arr))
    # fell off the end without returning
    return EvalOutcome(status="ok", value=None)


def write_tasks(tasks: Iterable[SemTraceTask], path: str | Path) -> int:
    """Write tasks as JSONL ({seed, digits, x, k, assignments, expected, source})."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for task in tasks:
            record = {
                "seed": task.seed,
                "digits": task.digits,
                "x": task.x,
                "k": task.k,
                "assignments": [[i, y] for i, y in task.assignments],
                "expected": list(task.expected),
                "source": render(task),
            }
            fh.write(json.dumps(record) + "\n")
            count += 1
    return count


def read_tasks(path: str | Path) -> list[SemTraceTask]:
    tasks: list[SemTraceTask] = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            try:
                task = make_task(
                    seed=record["seed"],
                    digits=record["digits"],
                    x=record["x"],
                    assignments=[tuple(pair) for pair in record["assignments"]],
                )
            except (KeyError, SemTraceError) as exc:
                raise SemTraceError(f"{path}:{lineno}: bad task record: {exc}") from exc
            if list(task.expected) != list(record.get("expected", task.expected)):
                raise SemTraceError(f"{path}:{lineno}: stored expected array disagrees with assignments")
            tasks.append(task)
    return tasks

"""Task definitions and prompt construction.

Five task types over an assembled context: input prediction, output
prediction (external benchmark or generated assignment-trace targets),
whole-function retrieval, and single-line retrieval. Prompts follow fixed
chat templates with the query placed both before and after the code block
(query-aware contextualization) and a trailing assistant prefill that pins
the response format. The prefill text is part of the template contract and
is golden-file tested byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .corpus import Corpus, sample_distractors
from .mixer import AssembledContext, TargetSnippet, mix
from .rng import SplitMix64, derive_seed
from .scoring import (
    PREDICTION_TASKS,
    RETRIEVAL_TASKS,
    TASK_CRUXEVAL_IN,
    TASK_RETRIEVE_FUNCTION,
    TASK_RETRIEVE_LINE,
)
from . import semtrace

TASK_TYPES = PREDICTION_TASKS + RETRIEVAL_TASKS


class TaskError(ValueError):
    """Inconsistent task parameters or unbuildable instance."""


OUTPUT_PREDICTION_INSTRUCTION = (
    "You are given a number of Python functions and an assertion containing an input to one of "
    "the functions. Complete the assertion with a literal (no unsimplified expressions, no "
    "function calls) containing the output when executing the provided code on the given input, "
    "even if the function is incorrect or incomplete. Do NOT output any extra information."
)

INPUT_PREDICTION_INSTRUCTION = (
    "You are given a number of Python functions and an assertion containing an output of one of "
    "the functions. Find any input such that executing that function on the input leads to the "
    "given output. There may be multiple answers, but you should only output one."
)

FUNCTION_RETRIEVAL_QUESTION = (
    "Each line in the code block {where} starts with a random key. I'm looking for a function "
    "starting at key `{start}` and ending at key `{end}` in the code snippet {where}. "
    "Can you help me find it?"
)

LINE_RETRIEVAL_QUESTION = (
    "Each line in the code block {where} starts with a random key. I'm looking for a line with "
    "key `{key}` in the code snippet {where}. Can you help me find it?"
)


@dataclass(frozen=True)
class PromptBundle:
    """Ordered chat messages; the trailing assistant message is the prefill."""

    messages: tuple[tuple[str, str], ...]

    @property
    def user_text(self) -> str:
        return self.messages[0][1]

    @property
    def prefill(self) -> str:
        role, text = self.messages[-1]
        if role != "assistant":
            raise TaskError("bundle does not end with an assistant prefill")
        return text

    def to_wire(self) -> list[dict]:
        return [{"role": role, "content": text} for role, text in self.messages]


@dataclass(frozen=True)
class TaskInstance:
    id: str
    task_type: str
    context: AssembledContext
    query_params: dict
    gold: str
    target_id: str
    target_source: str
    distractor_count: int
    with_replacement: bool

    @property
    def position_index(self) -> int:
        return self.context.position_index

    @property
    def positions(self) -> int:
        return self.context.positions


def _assertion(task_type: str, query_params: dict) -> str:
    if task_type == TASK_CRUXEVAL_IN:
        return f"assert {query_params['output']} == f(??)"
    return f"assert f({query_params['input']}) == ??"


def build_prompt(
    instance: TaskInstance,
    qac: bool = True,
    *,
    keys_on_prediction: bool = False,
) -> PromptBundle:
    """Render the chat template for the instance's task type.

    With ``qac`` the query appears before and after the code block; without
    it the trailing copy is omitted. Retrieval blocks always carry the
    per-line keys; prediction blocks only when ``keys_on_prediction``.
    """
    params = instance.query_params
    if instance.task_type in PREDICTION_TASKS:
        instruction = (
            INPUT_PREDICTION_INSTRUCTION
            if instance.task_type == TASK_CRUXEVAL_IN
            else OUTPUT_PREDICTION_INSTRUCTION
        )
        assertion = _assertion(instance.task_type, params)
        code_block = instance.context.text(keyed=keys_on_prediction)
        user = (
            f"{instruction}\n\n"
            f"[ASSERTION]\n{assertion}\n[/ASSERTION]\n\n"
            f"[FUNCTIONS]\n{code_block}\n[/FUNCTIONS]"
        )
        if qac:
            user += f"\n\n[ASSERTION]\n{assertion}\n[/ASSERTION]\n\n{instruction}"
        if instance.task_type == TASK_CRUXEVAL_IN:
            prefill = (
                "Sure! Here is the corresponding input:\n\n"
                f"```python\nassert {params['output']} == f("
            )
        else:
            prefill = (
                "Sure! Here is the corresponding output:\n\n"
                f"```python\nassert f({params['input']}) == "
            )
        return PromptBundle(messages=(("user", user), ("assistant", prefill)))

    if instance.task_type == TASK_RETRIEVE_FUNCTION:
        question = FUNCTION_RETRIEVAL_QUESTION
        fills = {"start": params["start"], "end": params["end"]}
        prefill = (
            "Sure! Here is the full function starting at key "
            f"`{params['start']}` and ending at key `{params['end']}`:\n\n```python\n"
        )
    elif instance.task_type == TASK_RETRIEVE_LINE:
        question = LINE_RETRIEVAL_QUESTION
        fills = {"key": params["key"]}
        prefill = f"Sure! Here is the line with key {params['key']}:\n\n```python\n"
    else:
        raise TaskError(f"unknown task type {instance.task_type!r}")

    code_block = instance.context.text(keyed=True)
    user = f"{question.format(where='below', **fills)}\n\n```python\n{code_block}\n```"
    if qac:
        user += f"\n\n{question.format(where='above', **fills)}"
    return PromptBundle(messages=(("user", user), ("assistant", prefill)))


def gold_answer(instance: TaskInstance) -> str:
    """The graded reference: literal text or verbatim source, key-free."""
    return instance.gold


@dataclass(frozen=True)
class GridSpec:
    """The evaluation grid: which contexts get built for which targets.

    ``seed`` drives target subsetting and line choice; the distractor draw
    and the hex-key streams can be pinned independently (they default to
    the main seed so a single seed still fixes everything).
    """

    task_type: str
    distractor_counts: tuple[int, ...]
    positions: int = 11
    subset_fraction: Fraction = Fraction(1)
    seed: int = 0
    corpus_seed: int | None = None
    key_seed: int | None = None

    @property
    def effective_corpus_seed(self) -> int:
        return self.seed if self.corpus_seed is None else self.corpus_seed

    @property
    def effective_key_seed(self) -> int:
        return self.seed if self.key_seed is None else self.key_seed

    def validate(self) -> None:
        if self.task_type not in TASK_TYPES:
            raise TaskError(f"unknown task type {self.task_type!r}")
        if not self.distractor_counts:
            raise TaskError("at least one distractor count is required")
        if any(c < 1 for c in self.distractor_counts):
            raise TaskError("distractor counts must be >= 1")
        if self.positions < 2:
            raise TaskError("positions must be >= 2")
        if not 0 < self.subset_fraction <= 1:
            raise TaskError("subset_fraction must be in (0, 1]")


def subsample_targets(targets: list[TargetSnippet], fraction: Fraction, seed: int) -> list[TargetSnippet]:
    """Seeded subset of round(n * fraction) targets, original order kept."""
    if fraction == 1:
        return list(targets)
    count = round(len(targets) * fraction)
    rng = SplitMix64(seed)
    picked = sorted(rng.sample_indices(len(targets), count))
    return [targets[i] for i in picked]


def _line_retrieval_index(target: TargetSnippet, seed: int) -> int:
    """Uniform body line (not the signature, not blank), as a source line index."""
    lines = target.source.split("\n")
    candidates = [i for i in range(1, len(lines)) if lines[i].strip()]
    if not candidates:
        raise TaskError(f"target {target.id} has no retrievable body line")
    rng = SplitMix64(seed)
    return candidates[rng.below(len(candidates))]


def make_instances(
    targets: list[TargetSnippet],
    corpus: Corpus,
    grid: GridSpec,
) -> list[TaskInstance]:
    """Full grid of instances: targets x distractor counts x positions.

    The distractor draw is independent per (target, count) pair and shared
    across that pair's positions, so position is the only factor that
    varies along a positional curve. Everything is derived from the grid
    seed; equal grids produce equal instance lists.
    """
    grid.validate()
    if not targets:
        raise TaskError("empty target set")
    chosen = subsample_targets(targets, grid.subset_fraction, derive_seed(grid.seed, "subset"))
    instances: list[TaskInstance] = []
    for target in chosen:
        line_index = (
            _line_retrieval_index(target, derive_seed(grid.seed, "line", target.id))
            if grid.task_type == TASK_RETRIEVE_LINE
            else None
        )
        for count in grid.distractor_counts:
            sample = sample_distractors(
                corpus, count, derive_seed(grid.effective_corpus_seed, "distractors", target.id, count)
            )
            for position in range(grid.positions):
                context = mix(
                    target,
                    list(sample.entries),
                    position,
                    grid.positions,
                    derive_seed(grid.effective_key_seed, "keys", target.id, count, position),
                )
                instances.append(
                    _build_instance(grid.task_type, target, context, count, sample.with_replacement, line_index)
                )
    return instances


def _build_instance(
    task_type: str,
    target: TargetSnippet,
    context: AssembledContext,
    count: int,
    with_replacement: bool,
    line_index: int | None,
) -> TaskInstance:
    first, last = context.target_span
    if task_type == TASK_RETRIEVE_FUNCTION:
        query_params = {"start": context.lines[first].key, "end": context.lines[last].key}
        gold = target.source
    elif task_type == TASK_RETRIEVE_LINE:
        assert line_index is not None
        line = context.lines[first + line_index]
        query_params = {"key": line.key}
        gold = line.text
    elif task_type == TASK_CRUXEVAL_IN:
        if target.input_literal is None or target.output_literal is None:
            raise TaskError(f"target {target.id} lacks input/output literals")
        query_params = {"output": target.output_literal}
        gold = target.input_literal
    else:  # output prediction, generated or external
        if target.input_literal is None or target.output_literal is None:
            raise TaskError(f"target {target.id} lacks input/output literals")
        query_params = {"input": target.input_literal}
        gold = target.output_literal
    return TaskInstance(
        id=f"{task_type}:{target.id}:c{count}:p{context.position_index}",
        task_type=task_type,
        context=context,
        query_params=query_params,
        gold=gold,
        target_id=target.id,
        target_source=target.source,
        distractor_count=count,
        with_replacement=with_replacement,
    )


def target_from_semtrace(task: semtrace.SemTraceTask) -> TargetSnippet:
    return TargetSnippet(
        id=task.id,
        source=semtrace.render(task),
        input_literal=str(task.x),
        output_literal=repr(semtrace.oracle(task)),
        kind="semtrace",
    )


def read_targets(path: str | Path) -> list[TargetSnippet]:
    """External benchmark targets: JSONL with {id, source, input, output}."""
    targets: list[TargetSnippet] = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            try:
                targets.append(
                    TargetSnippet(
                        id=str(record["id"]),
                        source=record["source"],
                        input_literal=record.get("input"),
                        output_literal=record.get("output"),
                        kind="external",
                    )
                )
            except KeyError as exc:
                raise TaskError(f"{path}:{lineno}: target record missing {exc}") from exc
    if not targets:
        raise TaskError(f"{path}: no targets")
    return targets


def write_instances(
    instances: Iterable[TaskInstance],
    path: str | Path,
    *,
    qac: bool = True,
    keys_on_prediction: bool = False,
) -> int:
    """Instance file with the rendered prompts embedded verbatim."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for instance in instances:
            bundle = build_prompt(instance, qac, keys_on_prediction=keys_on_prediction)
            record = {
                "id": instance.id,
                "task_type": instance.task_type,
                "target_id": instance.target_id,
                "distractor_count": instance.distractor_count,
                "position_index": instance.position_index,
                "positions": instance.positions,
                "with_replacement": instance.with_replacement,
                "query_params": instance.query_params,
                "gold": instance.gold,
                "granularity": float(instance.context.granularity),
                "messages": bundle.to_wire(),
            }
            fh.write(json.dumps(record) + "\n")
            count += 1
    return count

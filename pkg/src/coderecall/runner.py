"""Experiment orchestration: config, resumable execution, re-scoring.

A run is pinned by its config hash: every seed and flag participates, so
two logs with equal hashes are comparable and a re-run of the same config
appends into the same log file. Records are written one JSON line per
model call, in instance order, flushed per line; on restart, completed
instance ids are skipped. Nothing secret (API keys) ever reaches the log.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from . import corpus as corpus_mod
from . import semtrace
from .analysis import aggregate, lim_stats
from .client import ModelEndpoint, complete
from .rng import ALGORITHM
from .scoring import (
    PREDICTION_TASKS,
    RETRIEVAL_TASKS,
    TASK_CRUXEVAL_IN,
    TASK_RETRIEVE_LINE,
    ParseError,
    Score,
    extract_answer,
    parse_literal,
    score_input_prediction,
    score_prediction,
    score_retrieval,
)
from .tasks import GridSpec, TaskInstance, build_prompt, make_instances, read_targets, target_from_semtrace

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

ABORT_ENV = "CODERECALL_ABORT_AFTER"
FAIL_FAST_AFTER = 10


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass(frozen=True)
class Seeds:
    corpus: int = 0
    generation: int = 1
    sampling: int = 2
    keys: int = 3

    def to_dict(self) -> dict:
        return {"corpus": self.corpus, "generation": self.generation,
                "sampling": self.sampling, "keys": self.keys}


@dataclass(frozen=True)
class RunConfig:
    endpoint: ModelEndpoint
    task_type: str
    corpus_path: str
    corpus_format: str = "jsonl"
    targets_path: str | None = None  # default: generate assignment-trace tasks
    digits: int = 2
    dataset_size: int = semtrace.DEFAULT_DATASET_SIZE
    distractor_counts: tuple[int, ...] = (20, 40, 60, 80)
    positions: int = 11
    subset_fraction: Fraction = Fraction(1)
    seeds: Seeds = Seeds()
    qac: bool = True
    keys_on_prediction: bool = False
    out_dir: str = "runs"
    executor_cmd: tuple[str, ...] | None = None

    def validate(self) -> None:
        if self.task_type not in PREDICTION_TASKS + RETRIEVAL_TASKS:
            raise ConfigError(f"unknown task type {self.task_type!r}")
        if self.positions < 2:
            raise ConfigError("positions must be >= 2")
        if not self.distractor_counts:
            raise ConfigError("distractor_counts must be non-empty")
        if not 0 < self.subset_fraction <= 1:
            raise ConfigError("subset_fraction must be in (0, 1]")
        if self.task_type == TASK_CRUXEVAL_IN and self.targets_path is None:
            raise ConfigError("input prediction needs external targets with reference inputs")

    def canonical(self) -> dict:
        return {
            "endpoint": self.endpoint.to_dict(),
            "task_type": self.task_type,
            "corpus_path": self.corpus_path,
            "corpus_format": self.corpus_format,
            "targets_path": self.targets_path,
            "digits": self.digits,
            "dataset_size": self.dataset_size,
            "distractor_counts": list(self.distractor_counts),
            "positions": self.positions,
            "subset_fraction": str(self.subset_fraction),
            "seeds": self.seeds.to_dict(),
            "qac": self.qac,
            "keys_on_prediction": self.keys_on_prediction,
            "executor_cmd": list(self.executor_cmd) if self.executor_cmd else None,
            "prng": ALGORITHM,
        }

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return f"run_{self.config_hash[:12]}"


def config_from_json(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def _interpolate_env(value: str) -> str:
    # ${VAR} interpolation, for endpoint URLs only; secrets stay referenced
    # by environment variable name and are resolved at request time
    out = value
    while "${" in out:
        start = out.index("${")
        end = out.index("}", start)
        var = out[start + 2:end]
        out = out[:start] + os.environ.get(var, "") + out[end + 1:]
    return out


def config_from_dict(data: dict) -> RunConfig:
    try:
        ep = data["endpoint"]
        # function bodies run long, so retrieval gets a larger default budget
        default_max_tokens = 1024 if data.get("task_type") == "retrieve_function" else 512
        endpoint = ModelEndpoint(
            base_url=_interpolate_env(ep["base_url"]),
            model_name=ep["model_name"],
            auth_env=ep.get("auth_env"),
            max_tokens=ep.get("max_tokens", default_max_tokens),
            timeout_s=ep.get("timeout_s", 120.0),
            max_in_flight=ep.get("max_in_flight", 4),
            retry_limit=ep.get("retry_limit", 5),
            backoff_base_s=ep.get("backoff_base_s", 0.5),
            backoff_cap_s=ep.get("backoff_cap_s", 30.0),
            prefill_mode=ep.get("prefill_mode", "assistant"),
        )
        seeds_data = data.get("seeds", {})
        fraction = data.get("subset_fraction", 1)
        if isinstance(fraction, str):
            fraction = Fraction(fraction)
        else:
            fraction = Fraction(fraction).limit_denominator(10 ** 6)
        config = RunConfig(
            endpoint=endpoint,
            task_type=data["task_type"],
            corpus_path=data["corpus_path"],
            corpus_format=data.get("corpus_format", "jsonl"),
            targets_path=data.get("targets_path"),
            digits=data.get("digits", 2),
            dataset_size=data.get("dataset_size", semtrace.DEFAULT_DATASET_SIZE),
            distractor_counts=tuple(data.get("distractor_counts", (20, 40, 60, 80))),
            positions=data.get("positions", 11),
            subset_fraction=fraction,
            seeds=Seeds(**{k: int(v) for k, v in seeds_data.items()}),
            qac=data.get("qac", True),
            keys_on_prediction=data.get("keys_on_prediction", False),
            out_dir=data.get("out_dir", "runs"),
            executor_cmd=tuple(data["executor_cmd"]) if data.get("executor_cmd") else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    config.validate()
    return config


# -- instance construction -----------------------------------------------------


def build_targets(config: RunConfig) -> list:
    if config.targets_path:
        return read_targets(config.targets_path)
    tasks = semtrace.generate_dataset(config.seeds.generation, config.digits, config.dataset_size)
    return [target_from_semtrace(task) for task in tasks]


def build_instances(config: RunConfig) -> list[TaskInstance]:
    loaded = corpus_mod.ingest(config.corpus_path, config.corpus_format)
    filtered = corpus_mod.filter_by_percentile(loaded)
    if not filtered.entries:
        raise ConfigError("corpus is empty after percentile filtering")
    grid = GridSpec(
        task_type=config.task_type,
        distractor_counts=config.distractor_counts,
        positions=config.positions,
        subset_fraction=config.subset_fraction,
        seed=config.seeds.sampling,
        corpus_seed=config.seeds.corpus,
        key_seed=config.seeds.keys,
    )
    return make_instances(build_targets(config), filtered, grid)


# -- scoring dispatch -----------------------------------------------------------


def score_instance(instance: TaskInstance, completion_text: str, executor=None) -> Score:
    answer = extract_answer(completion_text, instance.task_type)
    if instance.task_type in RETRIEVAL_TASKS:
        granularity = "line" if instance.task_type == TASK_RETRIEVE_LINE else "function"
        return score_retrieval(answer, instance.gold, granularity)
    if instance.task_type == TASK_CRUXEVAL_IN:
        return score_input_prediction(answer, instance, executor)
    try:
        gold_value = parse_literal(instance.gold).value
    except ParseError as exc:
        raise ConfigError(f"unparseable gold literal for {instance.id}: {exc}") from exc
    return score_prediction(answer, gold_value, instance.task_type)


# -- the run loop ----------------------------------------------------------------


@dataclass
class RunResult:
    log_path: Path
    total_instances: int
    written: int
    skipped: int
    failed: int
    exit_code: int


def read_completed_ids(log_path: Path) -> set[str]:
    """Ids already persisted; a torn trailing line (crash mid-write) is dropped."""
    done: set[str] = set()
    if not log_path.exists():
        return done
    with log_path.open(encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            if i >= len(lines) - 2:
                log.warning("dropping torn trailing record in %s", log_path)
                continue
            raise
        done.add(record["instance_id"])
    return done


def _record_for(
    config: RunConfig,
    instance: TaskInstance,
    bundle,
    completion,
    score: Score | None,
    error: dict | None,
) -> dict:
    return {
        "instance_id": instance.id,
        "run_id": config.run_id,
        "config_hash": config.config_hash,
        "model": config.endpoint.model_name,
        "task_type": instance.task_type,
        "target_id": instance.target_id,
        "distractor_count": instance.distractor_count,
        "position_index": instance.position_index,
        "positions": instance.positions,
        "granularity": float(instance.context.granularity),
        "granularity_exact": f"{instance.context.granularity.numerator}/{instance.context.granularity.denominator}",
        "with_replacement": instance.with_replacement,
        "gold": instance.gold,
        "target_source": instance.target_source,
        "prompt_messages": bundle.to_wire(),
        "completion": None if completion is None else {
            "text": completion.text,
            "finish_reason": completion.finish_reason,
            "usage": completion.usage,
            "raw": completion.raw,
            "request_payload": completion.request_payload,
        },
        "score": None if score is None else score.to_dict(),
        "error": error,
        "timing": {
            "latency_s": None if completion is None else completion.latency_s,
            "completed_at": datetime.now(timezone.utc).isoformat(),
        },
    }


def run(config: RunConfig, *, executor=None, transport=None, progress=print) -> RunResult:
    """Execute (or resume) a run; returns the log path and exit code.

    Bounded parallelism comes from the endpoint's max_in_flight; records
    are written by this thread alone, in instance order, one flushed line
    each, so an interrupt at any moment loses at most the line in flight.
    """
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / f"{config.run_id}.jsonl"
    meta_path = out_dir / f"{config.run_id}.meta.json"
    if not meta_path.exists():
        meta_path.write_text(json.dumps(config.canonical(), indent=2, sort_keys=True) + "\n")

    instances = build_instances(config)
    done = read_completed_ids(log_path)
    pending = [i for i in instances if i.id not in done]
    progress(f"{config.run_id}: {len(instances)} instances, {len(done)} already done, {len(pending)} to go")

    abort_after = int(os.environ.get(ABORT_ENV, "0") or "0")
    written = 0
    failed = 0
    consecutive_failures = 0
    aborted_early = False
    prompt_tokens = 0
    completion_tokens = 0
    tokens_estimated = False

    def call(instance: TaskInstance):
        bundle = build_prompt(instance, config.qac, keys_on_prediction=config.keys_on_prediction)
        try:
            completion = complete(config.endpoint, bundle, instance=instance, transport=transport)
            return bundle, completion, None
        except Exception as exc:  # recorded, not raised: the run continues
            return bundle, None, {"kind": type(exc).__name__, "message": str(exc)}

    with log_path.open("a", encoding="utf-8") as sink, ThreadPoolExecutor(
        max_workers=config.endpoint.max_in_flight
    ) as pool:
        window: deque = deque()
        iterator = iter(pending)
        exhausted = False
        while window or not exhausted:
            while not exhausted and not aborted_early and len(window) < config.endpoint.max_in_flight:
                try:
                    nxt = next(iterator)
                except StopIteration:
                    exhausted = True
                    break
                window.append((nxt, pool.submit(call, nxt)))
            if not window:
                break
            instance, future = window.popleft()
            bundle, completion, error = future.result()
            score = None
            if error is None:
                try:
                    score = score_instance(instance, completion.text, executor)
                except Exception as exc:
                    error = {"kind": type(exc).__name__, "message": str(exc)}
            if completion is not None:
                if completion.usage is not None:
                    prompt_tokens += completion.usage[0]
                    completion_tokens += completion.usage[1]
                else:
                    prompt_tokens += corpus_mod.estimate_tokens(bundle.user_text)
                    completion_tokens += corpus_mod.estimate_tokens(completion.text)
                    tokens_estimated = True
            record = _record_for(config, instance, bundle, completion, score, error)
            sink.write(json.dumps(record) + "\n")
            sink.flush()
            written += 1
            if error is not None:
                failed += 1
                consecutive_failures += 1
                if consecutive_failures >= FAIL_FAST_AFTER and not aborted_early:
                    aborted_early = True
                    exhausted = True
                    log.error("endpoint failing persistently; aborting with partial log intact")
            else:
                consecutive_failures = 0
            if abort_after and written >= abort_after:
                sink.flush()
                os._exit(137)  # simulated crash for resume testing

    if written:
        kind = "estimated" if tokens_estimated else "reported"
        progress(f"tokens ({kind}): prompt {prompt_tokens}, completion {completion_tokens}")
    exit_code = EXIT_OK if failed == 0 and not aborted_early else EXIT_PARTIAL
    result = RunResult(
        log_path=log_path,
        total_instances=len(instances),
        written=written,
        skipped=len(done),
        failed=failed,
        exit_code=exit_code,
    )
    summarize_log(log_path, progress=progress)
    return result


def read_records(log_path: str | Path) -> list[dict]:
    records: list[dict] = []
    with Path(log_path).open(encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i >= len(lines) - 2:
                log.warning("dropping torn trailing record")
                continue
            raise
    return records


def rescore(log_path: str | Path, out_path: str | Path, *, executor=None) -> int:
    """Re-grade a stored log with the current scoring rules; no network.

    Records keep their prompts and completions verbatim; only the score
    (and scoring-stage errors) are recomputed.
    """
    records = read_records(log_path)
    count = 0
    with Path(out_path).open("w", encoding="utf-8") as sink:
        for record in records:
            completion = record.get("completion")
            if completion is not None:
                instance_like = _InstanceView(record)
                try:
                    score = score_instance(instance_like, completion["text"], executor)
                    record["score"] = score.to_dict()
                    record["error"] = None
                except Exception as exc:
                    record["score"] = None
                    record["error"] = {"kind": type(exc).__name__, "message": str(exc)}
            sink.write(json.dumps(record) + "\n")
            count += 1
    return count


class _InstanceView:
    """Duck-typed TaskInstance over a persisted record, for re-scoring."""

    def __init__(self, record: dict):
        self.id = record["instance_id"]
        self.task_type = record["task_type"]
        self.gold = record["gold"]
        self.target_id = record["target_id"]
        self.query_params = _query_params_from_record(record)
        self.target_source = _target_source_from_record(record)


def _query_params_from_record(record: dict) -> dict:
    # recover the output literal for execution-graded input prediction
    if record["task_type"] == TASK_CRUXEVAL_IN:
        user = record["prompt_messages"][0]["content"]
        marker = "assert "
        start = user.find(marker) + len(marker)
        end = user.find(" == f(??)", start)
        return {"output": user[start:end]} if end > start else {}
    return {}


def _target_source_from_record(record: dict) -> str | None:
    return record.get("target_source")


def summarize_log(log_path: str | Path, progress=print) -> list[dict]:
    """Accuracy-by-position summary lines; returns the stats rows."""
    records = read_records(log_path)
    curves = aggregate(records)
    rows = []
    for curve in curves:
        stats = lim_stats(curve)
        rel = "n/a" if stats["drop_rel"] is None else f"{100 * stats['drop_rel']:.1f}%"
        progress(
            f"{curve.model} {curve.task_type} n_distractors={curve.distractor_count} "
            f"[{curve.metric}] " + " ".join(f"{m:.2f}" for m in curve.means)
            + f"  (max {stats['max']:.3f}, min {stats['min']:.3f}, drop {stats['drop_pp']:.1f}pp / {rel})"
        )
        rows.append({"model": curve.model, "task_type": curve.task_type,
                     "distractor_count": curve.distractor_count, "metric": curve.metric, **stats})
    return rows

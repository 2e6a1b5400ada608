"""Command-line interface.

Thin shell over the library: each subcommand parses flags, calls the
corresponding module, and prints a short summary. Exit codes: 0 on
success, 1 when a run finished with partial failures, 2 on configuration
or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shlex
import sys
from fractions import Fraction
from pathlib import Path

from . import analysis, corpus as corpus_mod, semtrace, sensitivity as sens_mod
from .mixer import MixError
from .pyexec import ProtocolExecutor, SemTraceGrammarExecutor
from .runner import ConfigError, EXIT_CONFIG, EXIT_OK, rescore, run, summarize_log
from .scoring import score_prediction, parse_literal, ParseError
from .tasks import GridSpec, TaskError, make_instances, read_targets, target_from_semtrace, write_instances

_USER_ERRORS = (
    ConfigError,
    corpus_mod.CorpusError,
    semtrace.SemTraceError,
    TaskError,
    MixError,
    sens_mod.SensitivityError,
    analysis.AnalysisError,
)

log = logging.getLogger(__name__)


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate an assignment-trace task file")
    p.add_argument("--digits", type=int, default=2)
    p.add_argument("--count", type=int, default=semtrace.DEFAULT_DATASET_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _cmd_gen(args) -> int:
    tasks = semtrace.generate_dataset(args.seed, args.digits, args.count)
    written = semtrace.write_tasks(tasks, args.out)
    print(f"wrote {written} tasks to {args.out}")
    return EXIT_OK


def _add_assemble(sub):
    p = sub.add_parser("assemble", help="build contexts and prompt instances")
    p.add_argument("--corpus", required=True)
    p.add_argument("--corpus-format", default="jsonl", choices=corpus_mod.FORMATS)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--tasks", help="assignment-trace task file (from gen)")
    src.add_argument("--targets", help="external targets JSONL {id, source, input, output}")
    p.add_argument("--task-type", required=True)
    p.add_argument("--counts", default="20,40,60,80")
    p.add_argument("--positions", type=int, default=11)
    p.add_argument("--subset-fraction", default="1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-qac", action="store_true")
    p.add_argument("--keys-on-prediction", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--contexts-out", help="also dump the assembled contexts as JSONL")


def _cmd_assemble(args) -> int:
    loaded = corpus_mod.ingest(args.corpus, args.corpus_format)
    filtered = corpus_mod.filter_by_percentile(loaded)
    if args.tasks:
        targets = [target_from_semtrace(t) for t in semtrace.read_tasks(args.tasks)]
    else:
        targets = read_targets(args.targets)
    grid = GridSpec(
        task_type=args.task_type,
        distractor_counts=tuple(int(c) for c in args.counts.split(",")),
        positions=args.positions,
        subset_fraction=Fraction(args.subset_fraction),
        seed=args.seed,
    )
    instances = make_instances(targets, filtered, grid)
    written = write_instances(
        instances, args.out, qac=not args.no_qac, keys_on_prediction=args.keys_on_prediction
    )
    print(f"wrote {written} instances to {args.out}")
    if args.contexts_out:
        from .mixer import write_contexts

        write_contexts((i.context for i in instances), args.contexts_out)
        print(f"wrote contexts to {args.contexts_out}")
    return EXIT_OK


def _add_run(sub):
    p = sub.add_parser("run", help="execute (or resume) a configured run")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--task-type", help="override the config's task type")
    p.add_argument("--counts", help="override distractor counts, e.g. 20,40")
    p.add_argument("--positions", type=int)
    p.add_argument("--digits", type=int)
    p.add_argument("--dataset-size", type=int)
    p.add_argument("--subset-fraction")
    p.add_argument("--corpus")
    p.add_argument("--out-dir")
    p.add_argument("--model", help="override endpoint model name")
    p.add_argument("--base-url", help="override endpoint base URL")


def _load_run_config(args):
    import json as json_mod

    from .runner import config_from_dict

    data = json_mod.loads(Path(args.config).read_text(encoding="utf-8"))
    overrides = {
        "task_type": args.task_type,
        "positions": args.positions,
        "digits": args.digits,
        "dataset_size": args.dataset_size,
        "subset_fraction": args.subset_fraction,
        "corpus_path": args.corpus,
        "out_dir": args.out_dir,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if args.counts:
        data["distractor_counts"] = [int(c) for c in args.counts.split(",")]
    endpoint_overrides = {"model_name": args.model, "base_url": args.base_url}
    for key, value in endpoint_overrides.items():
        if value is not None:
            data.setdefault("endpoint", {})[key] = value
    return config_from_dict(data)


def _cmd_run(args) -> int:
    try:
        config = _load_run_config(args)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    executor = _make_executor(list(config.executor_cmd) if config.executor_cmd else None, grammar_ok=True)
    try:
        result = run(config, executor=executor)
    finally:
        if executor is not None:
            executor.close()
    print(f"log: {result.log_path} (written {result.written}, skipped {result.skipped}, failed {result.failed})")
    return result.exit_code


def _add_rescore(sub):
    p = sub.add_parser("rescore", help="re-grade a stored run log, offline")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--executor-cmd", help="interpreter oracle command (for input prediction)")


def _cmd_rescore(args) -> int:
    executor = _make_executor(shlex.split(args.executor_cmd) if args.executor_cmd else None)
    try:
        count = rescore(args.log, args.out, executor=executor)
    finally:
        if executor is not None:
            executor.close()
    print(f"rescored {count} records into {args.out}")
    return EXIT_OK


def _make_executor(cmd: list[str] | None, *, grammar_ok: bool = True):
    if cmd:
        return ProtocolExecutor(cmd)
    return SemTraceGrammarExecutor() if grammar_ok else None


def _add_sensitivity(sub):
    p = sub.add_parser(
        "sensitivity",
        help="line-removal variants, interpreter ground truth, degradation report",
    )
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--tasks", help="assignment-trace task file")
    src.add_argument("--targets", help="external targets JSONL")
    p.add_argument("--cap", type=int, default=sens_mod.DEFAULT_CAP)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", default="1/1000000000")
    p.add_argument("--executor-cmd", help="interpreter oracle command; default: built-in trace-grammar executor")
    p.add_argument("--emit-variants-only", action="store_true", help="skip annotation and the report")
    p.add_argument("--out-dir", required=True)


def _cmd_sensitivity(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.tasks:
        targets = [target_from_semtrace(t) for t in semtrace.read_tasks(args.tasks)]
    else:
        targets = read_targets(args.targets)

    all_variants = []
    for target in targets:
        all_variants.extend(sens_mod.enumerate_variants(target, cap=args.cap, seed=args.seed))
    variants_path = out_dir / "variants.jsonl"
    if args.emit_variants_only:
        sens_mod.write_variants(all_variants, variants_path)
        print(f"wrote {len(all_variants)} variants to {variants_path}")
        return EXIT_OK

    executor = _make_executor(shlex.split(args.executor_cmd) if args.executor_cmd else None)
    try:
        accuracies: dict[str, tuple[float, list[tuple[Fraction, float]]]] = {}
        annotated_all = []
        for target in targets:
            variants = [v for v in all_variants if v.parent_id == target.id]
            annotated = sens_mod.oracle_ground_truth(variants, target.input_literal or "0", executor)
            annotated_all.extend(annotated)
            r_full, rows = _interpreter_accuracies(target, annotated)
            accuracies[target.id] = (r_full, rows)
    finally:
        executor.close()
    sens_mod.write_variants(annotated_all, variants_path)
    report = sens_mod.build_report(accuracies, epsilon=Fraction(args.epsilon))
    sens_mod.write_report_csv(report, out_dir / "sensitivity.csv")
    (out_dir / "meta.json").write_text(
        json.dumps(
            {
                "cap": args.cap,
                "seed": args.seed,
                "epsilon": args.epsilon,
                "sampling": "all non-empty proper subsets when 2^L-2 <= cap, else size-stratified sample of cap",
                "executor": args.executor_cmd or "builtin trace-grammar",
                "functions": len(targets),
                "variants": len(annotated_all),
            },
            indent=2,
        )
        + "\n"
    )
    with (out_dir / "sensitivity.jsonl").open("w", encoding="utf-8") as fh:
        for fn_id, value in sorted(report.per_function.items()):
            fh.write(json.dumps({"function": fn_id, "sensitivity": float(value)}) + "\n")
    print(
        f"{len(targets)} functions, {len(annotated_all)} variants; "
        f"mean sensitivity {float(report.mean_sensitivity):.4f}"
    )
    print(f"report: {out_dir / 'sensitivity.csv'}")
    return EXIT_OK


def _interpreter_accuracies(target, annotated) -> tuple[float, list[tuple[Fraction, float]]]:
    """Interpreter-as-predictor accuracy against the original expected output."""
    try:
        gold = parse_literal(target.output_literal).value if target.output_literal else None
    except ParseError:
        gold = None
    if gold is None:
        return 0.0, []
    rows: list[tuple[Fraction, float]] = []
    for variant in annotated:
        if variant.gold_status == "ok" and variant.gold_literal is not None:
            score = score_prediction(variant.gold_literal, gold, "semtrace_out")
            rows.append((variant.removed_fraction, 1.0 if score.exact else 0.0))
        else:
            rows.append((variant.removed_fraction, 0.0))
    return 1.0, rows


def _add_analyze(sub):
    p = sub.add_parser("analyze", help="curves, decay fits, bootstrap intervals")
    p.add_argument("--log", action="append", default=[], help="run log(s) to aggregate")
    p.add_argument("--out-dir", default="analysis")
    p.add_argument("--format", default="csv", choices=("csv", "jsonl"))
    p.add_argument("--points", help="CSV of x,y[,weight][,cluster] to fit instead of logs")
    p.add_argument("--fit", choices=("exp",), help="fit exponential decay to the points")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates for CIs")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)


def _cmd_analyze(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.points:
        if not args.fit:
            raise ConfigError("--points requires --fit exp")
        points, weights, clusters = _read_points(args.points)
        if args.bootstrap:
            if clusters is None:
                clusters = [[p] for p in points]
            fit = analysis.bootstrap_decay_fit(
                clusters, n_replicates=args.bootstrap, level=args.level, seed=args.seed
            )
        else:
            fit = analysis.fit_exponential(points, weights)
        out_path = analysis.export_fits({"decay": fit}, out_dir / "fits.jsonl")
        print(json.dumps(fit.to_dict(), indent=2))
        print(f"fit written to {out_path}")
        return EXIT_OK
    if not args.log:
        raise ConfigError("need --log (or --points)")
    records = []
    from .runner import read_records

    for log_file in args.log:
        records.extend(read_records(log_file))
    curves = analysis.aggregate(records)
    written = analysis.export_curves(curves, out_dir, fmt=args.format)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _read_points(path: str):
    points: list[tuple[float, float]] = []
    weights: list[float] = []
    cluster_map: dict[str, list[tuple[float, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "x" not in reader.fieldnames or "y" not in reader.fieldnames:
            raise ConfigError("points CSV needs at least x and y columns")
        for row in reader:
            point = (float(row["x"]), float(row["y"]))
            points.append(point)
            weights.append(float(row["weight"]) if row.get("weight") else 1.0)
            if row.get("cluster"):
                cluster_map.setdefault(row["cluster"], []).append(point)
    clusters = list(cluster_map.values()) if cluster_map else None
    return points, weights, clusters


def _add_report(sub):
    p = sub.add_parser("report", help="human-readable summary of a run log")
    p.add_argument("--log", required=True)


def _cmd_report(args) -> int:
    summarize_log(args.log)
    return EXIT_OK


def _add_serve(sub):
    p = sub.add_parser("serve", help="start the HTTP service (mock models included)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


_COMMANDS = {
    "gen": _cmd_gen,
    "assemble": _cmd_assemble,
    "run": _cmd_run,
    "rescore": _cmd_rescore,
    "sensitivity": _cmd_sensitivity,
    "analyze": _cmd_analyze,
    "report": _cmd_report,
    "serve": _cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coderecall",
        description="positional code-recall benchmark harness",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for adder in (_add_gen, _add_assemble, _add_run, _add_rescore,
                  _add_sensitivity, _add_analyze, _add_report, _add_serve):
        adder(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

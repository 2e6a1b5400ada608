"""Semantic-recall sensitivity via line-removed function variants.

A task leans on in-context understanding to the extent that withholding
lines of the snippet hurts performance. This module enumerates incomplete
variants (every non-empty proper subset of body lines, sampled with
size-stratification above a cap), obtains their ground truth from an
interpreter-style executor, and aggregates the normalized degradation

    mean over variants of (R_full - R_variant) / (R_full + epsilon).

Variants are always evaluated without distractors. For generated
assignment-trace tasks the whole removal curve also exists in closed form,
which pins the plumbing end to end.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .mixer import TargetSnippet
from .rng import SplitMix64, derive_seed
from . import semtrace

log = logging.getLogger(__name__)

DEFAULT_EPSILON = Fraction(1, 10 ** 9)
DEFAULT_CAP = 4096
FRACTION_BUCKET_PCT = 5  # reporting buckets: removed fraction rounded to 5%


class SensitivityError(ValueError):
    """Unusable function shape or empty inputs."""


@dataclass(frozen=True)
class IncompleteVariant:
    """One line-removed version of a parent function."""

    parent_id: str
    removed_lines: tuple[int, ...]  # 0-based body line indices (signature excluded)
    source: str
    removed_fraction: Fraction
    gold_status: str | None = None  # "ok" | "error" | "timeout" once annotated
    gold_literal: str | None = None
    gold_error_kind: str | None = None

    @property
    def id(self) -> str:
        return f"{self.parent_id}#rm{'.'.join(str(i) for i in self.removed_lines)}"


def _subset_source(signature: str, body: list[str], removed: frozenset[int]) -> str:
    kept = [line for i, line in enumerate(body) if i not in removed]
    return "\n".join([signature] + kept)


def enumerate_variants(fn: TargetSnippet, cap: int = DEFAULT_CAP, seed: int = 0) -> list[IncompleteVariant]:
    """All line-removal variants of fn, or a stratified sample of cap of them.

    Removable lines are every physical body line; the signature always
    survives. Full enumeration covers every non-empty proper subset when
    that count fits under the cap; otherwise subsets are sampled uniformly
    without replacement, stratified by subset size, deterministically in
    the seed.
    """
    if cap < 1:
        raise SensitivityError(f"cap must be >= 1, got {cap}")
    lines = fn.source.split("\n")
    signature, body = lines[0], lines[1:]
    n = len(body)
    if n < 2:
        raise SensitivityError(f"function {fn.id} has {n} body line(s); need >= 2 for proper removal")

    total = 2 ** n - 2
    variants: list[IncompleteVariant] = []
    if total <= cap:
        for size in range(1, n):
            for removed in _combinations_lex(n, size):
                variants.append(_make_variant(fn.id, signature, body, removed))
        return variants

    quotas = _stratified_quotas(n, cap)
    rng = SplitMix64(derive_seed(seed, "variants", fn.id))
    for size in range(1, n):
        quota = quotas[size]
        if quota == 0:
            continue
        for removed in _sample_subsets(rng, n, size, quota):
            variants.append(_make_variant(fn.id, signature, body, removed))
    return variants


def _make_variant(parent_id: str, signature: str, body: list[str], removed: frozenset[int]) -> IncompleteVariant:
    return IncompleteVariant(
        parent_id=parent_id,
        removed_lines=tuple(sorted(removed)),
        source=_subset_source(signature, body, removed),
        removed_fraction=Fraction(len(removed), len(body)),
    )


def _combinations_lex(n: int, size: int) -> Iterable[frozenset[int]]:
    from itertools import combinations

    for combo in combinations(range(n), size):
        yield frozenset(combo)


def _stratified_quotas(n: int, cap: int) -> dict[int, int]:
    """Spread cap across subset sizes 1..n-1, capped by each stratum's size."""
    sizes = list(range(1, n))
    available = {size: math.comb(n, size) for size in sizes}
    quotas = {size: 0 for size in sizes}
    remaining = cap
    open_sizes = [s for s in sizes if available[s] > 0]
    while remaining > 0 and open_sizes:
        share = max(1, remaining // len(open_sizes))
        for size in list(open_sizes):
            take = min(share, available[size] - quotas[size], remaining)
            quotas[size] += take
            remaining -= take
            if quotas[size] == available[size]:
                open_sizes.remove(size)
            if remaining == 0:
                break
    return quotas


def _sample_subsets(rng: SplitMix64, n: int, size: int, quota: int) -> list[frozenset[int]]:
    total = math.comb(n, size)
    if quota >= total:
        return list(_combinations_lex(n, size))
    seen: set[frozenset[int]] = set()
    out: list[frozenset[int]] = []
    while len(out) < quota:
        combo = frozenset(rng.sample_indices(n, size))
        if combo not in seen:
            seen.add(combo)
            out.append(combo)
    return out


def sensitivity(r_full, r_incomplete: Sequence, epsilon=DEFAULT_EPSILON) -> Fraction:
    """Average normalized degradation over the incomplete variants."""
    if not r_incomplete:
        raise SensitivityError("no incomplete-variant performances supplied")
    full = Fraction(r_full)
    eps = Fraction(epsilon)
    if full + eps <= 0:
        raise SensitivityError("R(full) + epsilon must be positive")
    total = sum((full - Fraction(r)) / (full + eps) for r in r_incomplete)
    return total / len(r_incomplete)


def oracle_ground_truth(
    variants: Iterable[IncompleteVariant],
    input_literal: str,
    executor,
    *,
    timeout_ms: int = 5000,
) -> list[IncompleteVariant]:
    """Annotate variants with executor output; errors are kept, not dropped.

    A variant whose execution raises still participates downstream (any
    predicted literal scores 0 against it), so error outcomes are recorded
    with their kind rather than filtered out.
    """
    if executor is None:
        raise SensitivityError("executor unavailable")
    annotated: list[IncompleteVariant] = []
    for variant in variants:
        response = executor.execute(variant.source, input_literal, timeout_ms=timeout_ms)
        annotated.append(
            replace(
                variant,
                gold_status=response.status,
                gold_literal=response.value_literal if response.status == "ok" else None,
                gold_error_kind=getattr(response, "error_kind", None) if response.status != "ok" else None,
            )
        )
    return annotated


@dataclass(frozen=True)
class RemovalCurveRow:
    removed_fraction: Fraction
    exact_accuracy: Fraction
    partial_accuracy: Fraction
    n: int


def semtrace_removal_curve(tasks: Sequence[semtrace.SemTraceTask]) -> list[RemovalCurveRow]:
    """Closed-form removal curve for assignment-trace tasks.

    For a task with k assignment lines, removing m of them leaves the
    affected slots at their initializer value 0, so against the original
    expected output a perfect reader of the variant scores, in expectation
    over uniform random m-subsets:

        exact   = C(z, m) / C(k, m)          (z = slots whose expected value is 0)
        partial = (k - m) / k + m * z / k^2

    Rows aggregate (unweighted over tasks) by exact removed fraction m/k.
    """
    if not tasks:
        raise SensitivityError("no tasks supplied")
    buckets: dict[Fraction, list[tuple[Fraction, Fraction]]] = {}
    for task in tasks:
        k = task.k
        zeros = sum(1 for value in task.expected if value == 0)
        for m in range(0, k + 1):
            exact = Fraction(math.comb(zeros, m), math.comb(k, m)) if m <= zeros else Fraction(0)
            partial = Fraction(k - m, k) + Fraction(m * zeros, k * k)
            buckets.setdefault(Fraction(m, k), []).append((exact, partial))
    rows = []
    for fraction in sorted(buckets):
        pairs = buckets[fraction]
        rows.append(
            RemovalCurveRow(
                removed_fraction=fraction,
                exact_accuracy=sum(p[0] for p in pairs) / len(pairs),
                partial_accuracy=sum(p[1] for p in pairs) / len(pairs),
                n=len(pairs),
            )
        )
    return rows


def bucket_fraction(fraction: Fraction) -> Fraction:
    """Round a removed fraction to the nearest reporting bucket (5%)."""
    step = Fraction(FRACTION_BUCKET_PCT, 100)
    return Fraction(round(fraction / step)) * step


@dataclass(frozen=True)
class SensitivityReport:
    epsilon: Fraction
    per_function: dict[str, Fraction]
    by_fraction: list[tuple[Fraction, float, int]]  # (bucket, mean accuracy, n)

    @property
    def mean_sensitivity(self) -> Fraction:
        if not self.per_function:
            return Fraction(0)
        return sum(self.per_function.values()) / len(self.per_function)


def build_report(
    accuracies: dict[str, tuple[float, list[tuple[Fraction, float]]]],
    epsilon=DEFAULT_EPSILON,
) -> SensitivityReport:
    """Assemble the report from per-function (R_full, [(fraction, R_variant)]) data."""
    per_function: dict[str, Fraction] = {}
    bucket_rows: dict[Fraction, list[float]] = {}
    for fn_id, (r_full, variant_rows) in accuracies.items():
        variant_accs = [acc for _, acc in variant_rows]
        if variant_accs:
            per_function[fn_id] = sensitivity(r_full, variant_accs, epsilon)
        bucket_rows.setdefault(Fraction(0), []).append(r_full)
        for fraction, acc in variant_rows:
            bucket_rows.setdefault(bucket_fraction(fraction), []).append(acc)
    by_fraction = [
        (bucket, sum(values) / len(values), len(values))
        for bucket, values in sorted(bucket_rows.items())
    ]
    return SensitivityReport(epsilon=Fraction(epsilon), per_function=per_function, by_fraction=by_fraction)


def write_variants(variants: Iterable[IncompleteVariant], path: str | Path) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for variant in variants:
            fh.write(
                json.dumps(
                    {
                        "id": variant.id,
                        "parent_id": variant.parent_id,
                        "removed_lines": list(variant.removed_lines),
                        "removed_fraction": [
                            variant.removed_fraction.numerator,
                            variant.removed_fraction.denominator,
                        ],
                        "source": variant.source,
                        "gold_status": variant.gold_status,
                        "gold_literal": variant.gold_literal,
                        "gold_error_kind": variant.gold_error_kind,
                    }
                )
                + "\n"
            )
            count += 1
    return count


def read_variants(path: str | Path) -> list[IncompleteVariant]:
    variants: list[IncompleteVariant] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            variants.append(
                IncompleteVariant(
                    parent_id=record["parent_id"],
                    removed_lines=tuple(record["removed_lines"]),
                    source=record["source"],
                    removed_fraction=Fraction(*record["removed_fraction"]),
                    gold_status=record.get("gold_status"),
                    gold_literal=record.get("gold_literal"),
                    gold_error_kind=record.get("gold_error_kind"),
                )
            )
    return variants


def write_report_csv(report: SensitivityReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("removed_fraction,mean_accuracy,n\n")
        for bucket, mean_acc, n in report.by_fraction:
            fh.write(f"{float(bucket):.4f},{mean_acc:.6f},{n}\n")

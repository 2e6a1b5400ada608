"""Context assembly: place one target snippet among distractors at a slot.

The target is inserted between whole distractor functions, never splitting
one, at one of P equally spaced positions. Every physical line (including
the blank separator lines between functions) is prefixed with a unique
6-hex-digit key drawn from the seed. Relative-size and contiguity metrics
are computed over estimated token counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .corpus import DistractorFunction, TokenEstimator, estimate_tokens
from .rng import SplitMix64

KEY_LENGTH = 6
KEY_SPACE = 16 ** KEY_LENGTH

ORIGIN_TARGET = "target"
ORIGIN_SEPARATOR = "separator"
_ORIGIN_DISTRACTOR_PREFIX = "distractor:"


class MixError(ValueError):
    """Invalid assembly request (bad position, empty inputs, key exhaustion)."""


@dataclass(frozen=True)
class TargetSnippet:
    """The snippet under evaluation: source text plus task metadata.

    ``input_literal``/``output_literal`` carry the call argument and the
    expected result as literal text when the downstream task needs them
    (prediction tasks); retrieval tasks only use the source.
    """

    id: str
    source: str
    input_literal: str | None = None
    output_literal: str | None = None
    kind: str = "external"


@dataclass(frozen=True)
class ContextLine:
    key: str
    text: str
    origin: str  # "target" | "distractor:<id>" | "separator"


@dataclass(frozen=True)
class PositionVector:
    """0/1 occupancy of the target over context slots (lines or tokens)."""

    bits: tuple[int, ...]

    @property
    def n1(self) -> int:
        return sum(self.bits)

    @property
    def n2(self) -> int:
        return len(self.bits) - self.n1


@dataclass(frozen=True)
class AssembledContext:
    lines: tuple[ContextLine, ...]
    target_span: tuple[int, int]
    position_index: int
    positions: int
    n1_tokens: int
    n2_tokens: int
    granularity: Fraction
    concentration: Fraction

    def text(self, *, keyed: bool) -> str:
        if keyed:
            return "\n".join(f"{line.key} {line.text}" for line in self.lines)
        return "\n".join(line.text for line in self.lines)

    def target_lines(self) -> list[ContextLine]:
        first, last = self.target_span
        return list(self.lines[first : last + 1])

    def line_position_vector(self) -> PositionVector:
        return PositionVector(bits=tuple(1 if line.origin == ORIGIN_TARGET else 0 for line in self.lines))

    def token_position_vector(self, estimator: TokenEstimator = estimate_tokens) -> PositionVector:
        """Expand line bits into token slots (one slot per estimated token)."""
        bits: list[int] = []
        for line in self.lines:
            bits.extend([1 if line.origin == ORIGIN_TARGET else 0] * _raw_token_count(line.text, estimator))
        return PositionVector(bits=tuple(bits))


def _raw_token_count(text: str, estimator: TokenEstimator) -> int:
    # per-line expansion must sum to the per-source estimate, so the
    # whitespace-only floor of the public estimator is not applied here
    if not text.strip():
        return 0
    return estimator(text)


def distractor_origin(distractor_id: str) -> str:
    return _ORIGIN_DISTRACTOR_PREFIX + distractor_id


def prefix_count(position_index: int, n_distractors: int, positions: int) -> int:
    """Distractors placed before the target: round(i * N / (P - 1)), half up."""
    if positions < 2:
        raise MixError(f"positions must be >= 2, got {positions}")
    if not 0 <= position_index < positions:
        raise MixError(f"position_index {position_index} outside [0, {positions - 1}]")
    return (2 * position_index * n_distractors + (positions - 1)) // (2 * (positions - 1))


def granularity(n1: int, n2: int) -> Fraction:
    """Relative share of the context that is not the target: n2 / (n1 + n2)."""
    if n1 < 1:
        raise MixError(f"target token count must be >= 1, got {n1}")
    if n2 < 0:
        raise MixError(f"distractor token count must be >= 0, got {n2}")
    return Fraction(n2, n1 + n2)


def concentration(pos: PositionVector) -> Fraction:
    """Contiguity of the target: n1 over its occupied span; 1 iff contiguous."""
    if not pos.bits:
        raise MixError("concentration of an empty position vector")
    set_indices = [i for i, bit in enumerate(pos.bits) if bit]
    if not set_indices:
        raise MixError("concentration undefined: no target slots set")
    span = set_indices[-1] - set_indices[0] + 1
    return Fraction(len(set_indices), span)


def mix(
    target: TargetSnippet,
    distractors: list[DistractorFunction] | tuple[DistractorFunction, ...],
    position_index: int,
    positions: int,
    seed: int,
    *,
    estimator: TokenEstimator = estimate_tokens,
) -> AssembledContext:
    """Assemble distractors and target into one keyed context.

    The supplied distractor order is preserved; the target goes after
    ``prefix_count(position_index, N, positions)`` of them, so position 0
    means before all distractors and position P-1 after all of them. Lines
    are keyed with distinct 6-hex-digit keys drawn from ``seed``.
    """
    if not distractors:
        raise MixError("at least one distractor is required")
    if not target.source:
        raise MixError("target source is empty")
    prefix = prefix_count(position_index, len(distractors), positions)

    units: list[tuple[str, str]] = []  # (origin, source)
    for d in distractors[:prefix]:
        units.append((distractor_origin(d.id), d.source))
    units.append((ORIGIN_TARGET, target.source))
    for d in distractors[prefix:]:
        units.append((distractor_origin(d.id), d.source))

    total_lines = sum(source.count("\n") + 1 for _, source in units) + len(units) - 1
    if total_lines > KEY_SPACE:
        raise MixError(f"context needs {total_lines} keys but only {KEY_SPACE} exist")

    rng = SplitMix64(seed)
    used: set[int] = set()

    def fresh_key() -> str:
        while True:
            value = rng.below(KEY_SPACE)
            if value not in used:
                used.add(value)
                return format(value, "06x")

    lines: list[ContextLine] = []
    target_first = target_last = -1
    for unit_index, (origin, source) in enumerate(units):
        if unit_index > 0:
            lines.append(ContextLine(key=fresh_key(), text="", origin=ORIGIN_SEPARATOR))
        if origin == ORIGIN_TARGET:
            target_first = len(lines)
        for text in source.split("\n"):
            lines.append(ContextLine(key=fresh_key(), text=text, origin=origin))
        if origin == ORIGIN_TARGET:
            target_last = len(lines) - 1

    n1 = estimator(target.source)
    n2 = sum(estimator(source) for origin, source in units if origin != ORIGIN_TARGET)
    context = AssembledContext(
        lines=tuple(lines),
        target_span=(target_first, target_last),
        position_index=position_index,
        positions=positions,
        n1_tokens=n1,
        n2_tokens=n2,
        granularity=granularity(n1, n2),
        concentration=concentration(PositionVector(bits=tuple(
            1 if line.origin == ORIGIN_TARGET else 0 for line in lines
        ))),
    )
    return context


def strip(context: AssembledContext) -> tuple[str, list[tuple[str, str]]]:
    """Recover the original sources: (target source, [(distractor id, source), ...]).

    Keys are dropped and lines are re-grouped by origin; separator lines
    vanish, so every recovered source is byte-identical to its input.
    """
    target_parts: list[str] = []
    distractors: list[tuple[str, list[str]]] = []
    # separators delimit units, so two adjacent copies of one distractor
    # (possible when sampling with replacement) stay distinct
    at_unit_boundary = True
    for line in context.lines:
        if line.origin == ORIGIN_TARGET:
            target_parts.append(line.text)
            at_unit_boundary = False
        elif line.origin == ORIGIN_SEPARATOR:
            at_unit_boundary = True
        elif line.origin.startswith(_ORIGIN_DISTRACTOR_PREFIX):
            d_id = line.origin[len(_ORIGIN_DISTRACTOR_PREFIX):]
            if at_unit_boundary or not distractors or distractors[-1][0] != d_id:
                distractors.append((d_id, [line.text]))
            else:
                distractors[-1][1].append(line.text)
            at_unit_boundary = False
        else:
            raise MixError(f"unknown line origin: {line.origin!r}")
    return "\n".join(target_parts), [(d_id, "\n".join(parts)) for d_id, parts in distractors]


def write_contexts(contexts: Iterable[AssembledContext], path: str | Path) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for context in contexts:
            fh.write(json.dumps(context_to_dict(context)) + "\n")
            count += 1
    return count


def read_contexts(path: str | Path) -> list[AssembledContext]:
    contexts: list[AssembledContext] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                contexts.append(context_from_dict(json.loads(line)))
    return contexts


def context_to_dict(context: AssembledContext) -> dict:
    return {
        "lines": [{"key": l.key, "text": l.text, "origin": l.origin} for l in context.lines],
        "target_span": list(context.target_span),
        "position_index": context.position_index,
        "positions": context.positions,
        "n1_tokens": context.n1_tokens,
        "n2_tokens": context.n2_tokens,
        "granularity": float(context.granularity),
        "granularity_exact": f"{context.granularity.numerator}/{context.granularity.denominator}",
        "concentration": float(context.concentration),
        "concentration_exact": f"{context.concentration.numerator}/{context.concentration.denominator}",
    }


def _parse_fraction(text: str) -> Fraction:
    num, den = text.split("/")
    return Fraction(int(num), int(den))


def context_from_dict(record: dict) -> AssembledContext:
    lines = tuple(ContextLine(key=l["key"], text=l["text"], origin=l["origin"]) for l in record["lines"])
    return AssembledContext(
        lines=lines,
        target_span=(record["target_span"][0], record["target_span"][1]),
        position_index=record["position_index"],
        positions=record["positions"],
        n1_tokens=record["n1_tokens"],
        n2_tokens=record["n2_tokens"],
        granularity=_parse_fraction(record["granularity_exact"]),
        concentration=_parse_fraction(record["concentration_exact"]),
    )

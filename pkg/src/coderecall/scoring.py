"""Grading: answer extraction, literal parsing, exact/partial/retrieval scores.

Prediction answers are parsed under a restricted literal grammar (ints,
floats, strings, booleans, None, lists, tuples, arbitrary nesting) extended
with +/- arithmetic over integers. Arithmetic is evaluated rather than
penalized: an answer left as ``81 - 43`` counts as 38 but is flagged
unresolved. Retrieval answers are compared byte-wise after a small, stated
normalization (echoed hex keys stripped, per-line trailing whitespace and
blank edge lines dropped).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

TASK_SEMTRACE_OUT = "semtrace_out"
TASK_CRUXEVAL_OUT = "cruxeval_out"
TASK_CRUXEVAL_IN = "cruxeval_in"
TASK_RETRIEVE_FUNCTION = "retrieve_function"
TASK_RETRIEVE_LINE = "retrieve_line"

PREDICTION_TASKS = (TASK_SEMTRACE_OUT, TASK_CRUXEVAL_OUT, TASK_CRUXEVAL_IN)
RETRIEVAL_TASKS = (TASK_RETRIEVE_FUNCTION, TASK_RETRIEVE_LINE)

FAILURE_PARSE = "parse_error"
FAILURE_LENGTH = "length_mismatch"
FAILURE_WRONG = "wrong_value"

_KEYED_LINE_RE = re.compile(r"^[0-9a-f]{6} ")


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class ParsedLiteral:
    """A parsed value plus whether any compound arithmetic was evaluated."""

    value: object
    resolved: bool
    end: int  # index one past the consumed text


_ESCAPES = {
    "\\": "\\", "'": "'", '"': '"', "n": "\n", "r": "\r", "t": "\t",
    "b": "\b", "f": "\f", "v": "\v", "0": "\0", "a": "\a",
}

_NAMES = {"True": True, "False": False, "None": None}


class _Parser:
    """Recursive-descent parser over the literal-plus-arithmetic grammar."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.resolved = False

    # -- lexing helpers -----------------------------------------------------

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def peek_in(self, chars: str) -> bool:
        # membership test that is False at end of input ("" in s is True)
        ch = self.peek()
        return bool(ch) and ch in chars

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            raise ParseError(f"expected {ch!r}", self.pos)
        self.pos += 1

    # -- grammar ------------------------------------------------------------

    def parse_expr(self):
        value = self.parse_term()
        while True:
            mark = self.pos
            self.skip_ws()
            op = self.peek()
            if not op or op not in "+-":
                self.pos = mark
                return value
            if not _is_plain_int(value):
                # arithmetic is defined over integers only; leave the
                # operator for the caller (prefix mode stops here)
                self.pos = mark
                return value
            self.pos += 1
            try:
                right = self.parse_term()
            except ParseError:
                self.pos = mark
                return value
            if not _is_plain_int(right):
                self.pos = mark
                return value
            value = value + right if op == "+" else value - right
            self.resolved = True

    def parse_term(self):
        self.skip_ws()
        signs = 0
        negatives = 0
        while self.peek_in("+-"):
            if self.peek() == "-":
                negatives += 1
            signs += 1
            self.pos += 1
            self.skip_ws()
        value = self.parse_atom()
        if signs == 0:
            return value
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ParseError("sign applied to a non-numeric literal", self.pos)
        if signs > 1:
            self.resolved = True  # stacked signs are not a bare negative literal
        return -value if negatives % 2 else value

    def parse_atom(self):
        self.skip_ws()
        ch = self.peek()
        if not ch:
            raise ParseError("unexpected end of input", self.pos)
        if ch.isdigit() or (ch == "." and self._digit_follows()):
            return self.parse_number()
        if ch in "'\"":
            return self.parse_string()
        if ch == "[":
            return self.parse_list()
        if ch == "(":
            return self.parse_paren()
        if ch.isalpha():
            return self.parse_name()
        raise ParseError(f"unexpected character {ch!r}", self.pos)

    def _digit_follows(self) -> bool:
        return self.pos + 1 < len(self.text) and self.text[self.pos + 1].isdigit()

    def parse_number(self):
        start = self.pos
        while self.peek().isdigit():
            self.pos += 1
        is_float = False
        if self.peek() == ".":
            is_float = True
            self.pos += 1
            while self.peek().isdigit():
                self.pos += 1
        if self.peek_in("eE"):
            mark = self.pos
            self.pos += 1
            if self.peek_in("+-"):
                self.pos += 1
            if self.peek().isdigit():
                is_float = True
                while self.peek().isdigit():
                    self.pos += 1
            else:
                self.pos = mark
        raw = self.text[start:self.pos]
        if not raw or raw == ".":
            raise ParseError("malformed number", start)
        return float(raw) if is_float else int(raw)

    def parse_string(self) -> str:
        quote = self.peek()
        self.pos += 1
        out: list[str] = []
        while True:
            if self.pos >= len(self.text):
                raise ParseError("unterminated string", self.pos)
            ch = self.text[self.pos]
            if ch == quote:
                self.pos += 1
                return "".join(out)
            if ch == "\n":
                raise ParseError("newline inside string", self.pos)
            if ch == "\\":
                self.pos += 1
                if self.pos >= len(self.text):
                    raise ParseError("dangling escape", self.pos)
                esc = self.text[self.pos]
                if esc in _ESCAPES:
                    out.append(_ESCAPES[esc])
                    self.pos += 1
                elif esc == "x":
                    out.append(chr(self._hex_escape(2)))
                elif esc == "u":
                    out.append(chr(self._hex_escape(4)))
                elif esc == "U":
                    out.append(chr(self._hex_escape(8)))
                else:
                    # unknown escape: keep the backslash, like the benchmark
                    # language does for e.g. "\d"
                    out.append("\\" + esc)
                    self.pos += 1
            else:
                out.append(ch)
                self.pos += 1

    def _hex_escape(self, width: int) -> int:
        digits = self.text[self.pos + 1 : self.pos + 1 + width]
        if len(digits) != width or any(d not in "0123456789abcdefABCDEF" for d in digits):
            raise ParseError(f"malformed \\{self.text[self.pos]} escape", self.pos)
        value = int(digits, 16)
        if value > 0x10FFFF:
            raise ParseError("escape beyond the Unicode range", self.pos)
        self.pos += 1 + width
        return value

    def parse_list(self) -> list:
        self.expect("[")
        items: list = []
        self.skip_ws()
        if self.peek() == "]":
            self.pos += 1
            return items
        while True:
            items.append(self.parse_expr())
            self.skip_ws()
            if self.peek() == ",":
                self.pos += 1
                self.skip_ws()
                if self.peek() == "]":  # trailing comma
                    self.pos += 1
                    return items
            elif self.peek() == "]":
                self.pos += 1
                return items
            else:
                raise ParseError("expected ',' or ']'", self.pos)

    def parse_paren(self):
        self.expect("(")
        self.skip_ws()
        if self.peek() == ")":
            self.pos += 1
            return ()
        first = self.parse_expr()
        self.skip_ws()
        if self.peek() == ")":
            self.pos += 1
            return first  # grouping, not a 1-tuple
        items = [first]
        while True:
            if self.peek() != ",":
                raise ParseError("expected ',' or ')'", self.pos)
            self.pos += 1
            self.skip_ws()
            if self.peek() == ")":
                self.pos += 1
                return tuple(items)
            items.append(self.parse_expr())
            self.skip_ws()
            if self.peek() == ")":
                self.pos += 1
                return tuple(items)

    def parse_name(self):
        start = self.pos
        while self.peek().isalnum() or self.peek() == "_":
            self.pos += 1
        name = self.text[start:self.pos]
        if name not in _NAMES:
            raise ParseError(f"unknown name {name!r}", start)
        return _NAMES[name]


def _is_plain_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def parse_literal(text: str) -> ParsedLiteral:
    """Parse a complete literal (plus integer arithmetic); trailing text fails."""
    result = parse_literal_prefix(text)
    rest = text[result.end:]
    if rest.strip():
        raise ParseError("trailing content after literal", result.end)
    return result


def parse_literal_prefix(text: str) -> ParsedLiteral:
    """Parse the first complete literal/expression; report where it ended."""
    parser = _Parser(text)
    parser.skip_ws()
    if parser.pos >= len(text):
        raise ParseError("empty input", 0)
    value = parser.parse_expr()
    return ParsedLiteral(value=value, resolved=parser.resolved, end=parser.pos)


def canonical_text(value) -> str:
    """Unique text form per value (interpreter repr)."""
    return repr(value)


def values_equal(a, b) -> bool:
    """Type-strict structural equality: booleans never equal ints, lists never tuples."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if a is None or b is None:
        return a is None and b is None
    if _is_plain_int(a) and _is_plain_int(b):
        return a == b
    if isinstance(a, float) and isinstance(b, float):
        return repr(a) == repr(b)
    if isinstance(a, str) and isinstance(b, str):
        return a == b
    if (isinstance(a, list) and isinstance(b, list)) or (isinstance(a, tuple) and isinstance(b, tuple)):
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    return False


@dataclass(frozen=True)
class Score:
    exact: bool
    partial: Fraction | None
    unresolved: bool
    parsed_answer: str | None
    failure_kind: str | None
    deferred: bool = False

    def to_dict(self) -> dict:
        return {
            "exact": self.exact,
            "partial": None if self.partial is None else float(self.partial),
            "partial_exact": None if self.partial is None else f"{self.partial.numerator}/{self.partial.denominator}",
            "unresolved": self.unresolved,
            "parsed_answer": self.parsed_answer,
            "failure_kind": self.failure_kind,
            "deferred": self.deferred,
        }


def score_from_dict(record: dict) -> Score:
    partial = record.get("partial_exact")
    return Score(
        exact=record["exact"],
        partial=None if partial is None else Fraction(*[int(p) for p in partial.split("/")]),
        unresolved=record["unresolved"],
        parsed_answer=record.get("parsed_answer"),
        failure_kind=record.get("failure_kind"),
        deferred=record.get("deferred", False),
    )


# -- answer extraction ------------------------------------------------------


def _strip_opening_fence(text: str) -> str:
    stripped = text.lstrip()
    if stripped.startswith("```"):
        newline = stripped.find("\n")
        return "" if newline < 0 else stripped[newline + 1:]
    return text


def _cut_at_closing_fence(text: str) -> str:
    lines = text.split("\n")
    kept: list[str] = []
    for line in lines:
        if line.strip().startswith("```"):
            break
        kept.append(line)
    return "\n".join(kept)


def extract_answer(completion: str, task_type: str) -> str:
    """Pull the answer out of a completion that continued the prefill.

    Retrieval: the fenced code content, fences removed, inner bytes intact.
    Prediction: the first complete literal/expression, with fences,
    assertion echoes, and trailing prose stripped. An empty extraction is a
    legitimate result (scored as a failure downstream).
    """
    if task_type in RETRIEVAL_TASKS:
        return _cut_at_closing_fence(_strip_opening_fence(completion))

    text = _strip_opening_fence(completion)
    stripped = text.lstrip()
    if stripped.startswith("assert") and "==" in stripped:
        text = stripped.split("==", 1)[1]
        if task_type == TASK_CRUXEVAL_IN:
            # restart of the assertion form "assert <out> == f(<input>)"
            opener = text.find("f(")
            if opener >= 0:
                text = text[opener + 2:]
    try:
        parsed = parse_literal_prefix(text)
    except ParseError:
        first_line = _cut_at_closing_fence(text).lstrip().split("\n", 1)[0]
        return first_line.strip()
    start = 0
    while start < parsed.end and text[start].isspace():
        start += 1
    return text[start:parsed.end]


# -- prediction scoring -----------------------------------------------------


def _parse_failure(task_type: str) -> Score:
    partial = Fraction(0) if task_type == TASK_SEMTRACE_OUT else None
    return Score(exact=False, partial=partial, unresolved=False, parsed_answer=None, failure_kind=FAILURE_PARSE)


def score_prediction(answer: str, gold, task_type: str) -> Score:
    """Value-level exact match plus positionwise partial credit for lists.

    ``gold`` is an already-parsed value. Arithmetic in the answer resolves
    without penalty but sets the unresolved flag. Partial credit compares
    positions up to the shorter length with the gold length as denominator.
    """
    try:
        parsed = parse_literal(answer)
    except ParseError:
        return _parse_failure(task_type)
    exact = values_equal(parsed.value, gold)
    partial: Fraction | None = None
    failure: str | None = None
    if isinstance(gold, list):
        if isinstance(parsed.value, list):
            matches = sum(
                1 for mine, theirs in zip(parsed.value, gold) if values_equal(mine, theirs)
            )
            partial = Fraction(matches, len(gold)) if gold else Fraction(1)
        else:
            partial = Fraction(0)
        if not exact:
            if isinstance(parsed.value, list) and len(parsed.value) != len(gold):
                failure = FAILURE_LENGTH
            else:
                failure = FAILURE_WRONG
    elif not exact:
        failure = FAILURE_WRONG
    return Score(
        exact=exact,
        partial=partial,
        unresolved=parsed.resolved,
        parsed_answer=canonical_text(parsed.value),
        failure_kind=failure,
    )


# -- retrieval scoring ------------------------------------------------------


def _normalize_retrieval(text: str) -> str:
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and not lines[0]:
        lines = lines[1:]
    while lines and not lines[-1]:
        lines = lines[:-1]
    non_blank = [line for line in lines if line]
    if non_blank and all(_KEYED_LINE_RE.match(line) for line in non_blank):
        # the model echoed the per-line keys; compare the code itself
        lines = [line[7:] if _KEYED_LINE_RE.match(line) else line for line in lines]
        lines = [line.rstrip() for line in lines]
    return "\n".join(lines)


def score_retrieval(answer: str, gold: str, granularity: str = "function") -> Score:
    """Byte equality after the stated normalization; no partial credit."""
    exact = _normalize_retrieval(answer) == _normalize_retrieval(gold)
    return Score(
        exact=exact,
        partial=None,
        unresolved=False,
        parsed_answer=None,
        failure_kind=None if exact else FAILURE_WRONG,
    )


# -- input prediction (graded by execution) ----------------------------------


def score_input_prediction(answer: str, instance, executor, *, timeout_ms: int = 5000) -> Score:
    """Run the target on the candidate input; exact iff the output matches.

    The prompt explicitly allows any input that produces the stated output,
    so grading is by execution rather than string match. With no executor
    available the score is deferred and flagged.
    """
    try:
        parsed = parse_literal(answer)
    except ParseError:
        return _parse_failure(instance.task_type)
    if executor is None:
        return Score(
            exact=False,
            partial=None,
            unresolved=parsed.resolved,
            parsed_answer=canonical_text(parsed.value),
            failure_kind=None,
            deferred=True,
        )
    expected = parse_literal(instance.query_params["output"]).value
    response = executor.execute(instance.target_source, canonical_text(parsed.value), timeout_ms=timeout_ms)
    if response.status != "ok":
        # an executor that cannot judge this source at all defers the grade;
        # an execution failure on a judgeable source is a wrong answer
        declined = getattr(response, "error_kind", None) == "OutsideGrammar"
        return Score(
            exact=False,
            partial=None,
            unresolved=parsed.resolved,
            parsed_answer=canonical_text(parsed.value),
            failure_kind=None if declined else FAILURE_WRONG,
            deferred=declined,
        )
    try:
        produced = parse_literal(response.value_literal).value
    except ParseError:
        return Score(
            exact=False,
            partial=None,
            unresolved=parsed.resolved,
            parsed_answer=canonical_text(parsed.value),
            failure_kind=FAILURE_WRONG,
        )
    exact = values_equal(produced, expected)
    return Score(
        exact=exact,
        partial=None,
        unresolved=parsed.resolved,
        parsed_answer=canonical_text(parsed.value),
        failure_kind=None if exact else FAILURE_WRONG,
    )

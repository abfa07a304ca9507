"""Answer extraction, normalization, and equivalence judging.

Free-form answers are folded into one of four canonical kinds:

* Rational — an exact fraction; every finite decimal / fraction / percent
  string lands here and is compared with exact integer arithmetic.
* Decimal  — an explicitly float-valued answer (constructed from a float,
  never from a string); compared under absolute/relative tolerance.
* Choice   — a single option letter A-E.
* Text     — everything else, casefolded with whitespace collapsed.

Keeping string-derived numerics exact means "0.5" and "1/2" agree while
"0.49999" and "1/2" do not — there is no silent tolerance on values the
model actually wrote down.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum
from fractions import Fraction

from .problems import AnswerForm


class AnswerKind(Enum):
    RATIONAL = "rational"
    DECIMAL = "decimal"
    CHOICE = "choice"
    TEXT = "text"


@dataclass(frozen=True, slots=True)
class CanonicalAnswer:
    kind: AnswerKind
    rational: Fraction | None = None
    decimal: float | None = None
    text: str | None = None

    @staticmethod
    def from_rational(value: Fraction) -> "CanonicalAnswer":
        return CanonicalAnswer(AnswerKind.RATIONAL, rational=value)

    @staticmethod
    def from_float(value: float) -> "CanonicalAnswer":
        """Float-valued answer; judged with tolerance rather than exactly."""
        return CanonicalAnswer(AnswerKind.DECIMAL, decimal=value)

    @staticmethod
    def from_choice(letter: str) -> "CanonicalAnswer":
        return CanonicalAnswer(AnswerKind.CHOICE, text=letter.upper())

    @staticmethod
    def from_text(text: str) -> "CanonicalAnswer":
        return CanonicalAnswer(AnswerKind.TEXT, text=text)

    def is_numeric(self) -> bool:
        return self.kind in (AnswerKind.RATIONAL, AnswerKind.DECIMAL)


class JudgeMethod(Enum):
    EXACT_RATIONAL = "ExactRational"
    DECIMAL_TOLERANCE = "DecimalTolerance"
    CHOICE_MATCH = "ChoiceMatch"
    TEXT_MATCH = "TextMatch"


@dataclass(frozen=True, slots=True)
class Judgement:
    equivalent: bool
    method: JudgeMethod
    detail: str = ""


@dataclass(frozen=True, slots=True)
class Tolerances:
    # Loose enough to accept float-printed program output (when a side is
    # explicitly float-valued) while keeping adjacent integers apart.
    abs_tol: float = 1e-6
    rel_tol: float = 1e-4


DEFAULT_UNIT_WORDS: tuple[str, ...] = (
    "dollars",
    "dollar",
    "cents",
    "pounds",
    "units",
    "unit",
    "degrees",
    "meters",
    "meter",
    "feet",
    "foot",
    "inches",
    "miles",
    "mph",
    "km",
    "cm",
    "mm",
    "kg",
    "grams",
    "liters",
    "hours",
    "hour",
    "minutes",
    "minute",
    "seconds",
    "days",
    "weeks",
    "months",
    "years",
    "points",
    "ways",
    "times",
)

_CUE_RE = re.compile(r"(?:final\s+)?answer(?:\s+is|\s*:)", re.IGNORECASE)
_LETTER_RE = re.compile(r"\(\s*([A-Ea-e])\s*\)|\b([A-E])\b")
_NUMBER_TOKEN_RE = re.compile(
    r"[+-]?\d+\s*/\s*\d+"  # fraction
    r"|[+-]?(?:\d[\d,]*(?:\.\d+)?|\.\d+)(?:[eE][+-]?\d+)?%?"  # number, maybe percent
)
_FRACTION_RE = re.compile(r"([+-]?\d+)\s*/\s*([+-]?\d+)")
_LATEX_FRAC_RE = re.compile(r"([+-]?)\\[dt]?frac\{\s*([+-]?\d+)\s*\}\{\s*([+-]?\d+)\s*\}")
_NUMERIC_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_THOUSANDS_RE = re.compile(r"[+-]?\d{1,3}(?:,\d{3})+(?:\.\d+)?")
_SINGLE_LETTER_RE = re.compile(r"\(?\s*([A-Ea-e])\s*\)?")


def _last_letter(text: str) -> str | None:
    found = None
    for m in _LETTER_RE.finditer(text):
        found = (m.group(1) or m.group(2)).upper()
    return found


def _last_number_token(text: str) -> str | None:
    found = None
    for m in _NUMBER_TOKEN_RE.finditer(text):
        found = m.group(0)
    return found


def extract_cot_answer(text: str, answer_form: AnswerForm) -> str | None:
    """Pull the final answer span out of a chain-of-thought completion.

    Returns None when nothing answer-like can be located; the caller scores
    that as incorrect rather than guessing.
    """
    last_cue = None
    for m in _CUE_RE.finditer(text):
        last_cue = m
    span = text[last_cue.end():] if last_cue is not None else ""

    if answer_form is AnswerForm.MULTI_CHOICE:
        letter = _last_letter(span)
        if letter is None:
            letter = _last_letter(text)
        return letter

    candidate = span.strip().splitlines()[0].strip() if span.strip() else ""
    candidate = candidate.lstrip(":").strip().rstrip(".").strip()
    if candidate:
        return candidate
    return _last_number_token(text)


def _strip_math_delimiters(s: str) -> str:
    pairs = (("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]"))
    changed = True
    while changed:
        changed = False
        s = s.strip()
        for left, right in pairs:
            if s.startswith(left) and s.endswith(right) and len(s) > len(left) + len(right):
                s = s[len(left):-len(right)]
                changed = True
                break
    return s.strip()


def _strip_units(s: str, unit_words: tuple[str, ...]) -> str:
    words = s.split()
    lowered = {w.lower() for w in unit_words}
    while len(words) > 1 and words[-1].lower().strip(".,") in lowered:
        words.pop()
    return " ".join(words)


def normalize(raw: str, unit_words: tuple[str, ...] = DEFAULT_UNIT_WORDS) -> CanonicalAnswer:
    """Fold a raw answer string into its canonical form.

    Idempotent through rendering: normalize(render(normalize(x))) == normalize(x).
    """
    s = raw.strip()
    s = s.replace("\\%", "%").replace("\\$", "$")
    s = _strip_math_delimiters(s)
    s = s.rstrip(".").strip()
    for symbol in "$£€¥":
        s = s.replace(symbol, "")
    s = s.strip()

    percent = False
    if s.endswith("%"):
        percent = True
        s = s[:-1].strip()

    s = _strip_units(s, unit_words)
    if _THOUSANDS_RE.fullmatch(s):
        s = s.replace(",", "")

    value = _parse_exact(s)
    if value is not None:
        if percent:
            value = value / 100
        return CanonicalAnswer.from_rational(value)

    m = _SINGLE_LETTER_RE.fullmatch(s)
    if m:
        return CanonicalAnswer.from_choice(m.group(1))

    return CanonicalAnswer.from_text(" ".join(s.split()).casefold())


def _parse_exact(s: str) -> Fraction | None:
    m = _FRACTION_RE.fullmatch(s)
    if m:
        denom = int(m.group(2))
        if denom == 0:
            return None
        return Fraction(int(m.group(1)), denom)
    m = _LATEX_FRAC_RE.fullmatch(s)
    if m:
        denom = int(m.group(3))
        if denom == 0:
            return None
        value = Fraction(int(m.group(2)), denom)
        return -value if m.group(1) == "-" else value
    if _NUMERIC_RE.fullmatch(s):
        try:
            dec = Decimal(s)
        except (InvalidOperation, ValueError):
            return None
        if abs(dec.adjusted()) > 100:  # keep absurd exponents out of exact arithmetic
            return None
        return Fraction(dec)
    return None


def render_answer(answer: CanonicalAnswer) -> str:
    """Canonical string form; normalizing it again reproduces the answer."""
    if answer.kind is AnswerKind.RATIONAL:
        frac = answer.rational
        return str(frac.numerator) if frac.denominator == 1 else f"{frac.numerator}/{frac.denominator}"
    if answer.kind is AnswerKind.DECIMAL:
        return repr(answer.decimal)
    return answer.text or ""


def _tolerance_equal(a: Fraction, b: Fraction, tol: Tolerances) -> bool:
    # Symmetric in a and b so the judge itself stays symmetric.
    bound = max(Fraction(tol.abs_tol), Fraction(tol.rel_tol) * max(abs(a), abs(b)))
    return abs(a - b) <= bound


def _as_fraction(answer: CanonicalAnswer) -> Fraction:
    if answer.kind is AnswerKind.RATIONAL:
        return answer.rational
    return Fraction(answer.decimal)


def judge(a: CanonicalAnswer, b: CanonicalAnswer, tol: Tolerances = Tolerances()) -> Judgement:
    """Decide whether two canonical answers agree.

    Rational pairs are compared exactly; any numeric pair involving a Decimal
    is compared under tolerance; kind mismatches against Text get one reparse
    of the Text side before failing.
    """
    if a.kind is AnswerKind.RATIONAL and b.kind is AnswerKind.RATIONAL:
        equal = a.rational == b.rational
        return Judgement(equal, JudgeMethod.EXACT_RATIONAL, f"{render_answer(a)} vs {render_answer(b)}")

    if a.is_numeric() and b.is_numeric():
        equal = _tolerance_equal(_as_fraction(a), _as_fraction(b), tol)
        return Judgement(equal, JudgeMethod.DECIMAL_TOLERANCE, f"{render_answer(a)} vs {render_answer(b)}")

    if a.kind is AnswerKind.CHOICE and b.kind is AnswerKind.CHOICE:
        return Judgement(a.text == b.text, JudgeMethod.CHOICE_MATCH, f"{a.text} vs {b.text}")

    if a.kind is AnswerKind.TEXT and b.kind is AnswerKind.TEXT:
        return Judgement(a.text == b.text, JudgeMethod.TEXT_MATCH, f"{a.text!r} vs {b.text!r}")

    # Kind mismatch: reparse whichever side is Text, in case it holds an
    # unnormalized numeric or letter, then retry once.
    if a.kind is AnswerKind.TEXT:
        reparsed = normalize(a.text or "")
        if reparsed.kind is not AnswerKind.TEXT:
            return judge(reparsed, b, tol)
    elif b.kind is AnswerKind.TEXT:
        reparsed = normalize(b.text or "")
        if reparsed.kind is not AnswerKind.TEXT:
            return judge(a, reparsed, tol)

    method = (
        JudgeMethod.CHOICE_MATCH
        if AnswerKind.CHOICE in (a.kind, b.kind)
        else JudgeMethod.TEXT_MATCH
    )
    return Judgement(False, method, f"kind mismatch: {a.kind.value} vs {b.kind.value}")


def remap_choice_verbose(
    generated: str,
    choices: tuple[tuple[str, str], ...],
    client,
    tag: str = "remap",
    max_new_tokens: int | None = None,
    temperature: float | None = None,
    stop: tuple[str, ...] = (),
) -> tuple[str | None, str]:
    """remap_choice, but also returns the raw model reply for trace logs."""
    from .generation import DEFAULT_MAX_NEW_TOKENS, DEFAULT_TEMPERATURE, GenRequest
    from .prompts import render_remap

    prompt = render_remap(generated, choices)
    response = client.generate(
        GenRequest(
            prompt=prompt,
            max_new_tokens=DEFAULT_MAX_NEW_TOKENS if max_new_tokens is None else max_new_tokens,
            temperature=DEFAULT_TEMPERATURE if temperature is None else temperature,
            stop=stop,
            tag=tag,
        )
    )
    letter = _last_letter(response.text)
    valid = {label for label, _ in choices}
    if letter is None or letter not in valid:
        return None, response.text
    return letter, response.text


def remap_choice(
    generated: str,
    choices: tuple[tuple[str, str], ...],
    client,
    tag: str = "remap",
    max_new_tokens: int | None = None,
    temperature: float | None = None,
    stop: tuple[str, ...] = (),
) -> str | None:
    """Ask the model to map a free-form answer onto the option letters.

    Meant for answers with no extractable letter (callers skip the round trip
    otherwise). Returns the letter, or None when the reply still names none.
    """
    letter, _ = remap_choice_verbose(
        generated, choices, client, tag, max_new_tokens, temperature, stop
    )
    return letter


def judge_prediction(
    predicted_raw: str | None,
    gold: str,
    tol: Tolerances = Tolerances(),
    unit_words: tuple[str, ...] = DEFAULT_UNIT_WORDS,
) -> Judgement:
    """Normalize both sides and judge; a missing prediction is never equivalent."""
    if predicted_raw is None:
        return Judgement(False, JudgeMethod.TEXT_MATCH, "no answer extracted")
    return judge(normalize(predicted_raw, unit_words), normalize(gold, unit_words), tol)


__all__ = [
    "AnswerKind",
    "CanonicalAnswer",
    "JudgeMethod",
    "Judgement",
    "Tolerances",
    "DEFAULT_UNIT_WORDS",
    "extract_cot_answer",
    "normalize",
    "render_answer",
    "judge",
    "judge_prediction",
    "remap_choice",
]

"""Evaluation problems: the dataset registry and the JSONL loader.

A problem is a question with a gold answer, optionally multiple-choice.
The registry pins the nine benchmark datasets this harness evaluates,
split into an in-domain group and an out-of-domain group, with their
expected test-set sizes so a short or padded file is caught at load time.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable

from . import jsonl
from .errors import IntegrityError, ParseError

CHOICE_LABELS = ("A", "B", "C", "D", "E")

FIELD_TAGS = frozenset(
    {
        "pre-algebra",
        "inter-algebra",
        "algebra",
        "probability",
        "numtheory",
        "calculus",
        "geometry",
    }
)


class AnswerForm(Enum):
    OPEN_FORMED = "open-formed"
    MULTI_CHOICE = "multi-choice"


@dataclass(frozen=True, slots=True)
class Problem:
    id: str  # dataset-qualified, e.g. "gsm8k/0007"
    dataset: str
    question: str
    gold: str
    answer_form: AnswerForm
    choices: tuple[tuple[str, str], ...] = ()  # ordered (label, text) pairs
    fields: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ParseError(f"{self.id}: question is empty")
        if not self.gold.strip():
            raise ParseError(f"{self.id}: gold answer is empty")
        if self.answer_form is AnswerForm.MULTI_CHOICE:
            if not self.choices:
                raise ParseError(f"{self.id}: multi-choice problem has no choices")
            labels = [lab for lab, _ in self.choices]
            if labels != list(CHOICE_LABELS[: len(labels)]):
                raise ParseError(f"{self.id}: choice labels must be A..E in order, got {labels}")
            if self.gold not in labels:
                raise ParseError(f"{self.id}: gold {self.gold!r} is not one of the choice labels {labels}")
        elif self.choices:
            raise ParseError(f"{self.id}: open-formed problem must not carry choices")
        unknown = self.fields - FIELD_TAGS
        if unknown:
            raise ParseError(f"{self.id}: unknown field tags {sorted(unknown)}")


@dataclass(frozen=True, slots=True)
class DatasetMeta:
    dataset: str
    display_name: str
    in_domain: bool
    expected_count: int
    answer_form: AnswerForm
    fields: frozenset[str]
    default_shots: int  # 0, 5, or 8


_REGISTRY: tuple[DatasetMeta, ...] = (
    DatasetMeta("gsm8k", "GSM8K", True, 1319, AnswerForm.OPEN_FORMED, frozenset({"pre-algebra"}), 8),
    DatasetMeta(
        "math",
        "MATH",
        True,
        5000,
        AnswerForm.OPEN_FORMED,
        FIELD_TAGS,
        8,
    ),
    DatasetMeta("aqua", "AQuA", True, 254, AnswerForm.MULTI_CHOICE, frozenset({"inter-algebra"}), 8),
    DatasetMeta("numglue", "NumGLUE", True, 1042, AnswerForm.OPEN_FORMED, frozenset({"pre-algebra"}), 8),
    DatasetMeta("svamp", "SVAMP", False, 1000, AnswerForm.OPEN_FORMED, frozenset({"pre-algebra"}), 5),
    DatasetMeta(
        "mathematics",
        "Mathematics",
        False,
        1000,
        AnswerForm.OPEN_FORMED,
        frozenset({"pre-algebra", "inter-algebra", "numtheory", "calculus"}),
        5,
    ),
    DatasetMeta("simuleq", "SimulEq", False, 514, AnswerForm.OPEN_FORMED, frozenset({"inter-algebra"}), 5),
    DatasetMeta(
        "sat-math",
        "SAT-Math",
        False,
        220,
        AnswerForm.MULTI_CHOICE,
        frozenset({"inter-algebra", "probability", "geometry"}),
        5,
    ),
    DatasetMeta(
        "mmlu-math",
        "MMLU-Math",
        False,
        974,
        AnswerForm.MULTI_CHOICE,
        frozenset({"algebra", "calculus", "probability", "numtheory"}),
        5,
    ),
)


def registry() -> tuple[DatasetMeta, ...]:
    """All nine benchmark datasets, in-domain first, in report order."""
    return _REGISTRY


def dataset_meta(dataset: str) -> DatasetMeta:
    for meta in _REGISTRY:
        if meta.dataset == dataset:
            return meta
    raise IntegrityError(f"unknown dataset {dataset!r}; known: {[m.dataset for m in _REGISTRY]}")


def registry_with_overrides(counts: dict[str, int]) -> tuple[DatasetMeta, ...]:
    """Registry with expected counts replaced for the named datasets (test subsets)."""
    for name in counts:
        dataset_meta(name)
    return tuple(
        replace(meta, expected_count=counts[meta.dataset]) if meta.dataset in counts else meta
        for meta in _REGISTRY
    )


@dataclass(slots=True)
class LoadResult:
    problems: list[Problem]
    count: int
    warnings: list[str] = field(default_factory=list)


def _parse_record(meta: DatasetMeta, obj: object, where: str) -> Problem:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: record must be a JSON object, got {type(obj).__name__}")
    known = {"id", "question", "gold", "choices", "fields"}
    extra = set(obj) - known
    if extra:
        raise ParseError(f"{where}: unknown keys {sorted(extra)}")
    try:
        raw_id = obj["id"]
        question = obj["question"]
        gold = obj["gold"]
    except KeyError as exc:
        raise ParseError(f"{where}: missing required key {exc.args[0]!r}") from None
    if not isinstance(raw_id, str) or not isinstance(question, str) or not isinstance(gold, str):
        raise ParseError(f"{where}: id, question and gold must all be strings")
    qualified = raw_id if raw_id.startswith(meta.dataset + "/") else f"{meta.dataset}/{raw_id}"

    raw_choices = obj.get("choices")
    choices: tuple[tuple[str, str], ...] = ()
    if raw_choices:
        if not isinstance(raw_choices, list) or not all(isinstance(c, str) for c in raw_choices):
            raise ParseError(f"{where}: choices must be an array of strings")
        if len(raw_choices) > len(CHOICE_LABELS):
            raise ParseError(f"{where}: at most {len(CHOICE_LABELS)} choices supported, got {len(raw_choices)}")
        choices = tuple(zip(CHOICE_LABELS, raw_choices))
    form = AnswerForm.MULTI_CHOICE if choices else AnswerForm.OPEN_FORMED

    raw_fields = obj.get("fields", [])
    if not isinstance(raw_fields, list) or not all(isinstance(f, str) for f in raw_fields):
        raise ParseError(f"{where}: fields must be an array of strings")

    try:
        return Problem(
            id=qualified,
            dataset=meta.dataset,
            question=question,
            gold=gold.strip() if gold.strip() else gold,
            answer_form=form,
            choices=choices,
            fields=frozenset(raw_fields),
        )
    except ParseError as exc:
        raise ParseError(f"{where}: {exc}") from None


def load_dataset(path: str, meta: DatasetMeta) -> LoadResult:
    """Parse one dataset file; every record must be valid, duplicates are fatal.

    A count that disagrees with the registry is only a warning so that small
    fixture subsets stay usable, but it is never silently ignored.
    """
    problems: list[Problem] = []
    seen: set[str] = set()
    for lineno, obj in jsonl.read_jsonl(path):
        problem = _parse_record(meta, obj, f"{path}:{lineno}")
        if problem.id in seen:
            raise IntegrityError(f"{path}:{lineno}: duplicate problem id {problem.id!r}")
        seen.add(problem.id)
        problems.append(problem)

    result = LoadResult(problems=problems, count=len(problems))
    if len(problems) != meta.expected_count:
        result.warnings.append(
            f"{meta.dataset}: loaded {len(problems)} problems but the registry expects {meta.expected_count}"
        )
    mismatched = sum(1 for p in problems if p.answer_form is not meta.answer_form)
    if mismatched:
        result.warnings.append(
            f"{meta.dataset}: {mismatched} problems do not have the registered answer form {meta.answer_form.value}"
        )
    return result


def problem_to_obj(problem: Problem) -> dict:
    obj: dict = {"id": problem.id, "question": problem.question, "gold": problem.gold}
    if problem.choices:
        obj["choices"] = [text for _, text in problem.choices]
    if problem.fields:
        obj["fields"] = sorted(problem.fields)
    return obj


def save_dataset(path: str, problems: Iterable[Problem]) -> int:
    """Inverse of load_dataset: reloading the file yields equal problems."""
    return jsonl.write_jsonl(path, (problem_to_obj(p) for p in problems))


def make_problem_id(dataset: str, index: int) -> str:
    return f"{dataset}/{index:04d}"


def choice_label_set() -> str:
    return string.ascii_uppercase[: len(CHOICE_LABELS)]

"""Prompt construction for program-style and chain-of-thought decoding.

Two template families cover every run: a zero-shot instruction layout and a
few-shot question/answer layout fed from editable exemplar fixture files.
Program-mode prompts differ from chain-of-thought prompts only by one
trigger sentence appended after the query question.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import jsonl
from .errors import ConfigurationError, ParseError
from .problems import AnswerForm, Problem

# Appended verbatim to program-mode prompts; its presence is what asks the
# model for code instead of prose.
TRIGGER_PHRASE = "Let's write a program to solve the problem"

INSTRUCTION_HEADER = (
    "Below is an instruction that describes a task. "
    "Write a response that appropriately completes the request."
)

REMAP_TEMPLATE = "Please find the closest option to {answer}. The options are {options}"


class Mode(Enum):
    POT = "pot"
    COT = "cot"


class TemplateId(Enum):
    ALPACA_INSTRUCTION = "alpaca-instruction"
    FEW_SHOT_QA = "few-shot-qa"


@dataclass(frozen=True, slots=True)
class Exemplar:
    question: str
    rationale: str
    answer: str
    mode: Mode


@dataclass(frozen=True, slots=True)
class PromptSpec:
    mode: Mode
    shots: int = 0
    template_id: TemplateId | None = None  # derived from shots when omitted


@dataclass(frozen=True, slots=True)
class RenderedPrompt:
    text: str
    metadata: dict = field(default_factory=dict)


def serialize_choices(choices: tuple[tuple[str, str], ...]) -> str:
    return ", ".join(f"{label}) {text}" for label, text in choices)


def _question_block(problem: Problem, mode: Mode) -> str:
    block = problem.question
    if problem.answer_form is AnswerForm.MULTI_CHOICE:
        block += "\nAnswer choices: " + serialize_choices(problem.choices)
    if mode is Mode.POT:
        block += "\n" + TRIGGER_PHRASE
    return block


def render(problem: Problem, spec: PromptSpec, exemplars: list[Exemplar] | None = None) -> RenderedPrompt:
    """Render one prompt; identical inputs always yield identical bytes."""
    exemplars = exemplars or []
    if spec.shots < 0:
        raise ConfigurationError(f"shots must be >= 0, got {spec.shots}")
    if spec.shots > len(exemplars):
        raise ConfigurationError(
            f"spec asks for {spec.shots} shots but only {len(exemplars)} exemplars are available"
        )
    template = TemplateId.ALPACA_INSTRUCTION if spec.shots == 0 else TemplateId.FEW_SHOT_QA
    if spec.template_id is not None and spec.template_id is not template:
        raise ConfigurationError(
            f"template {spec.template_id.value} is inconsistent with shots={spec.shots}"
        )

    if template is TemplateId.ALPACA_INSTRUCTION:
        text = (
            f"{INSTRUCTION_HEADER}\n\n"
            f"### Instruction:\n{_question_block(problem, spec.mode)}\n\n"
            f"### Response:\n"
        )
    else:
        parts = []
        for exemplar in exemplars[: spec.shots]:
            if exemplar.mode is not spec.mode:
                raise ConfigurationError(
                    f"exemplar mode {exemplar.mode.value} does not match prompt mode {spec.mode.value}"
                )
            parts.append(
                f"Question: {exemplar.question}\n"
                f"Answer: {exemplar.rationale}\n"
                f"The answer is {exemplar.answer}.\n\n"
            )
        parts.append(f"Question: {_question_block(problem, spec.mode)}\nAnswer:")
        text = "".join(parts)

    return RenderedPrompt(
        text=text,
        metadata={
            "problem_id": problem.id,
            "dataset": problem.dataset,
            "mode": spec.mode.value,
            "shots": spec.shots,
            "template_id": template.value,
            "trigger_included": spec.mode is Mode.POT,
        },
    )


def render_remap(generated_answer: str, choices: tuple[tuple[str, str], ...]) -> str:
    """Prompt asking the model to map a free-form answer onto the option list."""
    return REMAP_TEMPLATE.format(answer=generated_answer, options=serialize_choices(choices))


def load_exemplars(path: str) -> list[Exemplar]:
    exemplars = []
    for lineno, obj in jsonl.read_jsonl(path):
        where = f"{path}:{lineno}"
        if not isinstance(obj, dict):
            raise ParseError(f"{where}: exemplar must be a JSON object")
        missing = {"question", "rationale", "answer", "mode"} - set(obj)
        if missing:
            raise ParseError(f"{where}: exemplar missing keys {sorted(missing)}")
        try:
            mode = Mode(obj["mode"])
        except ValueError:
            raise ParseError(f"{where}: mode must be 'pot' or 'cot', got {obj['mode']!r}") from None
        exemplars.append(
            Exemplar(
                question=str(obj["question"]),
                rationale=str(obj["rationale"]),
                answer=str(obj["answer"]),
                mode=mode,
            )
        )
    return exemplars

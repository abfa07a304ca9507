"""Hybrid decoding: try a program first, fall back to chain of thought.

A hybrid trace runs the program path and, only when execution did not
succeed, generates a chain-of-thought completion for the same problem.
Multiple-choice problems route captured program answers with no option
letter through a remap request before judging. Backend failures never
abort a batch: the affected trace is marked unscored and carries the error.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .errors import BackendError, ParseError
from .execution import (
    ExecutionOutcome,
    ExecutionStatus,
    INFRASTRUCTURE_STATUSES,
    ProgramExecutor,
    extract_program,
)
from .generation import (
    DEFAULT_MAX_NEW_TOKENS,
    DEFAULT_TEMPERATURE,
    GenRequest,
    GenerationBackend,
)
from .judging import (
    AnswerKind,
    JudgeMethod,
    Judgement,
    Tolerances,
    DEFAULT_UNIT_WORDS,
    extract_cot_answer,
    judge,
    normalize,
    remap_choice_verbose,
)
from .problems import AnswerForm, Problem
from .prompts import Exemplar, Mode, PromptSpec, render

log = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1


class DecodeMode(Enum):
    HYBRID = "hybrid"
    POT_ONLY = "pot"
    COT_ONLY = "cot"


class DecodePath(Enum):
    POT = "PoT"
    COT_FALLBACK = "CoTFallback"
    COT = "CoT"


@dataclass(slots=True)
class DecodeDeps:
    """Everything one decode needs besides the problem itself."""

    client: GenerationBackend
    executor: ProgramExecutor
    spec_pot: PromptSpec = field(default_factory=lambda: PromptSpec(mode=Mode.POT))
    spec_cot: PromptSpec = field(default_factory=lambda: PromptSpec(mode=Mode.COT))
    pot_exemplars: list[Exemplar] = field(default_factory=list)
    cot_exemplars: list[Exemplar] = field(default_factory=list)
    tolerances: Tolerances = field(default_factory=Tolerances)
    unit_words: tuple[str, ...] = DEFAULT_UNIT_WORDS
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    stop: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.spec_pot.mode is not Mode.POT:
            raise ValueError("spec_pot must carry program mode")
        if self.spec_cot.mode is not Mode.COT:
            raise ValueError("spec_cot must carry chain-of-thought mode")


@dataclass(slots=True)
class DecodeTrace:
    problem_id: str
    dataset: str
    mode: DecodeMode
    path: DecodePath
    gold: str
    pot_prompt: str | None = None
    pot_completion: str | None = None
    execution: ExecutionOutcome | None = None
    cot_prompt: str | None = None
    cot_completion: str | None = None
    remap_prompt: str | None = None
    remap_completion: str | None = None
    predicted_raw: str | None = None
    judgement: Judgement | None = None
    correct: bool = False
    unscored: bool = False
    error: str | None = None


def _generate(deps: DecodeDeps, problem: Problem, mode: Mode) -> tuple[str, str]:
    if mode is Mode.POT:
        spec, exemplars = deps.spec_pot, deps.pot_exemplars
    else:
        spec, exemplars = deps.spec_cot, deps.cot_exemplars
    prompt = render(problem, spec, exemplars)
    response = deps.client.generate(
        GenRequest(
            prompt=prompt.text,
            max_new_tokens=deps.max_new_tokens,
            temperature=deps.temperature,
            stop=deps.stop,
            tag=f"{problem.id}:{mode.value}",
        )
    )
    return prompt.text, response.text


def _resolve_choice(trace: DecodeTrace, problem: Problem, deps: DecodeDeps) -> None:
    """Turn the final raw answer into an option letter, remapping if needed.

    Runs after fallback resolution, whichever path produced the answer. A
    chain-of-thought completion with no letter contributes its free-form
    answer as the remap payload.
    """
    from .prompts import render_remap

    raw = trace.predicted_raw
    if raw is not None and normalize(raw, deps.unit_words).kind is AnswerKind.CHOICE:
        return
    if raw is None and trace.cot_completion is not None:
        raw = extract_cot_answer(trace.cot_completion, AnswerForm.OPEN_FORMED)
    if raw is None:
        trace.predicted_raw = None
        return
    trace.remap_prompt = render_remap(raw, problem.choices)
    letter, reply = remap_choice_verbose(
        raw,
        problem.choices,
        deps.client,
        tag=f"{problem.id}:remap",
        max_new_tokens=deps.max_new_tokens,
        temperature=deps.temperature,
        stop=deps.stop,
    )
    trace.remap_completion = reply
    trace.predicted_raw = letter


def decode(problem: Problem, mode: DecodeMode, deps: DecodeDeps) -> DecodeTrace:
    """Produce one fully judged trace for one problem."""
    trace = DecodeTrace(
        problem_id=problem.id,
        dataset=problem.dataset,
        mode=mode,
        path=DecodePath.COT if mode is DecodeMode.COT_ONLY else DecodePath.POT,
        gold=problem.gold,
    )

    if mode in (DecodeMode.HYBRID, DecodeMode.POT_ONLY):
        try:
            trace.pot_prompt, trace.pot_completion = _generate(deps, problem, Mode.POT)
        except BackendError as exc:
            trace.unscored = True
            trace.error = f"generation failed on program path: {exc}"
            return trace
        extracted = extract_program(trace.pot_completion)
        if extracted is None:
            trace.execution = ExecutionOutcome(status=ExecutionStatus.NO_PROGRAM)
        else:
            trace.execution = deps.executor.execute(extracted.source)
        if trace.execution.status in INFRASTRUCTURE_STATUSES:
            trace.unscored = True
            trace.error = f"runner infrastructure failure: {trace.execution.stderr}"

        if trace.execution.status is ExecutionStatus.SUCCESS:
            trace.path = DecodePath.POT
            trace.predicted_raw = trace.execution.captured_answer
        elif mode is DecodeMode.HYBRID:
            trace.path = DecodePath.COT_FALLBACK
        else:
            trace.path = DecodePath.POT  # program-only: a failed program scores as wrong

    if trace.path in (DecodePath.COT, DecodePath.COT_FALLBACK):
        try:
            trace.cot_prompt, trace.cot_completion = _generate(deps, problem, Mode.COT)
        except BackendError as exc:
            trace.unscored = True
            trace.error = f"generation failed on chain-of-thought path: {exc}"
            return trace
        trace.predicted_raw = extract_cot_answer(trace.cot_completion, problem.answer_form)

    if problem.answer_form is AnswerForm.MULTI_CHOICE:
        try:
            _resolve_choice(trace, problem, deps)
        except BackendError as exc:
            trace.unscored = True
            trace.error = f"generation failed on remap: {exc}"
            return trace

    if trace.predicted_raw is None:
        trace.judgement = Judgement(False, JudgeMethod.TEXT_MATCH, "no answer extracted")
    else:
        trace.judgement = judge(
            normalize(trace.predicted_raw, deps.unit_words),
            normalize(problem.gold, deps.unit_words),
            deps.tolerances,
        )
    trace.correct = trace.judgement.equivalent and not trace.unscored
    return trace


def decode_batch(
    problems: Iterable[Problem],
    mode: DecodeMode,
    deps: DecodeDeps,
    parallelism: int = 1,
    on_trace: Callable[[DecodeTrace], None] | None = None,
) -> list[DecodeTrace]:
    """Decode many problems; results come back in input order regardless of
    parallelism, and on_trace fires in that same order (append-friendly)."""
    items = list(problems)
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    traces: list[DecodeTrace] = []
    if not items:
        return traces
    pool = ThreadPoolExecutor(max_workers=parallelism)
    try:
        futures = [pool.submit(decode, p, mode, deps) for p in items]
        for future in futures:
            trace = future.result()
            if on_trace is not None:
                on_trace(trace)
            traces.append(trace)
    except KeyboardInterrupt:
        # Graceful drain: queued work is cancelled, in-flight decodes finish,
        # and everything already appended to the trace log stays resumable.
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    finally:
        pool.shutdown(wait=True)

    counters: Counter[str] = Counter()
    for trace in traces:
        counters[f"path:{trace.path.value}"] += 1
        if trace.execution is not None:
            counters[f"status:{trace.execution.status.value}"] += 1
        if trace.unscored:
            counters["unscored"] += 1
    log.info(
        "decoded %d problems (%s): %s",
        len(traces),
        mode.value,
        ", ".join(f"{k}={v}" for k, v in sorted(counters.items())),
    )
    return traces


def trace_to_obj(trace: DecodeTrace) -> dict:
    """JSON form of a trace. Timing fields are deliberately left out so that
    identical runs serialize to identical bytes."""
    execution = None
    if trace.execution is not None:
        execution = {
            "status": trace.execution.status.value,
            "stdout": trace.execution.stdout,
            "stderr": trace.execution.stderr,
            "captured_answer": trace.execution.captured_answer,
        }
    judgement = None
    if trace.judgement is not None:
        judgement = {
            "equivalent": trace.judgement.equivalent,
            "method": trace.judgement.method.value,
            "detail": trace.judgement.detail,
        }
    return {
        "schema_version": TRACE_SCHEMA_VERSION,
        "problem_id": trace.problem_id,
        "dataset": trace.dataset,
        "mode": trace.mode.value,
        "path": trace.path.value,
        "gold": trace.gold,
        "pot_prompt": trace.pot_prompt,
        "pot_completion": trace.pot_completion,
        "execution": execution,
        "cot_prompt": trace.cot_prompt,
        "cot_completion": trace.cot_completion,
        "remap_prompt": trace.remap_prompt,
        "remap_completion": trace.remap_completion,
        "predicted_raw": trace.predicted_raw,
        "judgement": judgement,
        "correct": trace.correct,
        "unscored": trace.unscored,
        "error": trace.error,
    }


def trace_from_obj(obj: dict) -> DecodeTrace:
    if not isinstance(obj, dict):
        raise ParseError(f"trace must be a JSON object, got {type(obj).__name__}")
    version = obj.get("schema_version")
    if version != TRACE_SCHEMA_VERSION:
        raise ParseError(f"unsupported trace schema version {version!r}")
    execution = None
    if obj.get("execution") is not None:
        e = obj["execution"]
        execution = ExecutionOutcome(
            status=ExecutionStatus(e["status"]),
            stdout=e.get("stdout", ""),
            stderr=e.get("stderr", ""),
            captured_answer=e.get("captured_answer"),
        )
    judgement = None
    if obj.get("judgement") is not None:
        j = obj["judgement"]
        judgement = Judgement(
            equivalent=bool(j["equivalent"]),
            method=JudgeMethod(j["method"]),
            detail=j.get("detail", ""),
        )
    return DecodeTrace(
        problem_id=obj["problem_id"],
        dataset=obj["dataset"],
        mode=DecodeMode(obj["mode"]),
        path=DecodePath(obj["path"]),
        gold=obj["gold"],
        pot_prompt=obj.get("pot_prompt"),
        pot_completion=obj.get("pot_completion"),
        execution=execution,
        cot_prompt=obj.get("cot_prompt"),
        cot_completion=obj.get("cot_completion"),
        remap_prompt=obj.get("remap_prompt"),
        remap_completion=obj.get("remap_completion"),
        predicted_raw=obj.get("predicted_raw"),
        judgement=judgement,
        correct=bool(obj.get("correct", False)),
        unscored=bool(obj.get("unscored", False)),
        error=obj.get("error"),
    )

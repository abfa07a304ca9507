"""Execution-validated instruction data: synthesize, filter, and emit.

Program rationales survive only if they run successfully and print an
answer judged equivalent to the gold, twice in a row — a program whose two
runs disagree is dropped as nondeterministic, since training data has to be
self-consistent. Prose rationales carry nothing to execute and pass through
with parse and dedup checks only.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum

from . import jsonl
from .errors import HarnessError, IntegrityError, ParseError
from .execution import ExecutionStatus, ProgramExecutor, extract_program
from .generation import GenRequest, GenerationBackend
from .judging import Tolerances, judge_prediction
from .prompts import TRIGGER_PHRASE, Exemplar

log = logging.getLogger(__name__)

DEFAULT_JACCARD_THRESHOLD = 0.7


class RationaleType(Enum):
    COT = "cot"
    POT = "pot"


@dataclass(frozen=True, slots=True)
class CandidateRationale:
    id: str
    question: str
    rationale: str
    rationale_type: RationaleType
    gold: str
    source: str = ""
    generator: str = ""

    def __post_init__(self) -> None:
        if not self.rationale.strip():
            raise ParseError(f"{self.id}: rationale is empty")


@dataclass(frozen=True, slots=True)
class InstructionRecord:
    instruction: str
    input: str
    output: str
    source: str = ""
    rationale_type: RationaleType = RationaleType.COT

    def __post_init__(self) -> None:
        if not self.output.strip():
            raise ParseError("instruction record has empty output")
        if self.rationale_type is RationaleType.POT and "```" not in self.output:
            raise ParseError("program record output carries no program block")


@dataclass(frozen=True, slots=True)
class DropReason:
    kind: str  # "WrongAnswer" | "Nondeterministic" | an execution status name
    detail: str = ""


class CurationInfraError(HarnessError):
    """Validation infrastructure failed; the candidate can be retried."""


def validate_pot(
    candidate: CandidateRationale,
    executor: ProgramExecutor,
    tolerances: Tolerances = Tolerances(),
) -> DropReason | None:
    """Run a program candidate against its gold answer; None means keep.

    The program executes twice: once to check the answer, once to confirm
    the answer is stable. Infrastructure failures raise instead of dropping,
    so flaky runners never silently shrink the dataset.
    """
    if candidate.rationale_type is not RationaleType.POT:
        raise ValueError(f"{candidate.id}: validate_pot requires a program rationale")
    extracted = extract_program(candidate.rationale)
    if extracted is None:
        return DropReason(kind=ExecutionStatus.NO_PROGRAM.value)

    first = executor.execute(extracted.source)
    if first.status is ExecutionStatus.RUNNER_FAILURE:
        raise CurationInfraError(f"{candidate.id}: {first.stderr}")
    if first.status is not ExecutionStatus.SUCCESS:
        return DropReason(kind=first.status.value, detail=first.stderr[:200])
    if not judge_prediction(first.captured_answer, candidate.gold, tolerances).equivalent:
        return DropReason(kind="WrongAnswer", detail=str(first.captured_answer))

    second = executor.execute(extracted.source)
    if second.status is ExecutionStatus.RUNNER_FAILURE:
        raise CurationInfraError(f"{candidate.id}: {second.stderr}")
    if (
        second.status is not ExecutionStatus.SUCCESS
        or not judge_prediction(second.captured_answer, candidate.gold, tolerances).equivalent
    ):
        return DropReason(
            kind="Nondeterministic",
            detail=f"runs disagreed: {first.captured_answer!r} then {second.captured_answer!r}",
        )
    return None


@dataclass(slots=True)
class ValidationResult:
    kept: list[CandidateRationale]
    dropped: list[tuple[CandidateRationale, DropReason]]

    def histogram(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for _, reason in self.dropped:
            counts[reason.kind] = counts.get(reason.kind, 0) + 1
        return dict(sorted(counts.items()))


def validate_candidates(
    candidates: list[CandidateRationale],
    executor: ProgramExecutor,
    tolerances: Tolerances = Tolerances(),
    checkpoint_path: str | None = None,
) -> ValidationResult:
    """Validate a batch, optionally journaling each verdict for resume.

    With a checkpoint file, candidates whose verdicts are already journaled
    are not validated again; their verdicts are reused.
    """
    done: dict[str, DropReason | None] = {}
    if checkpoint_path is not None:
        try:
            for _, obj in jsonl.read_jsonl(checkpoint_path):
                if obj["verdict"] == "keep":
                    done[obj["id"]] = None
                else:
                    done[obj["id"]] = DropReason(
                        kind=obj["reason"]["kind"], detail=obj["reason"].get("detail", "")
                    )
        except FileNotFoundError:
            pass

    result = ValidationResult(kept=[], dropped=[])
    for candidate in candidates:
        if candidate.id in done:
            reason = done[candidate.id]
        else:
            if candidate.rationale_type is RationaleType.COT:
                reason = None  # nothing to execute
            else:
                reason = validate_pot(candidate, executor, tolerances)
            if checkpoint_path is not None:
                entry: dict = {"id": candidate.id, "verdict": "keep" if reason is None else "drop"}
                if reason is not None:
                    entry["reason"] = {"kind": reason.kind, "detail": reason.detail}
                jsonl.append_jsonl(checkpoint_path, entry)
        if reason is None:
            result.kept.append(candidate)
        else:
            result.dropped.append((candidate, reason))
    return result


_TRIPLE_RE = re.compile(
    r"Question:\s*(?P<question>.+?)\s*Solution:\s*(?P<rationale>.+?)\s*Answer:\s*(?P<answer>.+)",
    re.DOTALL,
)

SYNTH_TEMPLATE = (
    "You write new math practice problems with worked solutions.\n"
    "Here is an example:\n\n"
    "Question: {question}\n"
    "Solution: {rationale}\n"
    "Answer: {answer}\n\n"
    "Write one new problem of a similar flavor but different content.\n"
    "Reply in exactly this format:\n"
    "Question: <the problem>\n"
    "Solution: <the worked solution>\n"
    "Answer: <the final answer>"
)


def word_jaccard(a: str, b: str) -> float:
    wa, wb = set(a.lower().split()), set(b.lower().split())
    if not wa and not wb:
        return 1.0
    return len(wa & wb) / len(wa | wb)


def synthesize_candidates(
    seeds: list[Exemplar],
    n: int,
    client: GenerationBackend,
    rationale_type: RationaleType = RationaleType.COT,
    source: str = "synthesized",
    generator: str = "backend",
    jaccard_threshold: float = DEFAULT_JACCARD_THRESHOLD,
) -> list[CandidateRationale]:
    """Generate up to n new candidates from rotating seed exemplars.

    Unparseable completions are skipped with a log line; near-duplicate
    questions (word-level Jaccard above the threshold against any already
    kept question) are dropped.
    """
    if not seeds:
        raise ValueError("at least one seed exemplar is required")
    if n < 1:
        raise ValueError("n must be >= 1")
    kept: list[CandidateRationale] = []
    for i in range(n):
        seed = seeds[i % len(seeds)]
        prompt = SYNTH_TEMPLATE.format(
            question=seed.question, rationale=seed.rationale, answer=seed.answer
        )
        response = client.generate(GenRequest(prompt=prompt, tag=f"synth:{i:04d}"))
        m = _TRIPLE_RE.search(response.text)
        if m is None:
            log.info("synthesis %d: completion not in Question/Solution/Answer form; skipped", i)
            continue
        question = m.group("question").strip()
        if any(word_jaccard(question, k.question) > jaccard_threshold for k in kept):
            log.info("synthesis %d: near-duplicate question skipped", i)
            continue
        kept.append(
            CandidateRationale(
                id=f"{source}/{i:04d}",
                question=question,
                rationale=m.group("rationale").strip(),
                rationale_type=rationale_type,
                gold=m.group("answer").strip(),
                source=source,
                generator=generator,
            )
        )
    return kept


def candidate_to_record(candidate: CandidateRationale) -> InstructionRecord:
    """Shape a kept candidate as an instruction-tuning record."""
    if candidate.rationale_type is RationaleType.POT:
        instruction = f"{candidate.question} {TRIGGER_PHRASE}"
        output = candidate.rationale
        if "```" not in output:
            output = f"```python\n{output}\n```"
    else:
        instruction = candidate.question
        output = candidate.rationale
    return InstructionRecord(
        instruction=instruction,
        input="",
        output=output,
        source=candidate.source,
        rationale_type=candidate.rationale_type,
    )


def sidecar_path(path: str) -> str:
    return path + ".meta.jsonl"


def emit_alpaca(records: list[InstructionRecord], path: str) -> int:
    """Write the training file with exactly instruction/input/output per line;
    everything else goes to a sidecar so the training file stays clean."""
    jsonl.write_jsonl(
        path,
        (
            {"instruction": r.instruction, "input": r.input, "output": r.output}
            for r in records
        ),
    )
    jsonl.write_jsonl(
        sidecar_path(path),
        ({"source": r.source, "rationale_type": r.rationale_type.value} for r in records),
    )
    return len(records)


def parse_alpaca(path: str) -> list[InstructionRecord]:
    """Inverse of emit_alpaca; the sidecar is optional but checked if present."""
    rows: list[dict] = []
    for lineno, obj in jsonl.read_jsonl(path):
        where = f"{path}:{lineno}"
        if not isinstance(obj, dict) or set(obj) != {"instruction", "input", "output"}:
            raise ParseError(f"{where}: line must have exactly instruction/input/output")
        rows.append(obj)

    metas: list[dict] = []
    try:
        metas = [obj for _, obj in jsonl.read_jsonl(sidecar_path(path))]
    except FileNotFoundError:
        metas = []
    if metas and len(metas) != len(rows):
        raise IntegrityError(
            f"{sidecar_path(path)}: {len(metas)} metadata lines for {len(rows)} records"
        )

    records = []
    for i, obj in enumerate(rows):
        if metas:
            source = metas[i].get("source", "")
            rationale_type = RationaleType(metas[i]["rationale_type"])
        else:
            source = ""
            rationale_type = (
                RationaleType.POT if TRIGGER_PHRASE in obj["instruction"] else RationaleType.COT
            )
        records.append(
            InstructionRecord(
                instruction=obj["instruction"],
                input=obj["input"],
                output=obj["output"],
                source=source,
                rationale_type=rationale_type,
            )
        )
    return records


def load_candidates(path: str) -> list[CandidateRationale]:
    candidates = []
    seen: set[str] = set()
    for lineno, obj in jsonl.read_jsonl(path):
        where = f"{path}:{lineno}"
        if not isinstance(obj, dict):
            raise ParseError(f"{where}: candidate must be a JSON object")
        missing = {"question", "rationale", "rationale_type", "gold"} - set(obj)
        if missing:
            raise ParseError(f"{where}: candidate missing keys {sorted(missing)}")
        try:
            rationale_type = RationaleType(obj["rationale_type"])
        except ValueError:
            raise ParseError(
                f"{where}: rationale_type must be 'pot' or 'cot', got {obj['rationale_type']!r}"
            ) from None
        cid = str(obj.get("id", f"cand/{lineno:04d}"))
        if cid in seen:
            raise IntegrityError(f"{where}: duplicate candidate id {cid!r}")
        seen.add(cid)
        try:
            candidates.append(
                CandidateRationale(
                    id=cid,
                    question=str(obj["question"]),
                    rationale=str(obj["rationale"]),
                    rationale_type=rationale_type,
                    gold=str(obj["gold"]),
                    source=str(obj.get("source", "")),
                    generator=str(obj.get("generator", "")),
                )
            )
        except ParseError as exc:
            raise ParseError(f"{where}: {exc}") from None
    return candidates

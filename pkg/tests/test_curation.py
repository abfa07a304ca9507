import pytest

from hybridmath.curation import (
    CandidateRationale,
    CurationInfraError,
    DropReason,
    InstructionRecord,
    RationaleType,
    candidate_to_record,
    emit_alpaca,
    load_candidates,
    parse_alpaca,
    sidecar_path,
    synthesize_candidates,
    validate_candidates,
    validate_pot,
    word_jaccard,
)
from hybridmath.errors import IntegrityError, ParseError
from hybridmath.execution import (
    InProcessRunner,
    ProgramExecutor,
    RunnerFailure,
    ScriptedRunner,
    exception_reply,
    ok_reply,
    timeout_reply,
)
from hybridmath.generation import ScriptedBackend
from hybridmath.jsonl import read_jsonl
from hybridmath.prompts import Exemplar, Mode, TRIGGER_PHRASE


def _pot(cid: str, source: str, gold: str = "4") -> CandidateRationale:
    return CandidateRationale(
        id=cid,
        question="What is 2+2?",
        rationale=f"```python\n{source}\n```",
        rationale_type=RationaleType.POT,
        gold=gold,
    )


def _cot(cid: str, rationale: str = "Adding gives 4.") -> CandidateRationale:
    return CandidateRationale(
        id=cid,
        question="What is 2+2?",
        rationale=rationale,
        rationale_type=RationaleType.COT,
        gold="4",
    )


def _executor(replies) -> ProgramExecutor:
    return ProgramExecutor(ScriptedRunner(replies))


# --- Program validation ---------------------------------------------------------


def test_correct_stable_program_is_kept():
    executor = _executor({"print(2+2)": ok_reply("4\n")})
    assert validate_pot(_pot("c1", "print(2+2)"), executor) is None
    assert executor.runner.calls_for("print(2+2)") == 2  # checked, then confirmed


def test_wrong_answer_is_dropped_without_confirmation_run():
    executor = _executor({"print(5)": ok_reply("5\n")})
    reason = validate_pot(_pot("c1", "print(5)"), executor)
    assert reason == DropReason(kind="WrongAnswer", detail="5")
    assert executor.runner.calls_for("print(5)") == 1


def test_drop_reasons_use_execution_status_names():
    executor = _executor(
        {
            "boom()": exception_reply("NameError"),
            "spin()": timeout_reply(),
            "pass": ok_reply(""),
        }
    )
    assert validate_pot(_pot("c1", "boom()"), executor).kind == "Exception"
    assert validate_pot(_pot("c2", "spin()"), executor).kind == "Timeout"
    assert validate_pot(_pot("c3", "pass"), executor).kind == "EmptyOutput"


def test_rationale_without_program_is_dropped_as_no_program():
    candidate = CandidateRationale(
        id="c1",
        question="q",
        rationale="```python\n\n```",
        rationale_type=RationaleType.POT,
        gold="4",
    )
    assert validate_pot(candidate, _executor({})).kind == "NoProgram"


def test_unstable_program_is_dropped_as_nondeterministic():
    executor = _executor({"import random\nprint(random.random())": [ok_reply("4\n"), ok_reply("0.72\n")]})
    reason = validate_pot(_pot("c1", "import random\nprint(random.random())"), executor)
    assert reason.kind == "Nondeterministic"
    assert "'4'" in reason.detail and "'0.72'" in reason.detail


def test_program_that_fails_on_confirmation_is_nondeterministic():
    executor = _executor({"flaky()": [ok_reply("4\n"), exception_reply("IOError")]})
    assert validate_pot(_pot("c1", "flaky()"), executor).kind == "Nondeterministic"


def test_judging_tolerates_equivalent_forms():
    executor = _executor({"print(0.5)": ok_reply("0.5\n")})
    candidate = _pot("c1", "print(0.5)", gold="1/2")
    assert validate_pot(candidate, executor) is None


def test_runner_failure_raises_instead_of_dropping():
    class Broken:
        def run(self, code, limits, policy):
            raise RunnerFailure("host gone")

    with pytest.raises(CurationInfraError, match="host gone"):
        validate_pot(_pot("c1", "print(2+2)"), ProgramExecutor(Broken()))


def test_validate_pot_rejects_prose_candidates():
    with pytest.raises(ValueError):
        validate_pot(_cot("c1"), _executor({}))


def test_real_programs_validate_end_to_end():
    executor = ProgramExecutor(InProcessRunner())
    assert validate_pot(_pot("c1", "print(2+2)"), executor) is None
    assert validate_pot(_pot("c2", "print(2+3)"), executor).kind == "WrongAnswer"


# --- Batch validation and checkpointing -------------------------------------------


def test_prose_candidates_pass_through_without_execution():
    executor = _executor({})
    result = validate_candidates([_cot("c1"), _cot("c2")], executor)
    assert [c.id for c in result.kept] == ["c1", "c2"]
    assert executor.runner.calls == []


def test_mixed_batch_histogram():
    executor = _executor(
        {
            "print(2+2)": ok_reply("4\n"),
            "boom()": exception_reply(),
            "print(9)": ok_reply("9\n"),
        }
    )
    candidates = [
        _pot("p1", "print(2+2)"),
        _pot("p2", "boom()"),
        _pot("p3", "print(9)"),
        _cot("c1"),
    ]
    result = validate_candidates(candidates, executor)
    assert [c.id for c in result.kept] == ["p1", "c1"]
    assert result.histogram() == {"Exception": 1, "WrongAnswer": 1}


def test_checkpoint_skips_already_validated_candidates(tmp_path):
    checkpoint = tmp_path / "verdicts.jsonl"
    executor = _executor({"print(2+2)": ok_reply("4\n"), "boom()": exception_reply()})
    candidates = [_pot("p1", "print(2+2)"), _pot("p2", "boom()")]

    first = validate_candidates(candidates, executor, checkpoint_path=str(checkpoint))
    assert len(first.kept) == 1
    runs_after_first = len(executor.runner.calls)

    second = validate_candidates(candidates, executor, checkpoint_path=str(checkpoint))
    assert len(executor.runner.calls) == runs_after_first  # nothing re-executed
    assert [c.id for c in second.kept] == ["p1"]
    assert second.histogram() == {"Exception": 1}


def test_checkpoint_journals_verdicts_as_they_happen(tmp_path):
    checkpoint = tmp_path / "verdicts.jsonl"
    executor = _executor({"print(2+2)": ok_reply("4\n")})
    validate_candidates([_pot("p1", "print(2+2)")], executor, checkpoint_path=str(checkpoint))
    entries = [obj for _, obj in read_jsonl(str(checkpoint))]
    assert entries == [{"id": "p1", "verdict": "keep"}]


def test_checkpoint_resume_after_partial_failure(tmp_path):
    checkpoint = tmp_path / "verdicts.jsonl"
    flaky = _executor({"print(2+2)": ok_reply("4\n")})
    candidates = [_pot("p1", "print(2+2)"), _pot("p2", "boom()")]
    with pytest.raises(KeyError):  # the scripted runner has no reply for boom()
        validate_candidates(candidates, flaky, checkpoint_path=str(checkpoint))

    healed = _executor({"print(2+2)": ok_reply("4\n"), "boom()": exception_reply()})
    result = validate_candidates(candidates, healed, checkpoint_path=str(checkpoint))
    assert healed.runner.calls_for("print(2+2)") == 0  # p1's verdict came from the journal
    assert [c.id for c in result.kept] == ["p1"]
    assert result.histogram() == {"Exception": 1}


# --- Synthesis ---------------------------------------------------------------------


SEED = Exemplar(
    question="What is 2+2?",
    rationale="Two and two make four.",
    answer="4",
    mode=Mode.COT,
)


def _completion(question: str, rationale: str = "Work it out.", answer: str = "1") -> str:
    return f"Question: {question}\nSolution: {rationale}\nAnswer: {answer}"


def test_synthesis_parses_the_reply_format():
    client = ScriptedBackend(lambda req: _completion("What is 5+5?", "Five pairs.", "10"))
    candidates = synthesize_candidates([SEED], 1, client)
    assert len(candidates) == 1
    candidate = candidates[0]
    assert candidate.question == "What is 5+5?"
    assert candidate.rationale == "Five pairs."
    assert candidate.gold == "10"
    assert candidate.id == "synthesized/0000"
    assert candidate.rationale_type is RationaleType.COT


def test_synthesis_prompt_contains_the_seed():
    client = ScriptedBackend(lambda req: _completion("q2"))
    synthesize_candidates([SEED], 1, client)
    prompt = client.calls[0].prompt
    assert "Question: What is 2+2?" in prompt
    assert "Solution: Two and two make four." in prompt
    assert "Answer: 4" in prompt


def test_synthesis_rotates_seeds():
    seeds = [
        SEED,
        Exemplar(question="What is 3*3?", rationale="Nine.", answer="9", mode=Mode.COT),
    ]
    client = ScriptedBackend(lambda req: _completion(f"generated {req.tag}"))
    synthesize_candidates(seeds, 4, client)
    prompts = [c.prompt for c in client.calls]
    assert "What is 2+2?" in prompts[0] and "What is 3*3?" in prompts[1]
    assert "What is 2+2?" in prompts[2] and "What is 3*3?" in prompts[3]


def test_synthesis_skips_unparseable_completions():
    replies = iter(["no structure here", _completion("What is 7-3?")])
    client = ScriptedBackend(lambda req: next(replies))
    candidates = synthesize_candidates([SEED], 2, client)
    assert [c.question for c in candidates] == ["What is 7-3?"]


def test_synthesis_drops_near_duplicate_questions():
    replies = iter(
        [
            _completion("How many apples does Amy hold in her basket?"),
            _completion("How many apples does Amy hold in her bag?"),
            _completion("A rocket burns fuel at nine tonnes per minute."),
        ]
    )
    client = ScriptedBackend(lambda req: next(replies))
    candidates = synthesize_candidates([SEED], 3, client)
    assert len(candidates) == 2
    assert candidates[0].question.endswith("basket?")
    assert candidates[1].question.startswith("A rocket")


def test_synthesis_tags_requests_for_replay():
    client = ScriptedBackend(lambda req: _completion("q"))
    synthesize_candidates([SEED], 3, client)
    assert [c.tag for c in client.calls] == ["synth:0000", "synth:0001", "synth:0002"]


def test_synthesis_requires_seeds_and_positive_n():
    client = ScriptedBackend(lambda req: "")
    with pytest.raises(ValueError):
        synthesize_candidates([], 1, client)
    with pytest.raises(ValueError):
        synthesize_candidates([SEED], 0, client)


def test_word_jaccard_extremes():
    assert word_jaccard("a b c", "a b c") == 1.0
    assert word_jaccard("a b", "c d") == 0.0
    assert word_jaccard("", "") == 1.0


# --- Instruction record emission ------------------------------------------------


def test_program_records_get_the_trigger_and_a_fence():
    record = candidate_to_record(_pot("p1", "print(2+2)"))
    assert record.instruction == f"What is 2+2? {TRIGGER_PHRASE}"
    assert record.output == "```python\nprint(2+2)\n```"
    assert record.input == ""


def test_unfenced_program_rationales_are_fenced_on_emit():
    candidate = CandidateRationale(
        id="p1",
        question="q",
        rationale="print(1)",
        rationale_type=RationaleType.POT,
        gold="1",
    )
    record = candidate_to_record(candidate)
    assert record.output == "```python\nprint(1)\n```"


def test_prose_records_pass_through_unchanged():
    record = candidate_to_record(_cot("c1", "Count on fingers: four."))
    assert record.instruction == "What is 2+2?"
    assert TRIGGER_PHRASE not in record.instruction
    assert record.output == "Count on fingers: four."


def test_emitted_lines_have_exactly_three_keys(tmp_path):
    path = tmp_path / "train.jsonl"
    emit_alpaca([candidate_to_record(_cot("c1")), candidate_to_record(_pot("p1", "print(2+2)"))], str(path))
    for _, obj in read_jsonl(str(path)):
        assert set(obj) == {"instruction", "input", "output"}


def test_sidecar_carries_source_and_type(tmp_path):
    path = tmp_path / "train.jsonl"
    records = [
        InstructionRecord(instruction="q1", input="", output="a1", source="gsm8k"),
        InstructionRecord(
            instruction=f"q2 {TRIGGER_PHRASE}",
            input="",
            output="```python\nprint(1)\n```",
            source="math",
            rationale_type=RationaleType.POT,
        ),
    ]
    emit_alpaca(records, str(path))
    metas = [obj for _, obj in read_jsonl(sidecar_path(str(path)))]
    assert metas == [
        {"source": "gsm8k", "rationale_type": "cot"},
        {"source": "math", "rationale_type": "pot"},
    ]


def test_emit_parse_round_trip(tmp_path):
    path = tmp_path / "train.jsonl"
    records = [
        candidate_to_record(_cot("c1", "Prose solution.")),
        candidate_to_record(_pot("p1", "print(2+2)")),
    ]
    emit_alpaca(records, str(path))
    assert parse_alpaca(str(path)) == records


def test_parse_without_sidecar_infers_type_from_trigger(tmp_path):
    path = tmp_path / "train.jsonl"
    emit_alpaca([candidate_to_record(_pot("p1", "print(2+2)")), candidate_to_record(_cot("c1"))], str(path))
    (tmp_path / "train.jsonl.meta.jsonl").unlink()
    records = parse_alpaca(str(path))
    assert records[0].rationale_type is RationaleType.POT
    assert records[1].rationale_type is RationaleType.COT


def test_parse_rejects_extra_or_missing_keys(tmp_path):
    path = tmp_path / "train.jsonl"
    path.write_text('{"instruction": "q", "input": "", "output": "a", "extra": 1}\n', encoding="utf-8")
    with pytest.raises(ParseError, match="exactly"):
        parse_alpaca(str(path))
    path.write_text('{"instruction": "q", "output": "a"}\n', encoding="utf-8")
    with pytest.raises(ParseError, match="exactly"):
        parse_alpaca(str(path))


def test_parse_rejects_sidecar_length_mismatch(tmp_path):
    path = tmp_path / "train.jsonl"
    emit_alpaca([candidate_to_record(_cot("c1")), candidate_to_record(_cot("c2"))], str(path))
    sidecar = tmp_path / "train.jsonl.meta.jsonl"
    lines = sidecar.read_text(encoding="utf-8").splitlines()
    sidecar.write_text(lines[0] + "\n", encoding="utf-8")
    with pytest.raises(IntegrityError, match="metadata"):
        parse_alpaca(str(path))


def test_record_invariants():
    with pytest.raises(ParseError, match="empty output"):
        InstructionRecord(instruction="q", input="", output="   ")
    with pytest.raises(ParseError, match="program block"):
        InstructionRecord(
            instruction="q", input="", output="prose", rationale_type=RationaleType.POT
        )


# --- Candidate files -----------------------------------------------------------


def test_load_candidates_round_trip(tmp_path):
    path = tmp_path / "candidates.jsonl"
    path.write_text(
        '{"id": "a", "question": "q1", "rationale": "r1", "rationale_type": "cot", "gold": "1"}\n'
        '{"id": "b", "question": "q2", "rationale": "```python\\nprint(2)\\n```", '
        '"rationale_type": "pot", "gold": "2", "source": "math", "generator": "human"}\n',
        encoding="utf-8",
    )
    candidates = load_candidates(str(path))
    assert [c.id for c in candidates] == ["a", "b"]
    assert candidates[1].rationale_type is RationaleType.POT
    assert candidates[1].source == "math"


def test_load_candidates_assigns_line_ids_when_missing(tmp_path):
    path = tmp_path / "candidates.jsonl"
    path.write_text(
        '{"question": "q", "rationale": "r", "rationale_type": "cot", "gold": "1"}\n',
        encoding="utf-8",
    )
    assert load_candidates(str(path))[0].id == "cand/0001"


def test_load_candidates_rejects_duplicates_and_bad_types(tmp_path):
    path = tmp_path / "candidates.jsonl"
    path.write_text(
        '{"id": "a", "question": "q", "rationale": "r", "rationale_type": "cot", "gold": "1"}\n'
        '{"id": "a", "question": "q", "rationale": "r", "rationale_type": "cot", "gold": "1"}\n',
        encoding="utf-8",
    )
    with pytest.raises(IntegrityError, match="duplicate"):
        load_candidates(str(path))
    path.write_text(
        '{"id": "a", "question": "q", "rationale": "r", "rationale_type": "tot", "gold": "1"}\n',
        encoding="utf-8",
    )
    with pytest.raises(ParseError, match="tot"):
        load_candidates(str(path))


def test_empty_rationale_is_rejected_at_parse(tmp_path):
    path = tmp_path / "candidates.jsonl"
    path.write_text(
        '{"id": "a", "question": "q", "rationale": "  ", "rationale_type": "cot", "gold": "1"}\n',
        encoding="utf-8",
    )
    with pytest.raises(ParseError, match="empty"):
        load_candidates(str(path))

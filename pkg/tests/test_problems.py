import pytest

from hybridmath.errors import IntegrityError, ParseError
from hybridmath.problems import (
    AnswerForm,
    FIELD_TAGS,
    LoadResult,
    dataset_meta,
    load_dataset,
    problem_to_obj,
    registry,
    registry_with_overrides,
    save_dataset,
)

from conftest import make_problem


def test_registry_has_nine_datasets_four_in_domain():
    metas = registry()
    assert len(metas) == 9
    assert sum(1 for m in metas if m.in_domain) == 4
    assert [m.in_domain for m in metas] == [True] * 4 + [False] * 5


def test_registry_expected_counts():
    counts = {m.dataset: m.expected_count for m in registry()}
    assert counts == {
        "gsm8k": 1319,
        "math": 5000,
        "aqua": 254,
        "numglue": 1042,
        "svamp": 1000,
        "mathematics": 1000,
        "simuleq": 514,
        "sat-math": 220,
        "mmlu-math": 974,
    }


def test_registry_out_of_domain_total():
    assert sum(m.expected_count for m in registry() if not m.in_domain) == 3708


def test_registry_answer_forms():
    forms = {m.dataset: m.answer_form for m in registry()}
    multi = {d for d, f in forms.items() if f is AnswerForm.MULTI_CHOICE}
    assert multi == {"aqua", "sat-math", "mmlu-math"}


def test_registry_third_entry_is_the_choice_dataset():
    meta = registry()[2]
    assert meta.dataset == "aqua"
    assert meta.answer_form is AnswerForm.MULTI_CHOICE
    assert meta.expected_count == 254


def test_registry_field_tags_are_canonical():
    for meta in registry():
        assert meta.fields <= FIELD_TAGS
    assert dataset_meta("math").fields == FIELD_TAGS
    assert dataset_meta("mathematics").fields == {
        "pre-algebra",
        "inter-algebra",
        "numtheory",
        "calculus",
    }


def test_registry_default_shots_split():
    for meta in registry():
        assert meta.default_shots == (8 if meta.in_domain else 5)


def test_dataset_meta_unknown_name():
    with pytest.raises(IntegrityError):
        dataset_meta("gsm9k")


def test_registry_with_overrides_changes_only_named_counts():
    metas = registry_with_overrides({"gsm8k": 3})
    assert metas[0].expected_count == 3
    assert metas[1].expected_count == 5000
    with pytest.raises(IntegrityError):
        registry_with_overrides({"nope": 1})


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def test_load_choice_dataset(tmp_path):
    path = tmp_path / "aqua.jsonl"
    _write_lines(
        path,
        [
            '{"id": "0", "question": "Pick the speed.", "gold": "B", "choices": ["400", "450", "500", "550", "600"]}',
            '{"id": "1", "question": "Pick the cost.", "gold": "A", "choices": ["1", "2", "3", "4", "5"]}',
            '{"id": "2", "question": "Pick the count.", "gold": "E", "choices": ["5", "6", "7", "8", "9"]}',
        ],
    )
    result = load_dataset(str(path), dataset_meta("aqua"))
    assert result.count == 3
    assert all(p.answer_form is AnswerForm.MULTI_CHOICE for p in result.problems)
    assert result.problems[0].choices == (
        ("A", "400"),
        ("B", "450"),
        ("C", "500"),
        ("D", "550"),
        ("E", "600"),
    )
    assert all(p.gold in dict(p.choices) for p in result.problems)
    assert result.problems[0].id == "aqua/0"


def test_load_count_mismatch_warns_but_loads(tmp_path):
    path = tmp_path / "aqua.jsonl"
    path.write_text("", encoding="utf-8")
    result = load_dataset(str(path), dataset_meta("aqua"))
    assert result.problems == []
    assert len(result.warnings) == 1
    assert "0" in result.warnings[0] and "254" in result.warnings[0]


def test_load_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "gsm8k.jsonl"
    _write_lines(
        path,
        [
            '{"id": "0", "question": "ok?", "gold": "1"}',
            '{"id": "1", "question": "broken"',
        ],
    )
    with pytest.raises(ParseError, match=":2"):
        load_dataset(str(path), dataset_meta("gsm8k"))


def test_load_missing_key_names_line(tmp_path):
    path = tmp_path / "gsm8k.jsonl"
    _write_lines(path, ['{"id": "0", "question": "no gold?"}'])
    with pytest.raises(ParseError, match=":1"):
        load_dataset(str(path), dataset_meta("gsm8k"))


def test_load_duplicate_id_is_integrity_error(tmp_path):
    path = tmp_path / "gsm8k.jsonl"
    _write_lines(
        path,
        [
            '{"id": "7", "question": "a?", "gold": "1"}',
            '{"id": "7", "question": "b?", "gold": "2"}',
        ],
    )
    with pytest.raises(IntegrityError, match="duplicate"):
        load_dataset(str(path), dataset_meta("gsm8k"))


def test_load_gold_not_a_choice_label(tmp_path):
    path = tmp_path / "aqua.jsonl"
    _write_lines(path, ['{"id": "0", "question": "pick", "gold": "7", "choices": ["5", "6", "7"]}'])
    with pytest.raises(ParseError, match="gold"):
        load_dataset(str(path), dataset_meta("aqua"))


def test_load_too_many_choices(tmp_path):
    path = tmp_path / "aqua.jsonl"
    _write_lines(
        path,
        ['{"id": "0", "question": "pick", "gold": "A", "choices": ["1", "2", "3", "4", "5", "6"]}'],
    )
    with pytest.raises(ParseError, match="choices"):
        load_dataset(str(path), dataset_meta("aqua"))


def test_load_unknown_field_tag(tmp_path):
    path = tmp_path / "gsm8k.jsonl"
    _write_lines(path, ['{"id": "0", "question": "a?", "gold": "1", "fields": ["topology"]}'])
    with pytest.raises(ParseError, match="topology"):
        load_dataset(str(path), dataset_meta("gsm8k"))


def test_load_unknown_record_key(tmp_path):
    path = tmp_path / "gsm8k.jsonl"
    _write_lines(path, ['{"id": "0", "question": "a?", "gold": "1", "answer": "1"}'])
    with pytest.raises(ParseError, match="answer"):
        load_dataset(str(path), dataset_meta("gsm8k"))


def test_round_trip_save_then_load(tmp_path):
    problems = [
        make_problem(0, question="What is 1+1?", gold="2"),
        make_problem(1, question="What is 2*3?", gold="6"),
    ]
    path = tmp_path / "gsm8k.jsonl"
    save_dataset(str(path), problems)
    result = load_dataset(str(path), dataset_meta("gsm8k"))
    assert result.problems == problems


def test_round_trip_preserves_choices_and_fields(tmp_path, choice_problem):
    obj = problem_to_obj(choice_problem)
    assert obj["choices"] == ["400", "450", "500", "550", "600"]
    path = tmp_path / "aqua.jsonl"
    save_dataset(str(path), [choice_problem])
    result = load_dataset(str(path), dataset_meta("aqua"))
    assert result.problems == [choice_problem]


def test_answer_form_mismatch_with_registry_warns(tmp_path):
    path = tmp_path / "aqua.jsonl"
    _write_lines(path, ['{"id": "0", "question": "open one?", "gold": "12"}'])
    result = load_dataset(str(path), dataset_meta("aqua"))
    assert any("answer form" in w for w in result.warnings)


def test_load_result_type(tmp_path):
    path = tmp_path / "gsm8k.jsonl"
    _write_lines(path, ['{"id": "0", "question": "a?", "gold": "1"}'])
    result = load_dataset(str(path), dataset_meta("gsm8k"))
    assert isinstance(result, LoadResult)
    assert result.count == len(result.problems) == 1

import pytest

from hybridmath.errors import ParseError
from hybridmath.jsonl import append_jsonl, dumps, read_jsonl, write_jsonl


def test_dumps_sorts_keys_for_stable_bytes():
    assert dumps({"b": 1, "a": 2}) == dumps({"a": 2, "b": 1})
    assert dumps({"a": 2, "b": 1}) == '{"a": 2, "b": 1}'


def test_dumps_keeps_unicode_readable():
    assert dumps({"q": "3 × 4 = ?"}) == '{"q": "3 × 4 = ?"}'


def test_write_then_read_round_trip(tmp_path):
    path = tmp_path / "objs.jsonl"
    objs = [{"i": 0}, {"i": 1, "note": "two"}, [1, 2, 3]]
    assert write_jsonl(str(path), objs) == 3
    assert [obj for _, obj in read_jsonl(str(path))] == objs


def test_read_reports_line_numbers_and_skips_blanks(tmp_path):
    path = tmp_path / "objs.jsonl"
    path.write_text('{"i": 0}\n\n{"i": 2}\n', encoding="utf-8")
    assert list(read_jsonl(str(path))) == [(1, {"i": 0}), (3, {"i": 2})]


def test_read_raises_parse_error_with_location(tmp_path):
    path = tmp_path / "objs.jsonl"
    path.write_text('{"ok": 1}\n{broken\n', encoding="utf-8")
    with pytest.raises(ParseError, match=r"objs\.jsonl:2"):
        list(read_jsonl(str(path)))


def test_append_builds_a_file_line_by_line(tmp_path):
    path = tmp_path / "log.jsonl"
    append_jsonl(str(path), {"n": 1})
    append_jsonl(str(path), {"n": 2})
    assert [obj for _, obj in read_jsonl(str(path))] == [{"n": 1}, {"n": 2}]


def test_write_creates_missing_parent_directories(tmp_path):
    path = tmp_path / "deep" / "nested" / "objs.jsonl"
    write_jsonl(str(path), [{"i": 0}])
    assert path.exists()

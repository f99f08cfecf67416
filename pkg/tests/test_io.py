import json

import pytest

from dswtrack.io import atomic_open, read_json, read_jsonl, write_csv, write_json, write_jsonl


def test_jsonl_roundtrip(tmp_path):
    p = tmp_path / "x.jsonl"
    rows = [{"k": 1, "y": None}, {"k": 2, "y": [1.5, 2.0]}]
    assert write_jsonl(p, rows) == 2
    assert list(read_jsonl(p)) == rows


def test_blank_lines_skipped(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"a": 1}\n\n{"a": 2}\n')
    assert [r["a"] for r in read_jsonl(p)] == [1, 2]


def test_decode_error_has_file_line(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"a": 1}\n{"a": 2}\n{"a": }\n')
    with pytest.raises(json.JSONDecodeError) as info:
        list(read_jsonl(p))
    assert info.value.lineno == 3
    assert "line 3" in str(info.value)


def test_atomic_write_failure_leaves_nothing(tmp_path):
    p = tmp_path / "out.json"
    p.write_text("old")
    with pytest.raises(RuntimeError):
        with atomic_open(p) as fh:
            fh.write("partial")
            raise RuntimeError
    assert p.read_text() == "old"
    assert sorted(x.name for x in tmp_path.iterdir()) == ["out.json"]


def test_json_and_csv(tmp_path):
    write_json(tmp_path / "a.json", {"x": [1, 2]})
    assert read_json(tmp_path / "a.json") == {"x": [1, 2]}
    write_csv(tmp_path / "a.csv", ["a", "b"], [(1, 2)])
    assert (tmp_path / "a.csv").read_text().splitlines() == ["a,b", "1,2"]

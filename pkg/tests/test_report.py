import json
from datetime import datetime, timedelta

import pytest

from keyforge.entity.artifact_entity import KeyCandidate, RunRecord
from keyforge.component.artefact_scan import tail_interpretations
from keyforge.utils.report import candidate_from_dict, candidate_to_dict, read_candidates_jsonl, render_report, \
    run_to_dict, write_candidates_jsonl
from keyforge.utils.utils import lossy_text, parse_bool, parse_size
from keyforge.exception import InvalidConfigError, InvalidInputError


def candidate(offset=64) -> KeyCandidate:
    key, tail = bytes(range(32)), bytes(range(16))
    return KeyCandidate(key=key, tail=tail, offset=offset, entropy_bits=5.0,
                        interpretations=tail_interpretations(key, tail), source_id="image.bin")


def test_candidates_jsonl(tmp_path):
    path = str(tmp_path / "candidates.jsonl")
    assert write_candidates_jsonl(path, [candidate(0), candidate(132)]) == 2
    assert read_candidates_jsonl(path) == [candidate(0), candidate(132)]


def test_malformed_candidates(tmp_path):
    with pytest.raises(InvalidInputError):
        candidate_from_dict({"key": "zz"})
    path = tmp_path / "broken.jsonl"
    path.write_text(json.dumps(candidate_to_dict(candidate())) + "\n{not json\n")
    with pytest.raises(InvalidInputError):
        read_candidates_jsonl(str(path))


def test_render_report():
    report = {"command": "scan", "count": 1, "items": [{"key": "ab", "missing": None}], "empty": []}
    assert json.loads(render_report(report, "json")) == report
    text = render_report(report, "text")
    assert text.splitlines()[:2] == ["keyforge scan report", "=" * len("keyforge scan report")]
    assert "  key: ab" in text
    assert "missing: -" in text
    assert "empty: []" in text
    assert render_report({"command": "decrypt", "plaintext": "a\x00b"}, "text").splitlines()[-1] == \
        'plaintext: "a\\u0000b"'


def test_run_to_dict():
    start = datetime(2026, 1, 1, 12, 0, 0)
    run = RunRecord(run_id="id", command="scan", start_time=start, stop_time=start + timedelta(seconds=2),
                    execution_time=timedelta(seconds=2), running_status=False, message="done")
    assert run_to_dict(run)["execution_time"] == 2.0
    assert run_to_dict(run)["stop_time"] == "2026-01-01T12:00:02"


@pytest.mark.parametrize("value, expected", [
    (4096, 4096), ("4096", 4096), ("64K", 65536), ("16M", 16 << 20), ("1MiB", 1 << 20), ("2g", 2 << 30),
])
def test_parse_size(value, expected):
    assert parse_size(value) == expected


def test_parse_size_and_bool_errors():
    with pytest.raises(InvalidConfigError):
        parse_size("1 parsec")
    with pytest.raises(InvalidConfigError):
        parse_size(-1)
    with pytest.raises(InvalidConfigError):
        parse_bool("perhaps")
    assert parse_bool("on") is True and parse_bool("0") is False


def test_lossy_text():
    assert lossy_text(b"GET \xff") == "GET �"

"""Tests for the result store."""

import json
from concurrent.futures import ThreadPoolExecutor

import pytest

from ambiver.backends import ReplayBackend
from ambiver.exceptions import MissingFileError
from ambiver.reasoning import Verdict
from ambiver.store import ResultRecord, ResultStore


def _record(instruction_id, prompt_hash="h1", scene_id="s1"):
    verdict = Verdict.ambiguous(("Instance",), "two cups", clarification="Which cup?")
    return ResultRecord(scene_id, instruction_id, verdict, prompt_hash=prompt_hash)


def test_write_and_load(tmp_path):
    """A written record loads back with its response reference."""

    store = ResultStore(tmp_path)
    written = store.write(_record("i1"), raw_response='{"label": "Ambiguous"}')
    assert written.raw_response_ref == "responses.jsonl#h1"
    assert store.has("s1", "i1")
    assert store.load("s1", "i1") == written
    assert not store.has("s1", "i2")
    with pytest.raises(MissingFileError):
        store.load("s1", "i2")


def test_results_log_is_append_only(tmp_path):
    """Rewriting an instruction appends a line and replaces its record."""

    store = ResultStore(tmp_path)
    store.write(_record("i1"))
    store.write(ResultRecord("s1", "i1", Verdict.unambiguous()))
    lines = store.results_path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["verdict"]["label"] == "Ambiguous"
    assert not store.load("s1", "i1").verdict.is_ambiguous
    assert [r.instruction_id for r in store.records()] == ["i1"]


def test_records_are_sorted_by_scene_and_id(tmp_path):
    """records() returns the latest record of every instruction in order."""

    store = ResultStore(tmp_path)
    assert store.records() == []
    for scene_id, instruction_id in [("s2", "a"), ("s1", "b"), ("s1", "a")]:
        store.write(_record(instruction_id, scene_id=scene_id))
    assert [r.key for r in store.records()] == [("s1", "a"), ("s1", "b"), ("s2", "a")]


def test_unsafe_ids_stay_inside_the_store(tmp_path):
    """Path separators in ids do not escape the records directory."""

    store = ResultStore(tmp_path / "out")
    path = store.record_path("../scene", "a/b")
    assert path.parent.parent == tmp_path / "out" / "records"
    store.write(_record("a/b", scene_id="../scene"))
    assert store.load("../scene", "a/b").instruction_id == "a/b"


def test_degraded_flag_follows_the_verdict(tmp_path):
    """The stored degraded flag is the verdict's."""

    store = ResultStore(tmp_path)
    verdict = Verdict.ambiguous(degraded=True)
    store.write(ResultRecord("s1", "i1", verdict, error="boom"))
    data = json.loads(store.results_path.read_text(encoding="utf-8"))
    assert data["degraded"] is True
    assert data["error"] == "boom"
    assert data["raw_response_ref"] is None


def test_responses_feed_the_replay_backend(tmp_path):
    """The store's response log is a replay source."""

    store = ResultStore(tmp_path)
    store.write(_record("i1", "hash-a"), raw_response="first")
    store.write(_record("i2", "hash-b"), raw_response="second")
    replay = ReplayBackend(tmp_path)
    assert len(replay) == 2


def test_concurrent_writes(tmp_path):
    """Parallel writers produce one intact line per record."""

    store = ResultStore(tmp_path)

    def write(i):
        return store.write(_record(f"i{i:03d}", f"h{i}"), raw_response="r")

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(write, range(64)))
    lines = store.results_path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 64
    assert all(json.loads(line)["scene_id"] == "s1" for line in lines)
    assert len(store.responses_path.read_text(encoding="utf-8").splitlines()) == 64
    assert len(store.records()) == 64

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energywatch.errors import MalformedRecordError
from energywatch.store import Label, Record, RecordKind, RecordStore


def rec(t, device="d", kind=RecordKind.SLOT, run="run-1", **payload):
    return Record(kind, device, t, payload or {"n": t}, Label.NORMAL, run)


def test_read_your_writes(tmp_path):
    store = RecordStore(tmp_path / "s.jsonl", fsync=False)
    pos = store.append(rec(5.0))
    assert pos == 0 and store.get(0) == rec(5.0)
    assert store.query(device_id="d") == [rec(5.0)]


def test_reopen_preserves_records(tmp_path):
    path = tmp_path / "s.jsonl"
    store = RecordStore(path)
    for t in (1.0, 2.0, 3.0):
        store.append(rec(t))
    again = RecordStore(path)
    assert list(again) == list(store)
    assert path.read_text().count("\n") == 3


def test_query_filters_and_ordering(tmp_path):
    store = RecordStore(tmp_path / "s.jsonl", fsync=False)
    store.append(rec(3.0, x=1))
    store.append(rec(1.0, kind=RecordKind.EVENT))
    store.append(rec(3.0, x=2))
    store.append(rec(2.0, device="e"))
    store.append(rec(2.0, run="run-2"))
    got = store.query(device_id="d", kind=RecordKind.SLOT, start=2.0, end=3.0, run_id="run-1")
    assert [r.payload for r in got] == [{"x": 1}, {"x": 2}]
    assert [r.timestamp for r in store.query()] == [1.0, 2.0, 2.0, 3.0, 3.0]
    assert store.query(start=10.0) == []
    with pytest.raises(ValueError):
        store.query(start=3.0, end=1.0)


def test_torn_tail_is_dropped_and_truncated(tmp_path):
    path = tmp_path / "s.jsonl"
    store = RecordStore(path)
    store.append(rec(1.0))
    with open(path, "ab") as fh:
        fh.write(b'{"kind":"slot","dev')
    reopened = RecordStore(path)
    assert len(reopened) == 1
    reopened.append(rec(2.0))
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert [r.timestamp for r in RecordStore(path)] == [1.0, 2.0]


def test_corrupt_middle_line_is_an_error(tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text(rec(1.0).serialize() + "\nnot json\n")
    with pytest.raises(MalformedRecordError):
        RecordStore(path)


def test_run_ids(tmp_path):
    store = RecordStore(tmp_path / "s.jsonl", fsync=False)
    assert store.next_run_id() == "run-1"
    store.append(rec(1.0, run="run-1"))
    store.append(rec(1.0, run="custom"))
    assert store.run_ids() == ["run-1", "custom"]
    assert store.next_run_id() == "run-3"


def test_serialization_is_canonical():
    line = Record(RecordKind.EVENT, "d", 1, {"b": 1, "a": [1.5]}, Label.ABNORMAL, "r").serialize()
    assert line == '{"device_id":"d","kind":"event","label":"ABNORMAL","payload":{"a":[1.5],"b":1},"run_id":"r","timestamp":1.0}'
    with pytest.raises(ValueError):
        Record(RecordKind.EVENT, "d", 1, {"x": float("nan")}).serialize()


_json = st.recursive(
    st.none() | st.booleans() | st.integers(-(10**9), 10**9) | st.floats(allow_nan=False, allow_infinity=False) | st.text(max_size=8),
    lambda kids: st.lists(kids, max_size=4) | st.dictionaries(st.text(max_size=5), kids, max_size=4),
    max_leaves=10,
)


@settings(max_examples=100, deadline=None)
@given(
    st.sampled_from(list(RecordKind)),
    st.text(min_size=1, max_size=10),
    st.floats(0, 1e9, allow_nan=False),
    st.dictionaries(st.text(max_size=5), _json, max_size=4),
    st.sampled_from(list(Label)),
)
def test_record_round_trip(kind, device, t, payload, label):
    r = Record(kind, device, t, payload, label, "run-1")
    assert Record.deserialize(r.serialize()) == r

import collections
import socket
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energywatch.errors import MalformedRecordError, UnsupportedSourceError
from energywatch.ingest import (
    Kind,
    PacketEvent,
    Protocol,
    Scope,
    SourceConfig,
    SourceKind,
    classify_mqtt,
    detection_scope,
    filter_tcp_received,
    format_replay_line,
    open_source,
    parse_replay_line,
    write_replay,
)
from energywatch.sim import ScenarioConfig
from energywatch.windowing import SlotAccumulator


def replay(tmp_path, text, name="r.csv"):
    path = tmp_path / name
    path.write_text(text)
    return SourceConfig(SourceKind.REPLAY, str(path))


def test_empty_replay_is_empty_stream(tmp_path):
    assert list(open_source(replay(tmp_path, ""))) == []


def test_three_events_in_file_order(tmp_path):
    text = "# header\n1.0,a,TCP,RECEIVED,60\n1.5,a,UDP,RECEIVED,70\n\n2.0,b,OTHER,RECEIVED,80\n"
    events = list(open_source(replay(tmp_path, text)))
    assert events == [
        PacketEvent(1.0, "a", Protocol.TCP, Kind.RECEIVED, 60),
        PacketEvent(1.5, "a", Protocol.UDP, Kind.RECEIVED, 70),
        PacketEvent(2.0, "b", Protocol.OTHER, Kind.RECEIVED, 80),
    ]


def test_simulated_tcp_normal_seed_42_slot_counts():
    cfg = SourceConfig(SourceKind.SIMULATED, scenario=ScenarioConfig(seed=42, mix={"TCP": 1.0}))
    acc = SlotAccumulator("rpi-1")
    slots = []
    for ev in open_source(cfg):
        slots.extend(acc.accumulate(ev))
    slots.append(acc.flush())
    assert len(slots) == 10
    assert all(2000 <= s.counts[Scope.TCP] <= 6000 for s in slots)


def test_malformed_record_reports_line_number(tmp_path):
    text = "1.0,a,TCP,RECEIVED,60\n# c\n1.2,a,TCP,BOGUS,60\n"
    with pytest.raises(MalformedRecordError) as info:
        list(open_source(replay(tmp_path, text)))
    assert info.value.lineno == 3
    assert ":3" in str(info.value)


@pytest.mark.parametrize(
    "line",
    [
        "x,a,TCP,RECEIVED,1",
        "-1,a,TCP,RECEIVED,1",
        "1,a,SCTP,RECEIVED,1",
        "1,a,UDP,ACKNOWLEDGED,1",
        "1,a,TCP,RECEIVED,-5",
        "1,a,TCP,RECEIVED",
        "1,,TCP,RECEIVED,1",
        "nan,a,TCP,RECEIVED,1",
    ],
)
def test_bad_lines_rejected(line):
    with pytest.raises(MalformedRecordError):
        parse_replay_line(line, 7)


def test_out_of_order_within_device_rejected(tmp_path):
    text = "2.0,a,TCP,RECEIVED,60\n1.0,b,TCP,RECEIVED,60\n1.5,a,TCP,RECEIVED,60\n"
    with pytest.raises(MalformedRecordError) as info:
        list(open_source(replay(tmp_path, text)))
    assert info.value.lineno == 3


def test_device_filter(tmp_path):
    text = "1.0,a,TCP,RECEIVED,60\n1.0,b,TCP,RECEIVED,60\n"
    cfg = replay(tmp_path, text)
    cfg.device_filter = ["b"]
    assert [e.device_id for e in open_source(cfg)] == ["b"]


def test_missing_file_and_unsupported_kind(tmp_path):
    with pytest.raises(FileNotFoundError):
        open_source(SourceConfig(SourceKind.REPLAY, str(tmp_path / "nope.csv")))
    with pytest.raises(UnsupportedSourceError):
        open_source(SourceConfig("PCAP", "x"))


def test_classify_mqtt():
    deliver = PacketEvent(1.0, "d", Protocol.MQTT_PUB, mqtt_marker="deliver")
    assert classify_mqtt(deliver).protocol is Protocol.MQTT_SUB
    outbound = PacketEvent(1.0, "d", Protocol.MQTT_SUB, mqtt_marker="publish")
    assert classify_mqtt(outbound).protocol is Protocol.MQTT_PUB
    bare = PacketEvent(1.0, "d", Protocol.MQTT_SUB)
    assert classify_mqtt(bare).protocol is Protocol.OTHER


def test_replay_mqtt_markers():
    assert parse_replay_line("1,d,MQTT_SUB,RECEIVED,10").protocol is Protocol.MQTT_SUB
    assert parse_replay_line("1,d,MQTT_PUB,RECEIVED,10").protocol is Protocol.MQTT_PUB
    assert parse_replay_line("1,d,MQTT_SUB,RECEIVED,10,").protocol is Protocol.OTHER
    assert parse_replay_line("1,d,OTHER,RECEIVED,10,deliver").protocol is Protocol.MQTT_SUB
    assert parse_replay_line("1,d,MQTT_SUB,RECEIVED,10,suback").protocol is Protocol.MQTT_PUB


@pytest.mark.parametrize(
    "kind,expected", [(Kind.RECEIVED, True), (Kind.RETRANSMISSION, False), (Kind.ACKNOWLEDGED, False)]
)
def test_filter_tcp_received(kind, expected):
    assert filter_tcp_received(PacketEvent(0.0, "d", Protocol.TCP, kind)) is expected


def test_filter_tcp_received_needs_tcp():
    with pytest.raises(ValueError):
        filter_tcp_received(PacketEvent(0.0, "d", Protocol.UDP))


_protocol_kind = st.one_of(
    st.tuples(st.just(Protocol.TCP), st.sampled_from(list(Kind))),
    st.tuples(st.sampled_from([Protocol.UDP, Protocol.MQTT_SUB, Protocol.MQTT_PUB, Protocol.OTHER]), st.just(Kind.RECEIVED)),
)
_events = st.lists(
    st.tuples(
        st.integers(0, 10**9),
        st.sampled_from(["a", "b", "c"]),
        _protocol_kind,
        st.integers(0, 1500),
    ),
    max_size=60,
)


def _build(raw):
    events = []
    for us, dev, (proto, kind), size in sorted(raw, key=lambda r: r[0]):
        marker = {Protocol.MQTT_SUB: "deliver", Protocol.MQTT_PUB: "publish"}.get(proto)
        events.append(PacketEvent(us / 1e6, dev, proto, kind, size, marker))
    return events


@settings(max_examples=60, deadline=None)
@given(_events)
def test_replay_round_trip_preserves_multiset(tmp_path_factory, raw):
    events = _build(raw)
    path = tmp_path_factory.mktemp("rt") / "r.csv"
    write_replay(events, path)
    back = list(open_source(SourceConfig(SourceKind.REPLAY, str(path))))
    key = lambda e: (e.timestamp, e.device_id, e.protocol.value, e.kind.value, e.size, e.mqtt_marker)
    assert collections.Counter(map(key, back)) == collections.Counter(map(key, events))
    last = {}
    for e in back:
        assert e.timestamp >= last.get(e.device_id, 0.0)
        last[e.device_id] = e.timestamp


@settings(max_examples=60, deadline=None)
@given(_events)
def test_only_received_tcp_udp_and_mqtt_sub_are_counted(raw):
    events = [e for e in _build(raw) if e.device_id == "a"]
    acc = SlotAccumulator("a", slot_length=1e6)
    for e in events:
        acc.accumulate(e)
    slot = acc.close_slot()
    assert slot.counts[Scope.TCP] == sum(e.protocol is Protocol.TCP and e.kind is Kind.RECEIVED for e in events)
    assert slot.counts[Scope.UDP] == sum(e.protocol is Protocol.UDP for e in events)
    assert slot.counts[Scope.MQTT] == sum(e.protocol is Protocol.MQTT_SUB for e in events)
    assert sum(slot.diagnostics.values()) + slot.aggregate == len(events)


def test_format_line_round_trips_markers():
    for ev in (
        PacketEvent(1.25, "d", Protocol.MQTT_SUB, mqtt_marker="deliver"),
        PacketEvent(1.25, "d", Protocol.MQTT_PUB, mqtt_marker="puback"),
        PacketEvent(1.25, "d", Protocol.TCP, Kind.ACKNOWLEDGED, 40),
    ):
        assert parse_replay_line(format_replay_line(ev)) == ev
    assert detection_scope(PacketEvent(0.0, "d", Protocol.MQTT_PUB)) is None


def test_live_socket_source():
    server = socket.socket()
    server.bind(("127.0.0.1", 0))
    server.listen(1)
    port = server.getsockname()[1]

    def serve():
        conn, _ = server.accept()
        with conn:
            conn.sendall(b"0.5,d,TCP,RECEIVED,60\n0.7,d,UDP,RECEIVED,60\n")
        server.close()

    threading.Thread(target=serve, daemon=True).start()
    events = list(open_source(SourceConfig(SourceKind.LIVE, f"127.0.0.1:{port}")))
    assert [e.protocol for e in events] == [Protocol.TCP, Protocol.UDP]


def test_simulated_source_paced_by_time_compression():
    scenario = ScenarioConfig(seed=1, duration=180, mix={"UDP": 1.0}, time_compression=1800.0)
    start = time.monotonic()
    n = sum(1 for _ in open_source(SourceConfig(SourceKind.SIMULATED, scenario=scenario)))
    elapsed = time.monotonic() - start
    assert 1000 <= n
    # 180 virtual seconds at 1800x is 0.1 s of wall time
    assert elapsed >= 0.09

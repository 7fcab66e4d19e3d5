"""Packet sources and classification.

Every source (replay file, in-process simulator, live line feed) is turned
into the same thing: an iterator of :class:`PacketEvent` ordered by
timestamp within each device.

Replay format, one event per line::

    timestamp,device_id,protocol,kind,size[,mqtt_marker]

``protocol`` is one of TCP, UDP, MQTT_SUB, MQTT_PUB, OTHER and ``kind`` one
of RECEIVED, RETRANSMISSION, ACKNOWLEDGED (only TCP may use the latter two).
Lines starting with ``#`` are comments.  The optional sixth column carries
the MQTT marker seen in the payload; when it is absent an MQTT_SUB label
implies ``deliver`` and an MQTT_PUB label implies ``publish``.
"""

from __future__ import annotations

import logging
import math
import os
import socket
import sys
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

from .errors import ConfigurationError, MalformedRecordError, UnsupportedSourceError

log = logging.getLogger(__name__)


class Protocol(str, Enum):
    TCP = "TCP"
    UDP = "UDP"
    MQTT_SUB = "MQTT_SUB"
    MQTT_PUB = "MQTT_PUB"
    OTHER = "OTHER"


class Kind(str, Enum):
    RECEIVED = "RECEIVED"
    RETRANSMISSION = "RETRANSMISSION"
    ACKNOWLEDGED = "ACKNOWLEDGED"


class Scope(str, Enum):
    """Detection scope: one counted protocol or the sum of all of them."""

    TCP = "TCP"
    UDP = "UDP"
    MQTT = "MQTT"
    AGGREGATE = "AGGREGATE"


PROTOCOL_SCOPES = (Scope.TCP, Scope.UDP, Scope.MQTT)

# MQTT marker for an inbound PUBLISH delivered to one of the device's subscriptions
MQTT_DELIVER = "deliver"
MQTT_PUBLISH = "publish"
_MQTT_LABELS = {Protocol.MQTT_SUB: MQTT_DELIVER, Protocol.MQTT_PUB: MQTT_PUBLISH}


@dataclass(slots=True)
class PacketEvent:
    timestamp: float
    device_id: str
    protocol: Protocol
    kind: Kind = Kind.RECEIVED
    size: int = 0
    mqtt_marker: Optional[str] = None


class SourceKind(str, Enum):
    REPLAY = "REPLAY"
    SIMULATED = "SIMULATED"
    LIVE = "LIVE"


@dataclass
class SourceConfig:
    source_kind: SourceKind
    path_or_endpoint: str = ""
    device_filter: Optional[Sequence[str]] = None
    # only consulted for SIMULATED sources
    scenario: object = None

    def validate(self):
        kind = self.source_kind
        if not isinstance(kind, SourceKind):
            raise UnsupportedSourceError(f"unsupported source kind {kind!r}")
        if kind is SourceKind.REPLAY:
            if not os.path.isfile(self.path_or_endpoint):
                raise FileNotFoundError(f"replay file not found: {self.path_or_endpoint}")
            if not os.access(self.path_or_endpoint, os.R_OK):
                raise PermissionError(f"replay file not readable: {self.path_or_endpoint}")
        elif kind is SourceKind.SIMULATED and self.scenario is None:
            raise ConfigurationError("SIMULATED source needs a scenario")
        elif kind is SourceKind.LIVE and not self.path_or_endpoint:
            raise ConfigurationError("LIVE source needs '-' or host:port")


def detection_scope(event: PacketEvent) -> Optional[Scope]:
    """Scope an event is counted under, or None for diagnostics-only traffic."""
    p = event.protocol
    if p is Protocol.TCP:
        return Scope.TCP if event.kind is Kind.RECEIVED else None
    if p is Protocol.UDP:
        return Scope.UDP
    if p is Protocol.MQTT_SUB:
        return Scope.MQTT
    return None


def diagnostic_key(event: PacketEvent) -> str:
    if event.protocol is Protocol.TCP:
        return f"TCP_{event.kind.value}"
    return event.protocol.value


def filter_tcp_received(event: PacketEvent) -> bool:
    if event.protocol is not Protocol.TCP:
        raise ValueError(f"expected a TCP event, got {event.protocol.value}")
    return event.kind is Kind.RECEIVED


def classify_mqtt(event: PacketEvent) -> PacketEvent:
    """Relabel an MQTT-bearing event from its payload marker.

    Only inbound application messages delivered to a subscription become
    MQTT_SUB (the quantity that drives detection).  Any other MQTT marker is
    MQTT_PUB; a record with no marker at all is OTHER.
    """
    marker = event.mqtt_marker
    if not marker:
        label = Protocol.OTHER
    elif marker.lower() == MQTT_DELIVER:
        label = Protocol.MQTT_SUB
    else:
        label = Protocol.MQTT_PUB
    if label is event.protocol:
        return event
    return replace(event, protocol=label)


# -- replay format ---------------------------------------------------------

_PROTOCOLS = {p.value: p for p in Protocol}
_KINDS = {k.value: k for k in Kind}
_NO_MARKER = object()


def parse_replay_line(line: str, lineno: Optional[int] = None, source=None) -> Optional[PacketEvent]:
    """Parse one replay line; returns None for blanks and comments."""
    text = line.strip()
    if not text or text.startswith("#"):
        return None
    fields = [f.strip() for f in text.split(",")]
    if len(fields) not in (5, 6):
        raise MalformedRecordError(f"expected 5 or 6 fields, got {len(fields)}", lineno, source)
    ts_text, device, proto_text, kind_text, size_text = fields[:5]
    try:
        ts = float(ts_text)
    except ValueError:
        raise MalformedRecordError(f"bad timestamp {ts_text!r}", lineno, source) from None
    if not math.isfinite(ts) or ts < 0:
        raise MalformedRecordError(f"timestamp must be finite and >= 0, got {ts_text}", lineno, source)
    if not device:
        raise MalformedRecordError("empty device_id", lineno, source)
    proto = _PROTOCOLS.get(proto_text)
    if proto is None:
        raise MalformedRecordError(f"unknown protocol {proto_text!r}", lineno, source)
    kind = _KINDS.get(kind_text)
    if kind is None:
        raise MalformedRecordError(f"unknown kind {kind_text!r}", lineno, source)
    if proto is not Protocol.TCP and kind is not Kind.RECEIVED:
        raise MalformedRecordError(f"kind {kind_text} is only valid for TCP", lineno, source)
    try:
        size = int(size_text)
    except ValueError:
        raise MalformedRecordError(f"bad size {size_text!r}", lineno, source) from None
    if size < 0:
        raise MalformedRecordError("size must be >= 0", lineno, source)

    marker = fields[5] if len(fields) == 6 else _MQTT_LABELS.get(proto, _NO_MARKER)
    if marker is _NO_MARKER:
        return PacketEvent(ts, device, proto, kind, size)
    event = PacketEvent(ts, device, proto, kind, size, marker or None)
    return classify_mqtt(event)


def format_replay_line(event: PacketEvent) -> str:
    line = f"{event.timestamp:.6f},{event.device_id},{event.protocol.value},{event.kind.value},{event.size}"
    implied = _MQTT_LABELS.get(event.protocol)
    if event.mqtt_marker != implied and (event.mqtt_marker or implied):
        line += f",{event.mqtt_marker or ''}"
    return line


REPLAY_HEADER = "# timestamp,device_id,protocol,kind,size[,mqtt_marker]"


def write_replay(events: Iterable[PacketEvent], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(REPLAY_HEADER + "\n")
        for ev in events:
            fh.write(format_replay_line(ev))
            fh.write("\n")
            n += 1
    return n


def _ordered(lines: Iterable[str], device_filter, source) -> Iterator[PacketEvent]:
    wanted = set(device_filter) if device_filter else None
    last: dict[str, float] = {}
    for lineno, line in enumerate(lines, 1):
        event = parse_replay_line(line, lineno, source)
        if event is None:
            continue
        dev = event.device_id
        if wanted is not None and dev not in wanted:
            continue
        prev = last.get(dev)
        if prev is not None and event.timestamp < prev:
            raise MalformedRecordError(
                f"timestamp {event.timestamp} earlier than {prev} for device {dev}", lineno, source
            )
        last[dev] = event.timestamp
        yield event


def read_replay(path, device_filter=None) -> Iterator[PacketEvent]:
    with open(path, "r", encoding="utf-8") as fh:
        yield from _ordered(fh, device_filter, str(path))


def _live_lines(endpoint: str) -> Iterator[str]:
    if endpoint == "-":
        yield from sys.stdin
        return
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigurationError(f"LIVE endpoint must be '-' or host:port, got {endpoint!r}")
    with socket.create_connection((host, int(port))) as sock, sock.makefile("r", encoding="utf-8") as fh:
        yield from fh


def _paced(events: Iterator[PacketEvent], compression: float) -> Iterator[PacketEvent]:
    """Release events at virtual-time / compression wall-clock pace."""
    start = time.monotonic()
    for ev in events:
        delay = start + ev.timestamp / compression - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        yield ev


def open_source(config: SourceConfig) -> Iterator[PacketEvent]:
    config.validate()
    kind = config.source_kind
    if kind is SourceKind.REPLAY:
        return read_replay(config.path_or_endpoint, config.device_filter)
    if kind is SourceKind.LIVE:
        return _ordered(_live_lines(config.path_or_endpoint), config.device_filter, config.path_or_endpoint)
    if kind is SourceKind.SIMULATED:
        from .sim import iter_events

        scenario = config.scenario
        events = iter_events(scenario)
        if config.device_filter:
            wanted = set(config.device_filter)
            events = (e for e in events if e.device_id in wanted)
        if scenario.time_compression:
            events = _paced(events, scenario.time_compression)
        return events
    raise UnsupportedSourceError(f"unsupported source kind {kind!r}")

"""Alert delivery for detection events.

Every event is persisted; only ABNORMAL_REGISTERED, ATTACK_CONFIRMED and
TRAFFIC_ONLY_ANOMALY are pushed to sinks.  A failing sink is logged and
never raises into the detection loop.
"""

from __future__ import annotations

import json
import logging
import sys
import urllib.request
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

from .detector import DetectionEvent, EventKind
from .store import Label, Record, RecordKind, RecordStore

log = logging.getLogger(__name__)

ALERT_KINDS = frozenset({EventKind.ABNORMAL_REGISTERED, EventKind.ATTACK_CONFIRMED, EventKind.TRAFFIC_ONLY_ANOMALY})


def _num(value) -> str:
    if value is None:
        return "na"
    if float(value).is_integer():
        return str(int(value))
    return f"{value:.4f}".rstrip("0").rstrip(".")


def format_alert_line(event: DetectionEvent) -> str:
    return (
        f"ALERT {event.kind.value} device={event.device_id} scope={event.scope.value} "
        f"A={_num(event.average)} y={_num(event.bound)} energy={_num(event.energy)} t={_num(event.timestamp)}"
    )


def event_document(event: DetectionEvent) -> dict:
    doc = {"timestamp": event.timestamp, "device_id": event.device_id}
    doc.update(event.to_payload())
    return doc


class StreamSink:
    name = "stdout"

    def __init__(self, stream: Optional[TextIO] = None):
        self.stream = stream

    def send(self, event: DetectionEvent) -> None:
        out = self.stream or sys.stdout
        out.write(format_alert_line(event) + "\n")
        out.flush()


class WebhookSink:
    """POSTs each alert as one JSON object."""

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout
        self.name = f"webhook:{url}"

    def send(self, event: DetectionEvent) -> None:
        body = json.dumps(event_document(event), sort_keys=True).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"}, method="POST")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            if resp.status >= 300:
                raise OSError(f"webhook answered HTTP {resp.status}")


@dataclass
class Receipt:
    position: Optional[int]
    alerted: bool
    delivered: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def event_label(event: DetectionEvent) -> Label:
    if event.kind is EventKind.WINDOW_VERDICT:
        return Label(event.verdict.value) if event.verdict and event.verdict.value != "UNDECIDED" else Label.UNLABELED
    if event.kind is EventKind.COOLDOWN_STARTED:
        return Label.UNLABELED
    return Label.ABNORMAL


def emit_alert(
    event: DetectionEvent,
    sinks: Iterable = (),
    store: Optional[RecordStore] = None,
    run_id: str = "",
) -> Receipt:
    position = None
    if store is not None:
        record = Record(RecordKind.EVENT, event.device_id, event.timestamp, event.to_payload(), event_label(event), run_id)
        position = store.append(record)
    receipt = Receipt(position, event.kind in ALERT_KINDS)
    if not receipt.alerted:
        return receipt
    for sink in sinks:
        try:
            sink.send(event)
        except Exception as exc:  # a dead sink must not stop detection
            log.error("alert delivery to %s failed: %s", getattr(sink, "name", sink), exc)
            receipt.failures.append(getattr(sink, "name", repr(sink)))
        else:
            receipt.delivered.append(getattr(sink, "name", repr(sink)))
    return receipt

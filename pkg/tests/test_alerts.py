import io
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

from energywatch.alerts import StreamSink, WebhookSink, emit_alert, event_label, format_alert_line
from energywatch.detector import DetectionEvent, EventKind, Verdict
from energywatch.ingest import Scope
from energywatch.store import Label, RecordKind, RecordStore


def attack():
    return DetectionEvent(
        1260.0,
        "rpi-1",
        Scope.TCP,
        EventKind.ATTACK_CONFIRMED,
        slot_index=6,
        average=9123.5,
        bound=6000,
        energy=1.4876543,
        energy_threshold=1.42,
        counter=4,
    )


def test_alert_line_format():
    assert (
        format_alert_line(attack())
        == "ALERT ATTACK_CONFIRMED device=rpi-1 scope=TCP A=9123.5 y=6000 energy=1.4877 t=1260"
    )
    ev = DetectionEvent(0.0, "d", Scope.UDP, EventKind.TRAFFIC_ONLY_ANOMALY, average=7000.0, bound=6000.0)
    assert "energy=na" in format_alert_line(ev)


def test_event_labels():
    assert event_label(attack()) is Label.ABNORMAL
    assert event_label(DetectionEvent(0.0, "d", Scope.TCP, EventKind.COOLDOWN_STARTED)) is Label.UNLABELED
    normal = DetectionEvent(0.0, "d", Scope.TCP, EventKind.WINDOW_VERDICT, verdict=Verdict.NORMAL)
    assert event_label(normal) is Label.NORMAL


class Broken:
    name = "broken"

    def send(self, event):
        raise OSError("unreachable")


def test_emit_persists_even_when_sinks_fail(tmp_path):
    store = RecordStore(tmp_path / "s.jsonl", fsync=False)
    out = io.StringIO()
    receipt = emit_alert(attack(), [Broken(), StreamSink(out)], store, "run-1")
    assert receipt.position == 0
    assert receipt.failures == ["broken"] and receipt.delivered == ["stdout"]
    assert out.getvalue().startswith("ALERT ATTACK_CONFIRMED")
    [record] = store.query(kind=RecordKind.EVENT)
    assert record.payload["kind"] == "ATTACK_CONFIRMED" and record.label is Label.ABNORMAL


def test_cooldown_is_stored_but_not_alerted(tmp_path):
    store = RecordStore(tmp_path / "s.jsonl", fsync=False)
    out = io.StringIO()
    receipt = emit_alert(DetectionEvent(1.0, "d", Scope.TCP, EventKind.COOLDOWN_STARTED), [StreamSink(out)], store)
    assert not receipt.alerted and out.getvalue() == "" and len(store) == 1


def test_webhook_delivery():
    received = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers["Content-Length"])
            received.append(json.loads(self.rfile.read(length)))
            self.send_response(204)
            self.end_headers()

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.handle_request, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_port}/hook"
    receipt = emit_alert(attack(), [WebhookSink(url)])
    thread.join(5)
    server.server_close()
    assert receipt.failures == []
    assert received[0]["kind"] == "ATTACK_CONFIRMED" and received[0]["device_id"] == "rpi-1"


def test_webhook_offline_is_logged(caplog):
    receipt = emit_alert(attack(), [WebhookSink("http://127.0.0.1:9/none", timeout=0.5)])
    assert receipt.failures and "failed" in caplog.text

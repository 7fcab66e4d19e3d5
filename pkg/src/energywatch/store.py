"""Append-only record store backed by one newline-delimited JSON file.

Each line is one record serialized with sorted keys and compact separators,
so identical runs produce byte-identical files (see docs/store_schema.md).
Records are indexed in memory; positions are 0-based line numbers.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional

from .errors import MalformedRecordError

log = logging.getLogger(__name__)


class RecordKind(str, Enum):
    SLOT = "slot"
    ENERGY = "energy"
    BASELINE = "baseline"
    EVENT = "event"


class Label(str, Enum):
    NORMAL = "NORMAL"
    ABNORMAL = "ABNORMAL"
    UNLABELED = "UNLABELED"


@dataclass(frozen=True)
class Record:
    kind: RecordKind
    device_id: str
    timestamp: float
    payload: Mapping = field(default_factory=dict)
    label: Label = Label.UNLABELED
    run_id: str = ""

    def serialize(self) -> str:
        body = {
            "kind": self.kind.value,
            "device_id": self.device_id,
            "timestamp": float(self.timestamp),
            "label": self.label.value,
            "run_id": self.run_id,
            "payload": self.payload,
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def deserialize(cls, line: str) -> "Record":
        data = json.loads(line)
        return cls(
            kind=RecordKind(data["kind"]),
            device_id=data["device_id"],
            timestamp=data["timestamp"],
            payload=data["payload"],
            label=Label(data["label"]),
            run_id=data["run_id"],
        )


class RecordStore:
    """Single-writer append-only store.

    Opening an existing file replays it into memory.  A torn last line (no
    trailing newline, e.g. after a crash mid-write) is dropped and truncated
    away before the next append.
    """

    def __init__(self, path, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._records: list[Record] = []
        self._valid_bytes = 0
        if self.path.exists():
            self._load()

    def _load(self):
        raw = self.path.read_bytes()
        end = raw.rfind(b"\n") + 1
        if end < len(raw):
            log.warning("%s: dropping %d bytes of incomplete trailing record", self.path, len(raw) - end)
        for lineno, line in enumerate(raw[:end].splitlines(), 1):
            try:
                self._records.append(Record.deserialize(line.decode("utf-8")))
            except (ValueError, KeyError) as exc:
                raise MalformedRecordError(f"corrupt store record: {exc}", lineno, str(self.path)) from None
        self._valid_bytes = end

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def append(self, record: Record) -> int:
        line = (record.serialize() + "\n").encode("utf-8")
        fd = os.open(self.path, os.O_WRONLY | os.O_CREAT, 0o644)
        try:
            size = os.fstat(fd).st_size
            if size != self._valid_bytes:
                os.ftruncate(fd, self._valid_bytes)
            os.lseek(fd, self._valid_bytes, os.SEEK_SET)
            try:
                written = os.write(fd, line)
                if written != len(line):
                    raise OSError(f"short write to {self.path}")
                if self.fsync:
                    os.fsync(fd)
            except OSError:
                os.ftruncate(fd, self._valid_bytes)
                raise
        finally:
            os.close(fd)
        self._valid_bytes += len(line)
        self._records.append(record)
        return len(self._records) - 1

    def get(self, position: int) -> Record:
        return self._records[position]

    def query(
        self,
        device_id: Optional[str] = None,
        kind: Optional[RecordKind] = None,
        start: Optional[float] = None,
        end: Optional[float] = None,
        run_id: Optional[str] = None,
    ) -> list:
        """Records matching every given filter, ordered by (timestamp, position).

        The time range is inclusive on both ends.
        """
        if start is not None and end is not None and start > end:
            raise ValueError(f"inverted range: start {start} > end {end}")
        hits = []
        for pos, rec in enumerate(self._records):
            if device_id is not None and rec.device_id != device_id:
                continue
            if kind is not None and rec.kind is not kind:
                continue
            if run_id is not None and rec.run_id != run_id:
                continue
            if start is not None and rec.timestamp < start:
                continue
            if end is not None and rec.timestamp > end:
                continue
            hits.append((rec.timestamp, pos, rec))
        hits.sort(key=lambda h: (h[0], h[1]))
        return [h[2] for h in hits]

    def run_ids(self) -> list:
        seen = {}
        for rec in self._records:
            seen.setdefault(rec.run_id, None)
        return list(seen)

    def next_run_id(self) -> str:
        """Deterministic fresh id: run-1, run-2, ... in append order."""
        taken = set(self.run_ids())
        n = len(taken) + 1
        while f"run-{n}" in taken:
            n += 1
        return f"run-{n}"

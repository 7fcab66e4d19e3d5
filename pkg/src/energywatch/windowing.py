"""Time slotting of packet events.

Events are counted into fixed samples (5 s), samples roll up into slots
(180 s) and slots into windows (10 slots, i.e. 30 minutes).  Slots are
aligned to the stream epoch, so slot ``n`` always covers
``[n * slot_length, (n + 1) * slot_length)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .baseline import BaselineProfile, default_profile
from .errors import ConfigurationError, InvalidBaselineError, MalformedRecordError
from .ingest import PROTOCOL_SCOPES, PacketEvent, Scope, detection_scope, diagnostic_key

SAMPLE_SECS = 5.0
SLOT_SECS = 180.0
WINDOW_SLOTS = 10


def normalize_rate(pkt, min_pkt, max_pkt) -> float:
    """Min-max map of a packet count onto [0, 1], clamped outside the extrema."""
    if not max_pkt > min_pkt:
        raise InvalidBaselineError(f"max_pkt ({max_pkt}) must exceed min_pkt ({min_pkt})")
    k = (pkt - min_pkt) / (max_pkt - min_pkt)
    if k < 0:
        return 0.0
    if k > 1:
        return 1.0
    return float(k)


@dataclass(frozen=True)
class SlotMetrics:
    device_id: str
    slot_index: int  # position within its window
    slot_start: float
    slot_length: float
    counts: Mapping[Scope, int]
    normalized: Mapping[Scope, float]
    sample_counts: Mapping[Scope, tuple]
    window_index: int = 0
    sample_length: float = SAMPLE_SECS
    diagnostics: Mapping[str, int] = field(default_factory=dict)

    @property
    def aggregate(self) -> int:
        return sum(self.counts[s] for s in PROTOCOL_SCOPES)

    @property
    def slot_end(self) -> float:
        return self.slot_start + self.slot_length

    @property
    def global_index(self) -> int:
        return int(round(self.slot_start / self.slot_length))

    def count(self, scope: Scope) -> int:
        if scope is Scope.AGGREGATE:
            return self.aggregate
        return self.counts[scope]

    def to_payload(self) -> dict:
        return {
            "slot_index": self.slot_index,
            "window_index": self.window_index,
            "global_index": self.global_index,
            "slot_start": self.slot_start,
            "slot_length": self.slot_length,
            "sample_length": self.sample_length,
            "counts": {s.value: self.counts[s] for s in PROTOCOL_SCOPES},
            "aggregate": self.aggregate,
            "normalized": {s.value: v for s, v in sorted(self.normalized.items(), key=lambda kv: kv[0].value)},
            "sample_counts": {s.value: list(self.sample_counts[s]) for s in PROTOCOL_SCOPES},
            "diagnostics": dict(sorted(self.diagnostics.items())),
        }

    @classmethod
    def from_payload(cls, device_id: str, data: Mapping) -> "SlotMetrics":
        return cls(
            device_id=device_id,
            slot_index=data["slot_index"],
            slot_start=data["slot_start"],
            slot_length=data["slot_length"],
            counts={Scope(k): v for k, v in data["counts"].items()},
            normalized={Scope(k): v for k, v in data["normalized"].items()},
            sample_counts={Scope(k): tuple(v) for k, v in data["sample_counts"].items()},
            window_index=data["window_index"],
            sample_length=data["sample_length"],
            diagnostics=dict(data["diagnostics"]),
        )


class SlotAccumulator:
    """Per-device counter for the currently open slot.

    ``accumulate`` returns the slots that were closed because the event fell
    past the open slot's end (several if the stream skipped whole slots;
    skipped slots come back zero-filled).
    """

    def __init__(
        self,
        device_id: str,
        slot_length: float = SLOT_SECS,
        sample_length: float = SAMPLE_SECS,
        window_slots: int = WINDOW_SLOTS,
        profile: Optional[BaselineProfile] = None,
    ):
        n = slot_length / sample_length
        if slot_length <= 0 or sample_length <= 0 or abs(n - round(n)) > 1e-9:
            raise ConfigurationError("slot_length must be a positive multiple of sample_length")
        if window_slots < 1:
            raise ConfigurationError("window_slots must be >= 1")
        self.device_id = device_id
        self.slot_length = float(slot_length)
        self.sample_length = float(sample_length)
        self.window_slots = window_slots
        self.n_samples = int(round(n))
        self.profile = profile or default_profile(device_id)
        self._index = 0
        self._open(0)

    def _open(self, index: int):
        self._index = index
        self._slot_start = index * self.slot_length
        self._slot_end = self._slot_start + self.slot_length
        self._sample_floor = self._slot_start
        self._samples = {s: [0] * self.n_samples for s in PROTOCOL_SCOPES}
        self._diag: dict[str, int] = {}

    @property
    def slot_start(self) -> float:
        return self._slot_start

    @property
    def slot_end(self) -> float:
        return self._slot_end

    @property
    def open_index(self) -> int:
        return self._index

    def accumulate(self, event: PacketEvent, clock: Optional[float] = None) -> list:
        t = event.timestamp
        closed = self.advance(t) if t >= self._slot_end else []
        if t < self._sample_floor:
            raise MalformedRecordError(
                f"event at {t} precedes open sample starting {self._sample_floor} (device {self.device_id})"
            )
        scope = detection_scope(event)
        if scope is None:
            key = diagnostic_key(event)
            self._diag[key] = self._diag.get(key, 0) + 1
        else:
            idx = int((t - self._slot_start) // self.sample_length)
            if idx >= self.n_samples:  # float edge right below the slot end
                idx = self.n_samples - 1
            self._samples[scope][idx] += 1
            self._sample_floor = self._slot_start + idx * self.sample_length
        if clock is not None and clock > t:
            closed.extend(self.advance(clock))
        return closed

    def advance(self, clock: float) -> list:
        """Close every slot that ends at or before ``clock``."""
        closed = []
        while clock >= self._slot_end:
            closed.append(self.close_slot())
            self._open(self._index + 1)
        return closed

    def close_slot(self) -> SlotMetrics:
        """Snapshot the open slot (trailing samples are already zero)."""
        counts = {s: sum(v) for s, v in self._samples.items()}
        bands = self.profile.bands
        normalized = {}
        for scope in Scope:
            band = bands.get(scope)
            if band is None:
                continue
            c = sum(counts.values()) if scope is Scope.AGGREGATE else counts[scope]
            normalized[scope] = normalize_rate(c, band.min_pkt, band.max_pkt)
        return SlotMetrics(
            device_id=self.device_id,
            slot_index=self._index % self.window_slots,
            slot_start=self._slot_start,
            slot_length=self.slot_length,
            counts=counts,
            normalized=normalized,
            sample_counts={s: tuple(v) for s, v in self._samples.items()},
            window_index=self._index // self.window_slots,
            sample_length=self.sample_length,
            diagnostics=dict(self._diag),
        )

    def flush(self) -> SlotMetrics:
        """Close the open slot at end of stream and open the next one."""
        slot = self.close_slot()
        self._open(self._index + 1)
        return slot

    def merge(self, other: "SlotAccumulator") -> None:
        """Fold another accumulator's open slot (same slot, same device) into this one."""
        if other._index != self._index or other.device_id != self.device_id:
            raise ValueError("can only merge accumulators on the same open slot")
        for scope, values in other._samples.items():
            mine = self._samples[scope]
            for i, v in enumerate(values):
                mine[i] += v
        for key, v in other._diag.items():
            self._diag[key] = self._diag.get(key, 0) + v
        self._sample_floor = max(self._sample_floor, other._sample_floor)


def window_average(slots: Sequence[SlotMetrics], scope: Scope) -> float:
    """Mean packets per slot (A) over the given slots."""
    if not slots:
        raise ValueError("window_average needs at least one slot")
    return sum(s.count(scope) for s in slots) / len(slots)


@dataclass
class WindowSummary:
    device_id: str
    window_start: float
    slots: list  # slots that were evaluated (not suppressed)
    mean_count: dict
    verdict: object = None
    suppressed: tuple = ()
    window_index: int = 0

    @classmethod
    def build(cls, device_id, window_index, window_start, slots, suppressed=()):
        mean = {s: window_average(slots, s) for s in Scope} if slots else {}
        return cls(device_id, window_start, list(slots), mean, None, tuple(suppressed), window_index)

"""Energy sensor ingestion and per-slot integration.

Sensor lines are ``timestamp,voltage,current,power`` in seconds, volts,
amperes and watts, nominally one per second.  A slot's energy is the
left-rectangle integral of power over the sample train; the quantity
compared against the energy threshold is the mean energy per sample.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .errors import InvalidBaselineError, MalformedRecordError

log = logging.getLogger(__name__)

SAMPLE_SPACING = 1.0
# a hole longer than this many nominal spacings flags the slot
GAP_FACTOR = 5
CONSISTENCY_TOLERANCE = 0.10


@dataclass(frozen=True)
class EnergySample:
    timestamp: float
    voltage: Optional[float]
    current: Optional[float]
    power: float


@dataclass(frozen=True)
class EnergySlot:
    device_id: str
    slot_index: int  # global slot index
    joules: float
    mean_sample_joules: float
    normalized: float = 0.0
    sample_count: int = 0
    data_gap: bool = False

    def to_payload(self) -> dict:
        return {
            "slot_index": self.slot_index,
            "joules": self.joules,
            "mean_sample_joules": self.mean_sample_joules,
            "normalized": self.normalized,
            "sample_count": self.sample_count,
            "data_gap": self.data_gap,
        }

    @classmethod
    def from_payload(cls, device_id: str, data) -> "EnergySlot":
        return cls(device_id, **data)


def _field(text: str, name: str, lineno, source) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        raise MalformedRecordError(f"bad {name} {text!r}", lineno, source) from None
    if not math.isfinite(value):
        raise MalformedRecordError(f"{name} must be finite", lineno, source)
    return value


def parse_sensor_line(text: str, lineno: Optional[int] = None, source=None) -> EnergySample:
    parts = text.strip().split(",")
    if len(parts) != 4:
        raise MalformedRecordError(f"expected 4 fields, got {len(parts)}", lineno, source)
    ts = _field(parts[0], "timestamp", lineno, source)
    if ts is None or ts < 0:
        raise MalformedRecordError("timestamp missing or negative", lineno, source)
    volts = _field(parts[1], "voltage", lineno, source)
    amps = _field(parts[2], "current", lineno, source)
    watts = _field(parts[3], "power", lineno, source)
    if watts is None:
        if volts is None or amps is None:
            raise MalformedRecordError("power missing and cannot be rebuilt from voltage*current", lineno, source)
        watts = volts * amps
    if watts < 0:
        raise MalformedRecordError(f"negative power {watts}", lineno, source)
    if volts is not None and amps is not None and watts > 0:
        if abs(watts - volts * amps) > CONSISTENCY_TOLERANCE * watts:
            log.warning("sensor line %s: power %.4f W disagrees with V*I %.4f W", lineno, watts, volts * amps)
    return EnergySample(ts, volts, amps, watts)


def format_sensor_line(sample: EnergySample) -> str:
    v = "" if sample.voltage is None else f"{sample.voltage:.3f}"
    i = "" if sample.current is None else f"{sample.current:.6f}"
    return f"{sample.timestamp:.3f},{v},{i},{sample.power:.6f}"


SENSOR_HEADER = "# timestamp,voltage,current,power"


def read_sensor(path) -> Iterator[EnergySample]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield parse_sensor_line(line, lineno, str(path))


def write_sensor(samples: Iterable[EnergySample], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SENSOR_HEADER + "\n")
        for s in samples:
            fh.write(format_sensor_line(s) + "\n")
            n += 1
    return n


def normalize_energy(e, min_e, max_e) -> float:
    if not max_e > min_e:
        raise InvalidBaselineError(f"max_e ({max_e}) must exceed min_e ({min_e})")
    k = (e - min_e) / (max_e - min_e)
    return 0.0 if k < 0 else 1.0 if k > 1 else float(k)


def integrate_slot(
    samples: Sequence[EnergySample],
    slot_length: float = 180.0,
    *,
    spacing: float = SAMPLE_SPACING,
    slot_start: Optional[float] = None,
    device_id: str = "",
    slot_index: int = 0,
    extrema: Optional[tuple] = None,
) -> EnergySlot:
    """Integrate one slot's samples into joules.

    Each sample's power is held until the next sample; the last one is held
    for one nominal spacing.  Holes longer than ``GAP_FACTOR`` spacings
    (including the lead-in from ``slot_start`` and the tail to the slot end,
    when ``slot_start`` is known) set ``data_gap``.
    """
    if not samples:
        return EnergySlot(device_id, slot_index, 0.0, 0.0, 0.0, 0, True)
    limit = GAP_FACTOR * spacing
    joules = 0.0
    gap = False
    last = len(samples) - 1
    for i, s in enumerate(samples):
        dt = samples[i + 1].timestamp - s.timestamp if i < last else spacing
        if dt < 0:
            raise MalformedRecordError(f"sensor samples out of order at t={s.timestamp}")
        if dt > limit:
            gap = True
        joules += s.power * dt
    if slot_start is not None:
        if samples[0].timestamp - slot_start > limit:
            gap = True
        if slot_start + slot_length - samples[-1].timestamp > limit:
            gap = True
    mean = joules / len(samples)
    norm = normalize_energy(mean, *extrema) if extrema else 0.0
    return EnergySlot(device_id, slot_index, joules, mean, norm, len(samples), gap)


class EnergyAccumulator:
    """Buckets a device's samples by epoch-aligned slot."""

    def __init__(self, device_id: str, slot_length: float = 180.0, spacing: float = SAMPLE_SPACING, extrema=None):
        self.device_id = device_id
        self.slot_length = slot_length
        self.spacing = spacing
        self.extrema = extrema
        self._slots: dict[int, list] = {}
        self._last_ts = -math.inf

    def add(self, sample: EnergySample) -> None:
        if sample.timestamp < self._last_ts:
            raise MalformedRecordError(f"sensor timestamp {sample.timestamp} goes backwards")
        self._last_ts = sample.timestamp
        idx = int(sample.timestamp // self.slot_length)
        self._slots.setdefault(idx, []).append(sample)

    def extend(self, samples: Iterable[EnergySample]) -> "EnergyAccumulator":
        for s in samples:
            self.add(s)
        return self

    def __len__(self):
        return len(self._slots)

    def slot(self, index: int) -> EnergySlot:
        return integrate_slot(
            self._slots.get(index, []),
            self.slot_length,
            spacing=self.spacing,
            slot_start=index * self.slot_length,
            device_id=self.device_id,
            slot_index=index,
            extrema=self.extrema,
        )

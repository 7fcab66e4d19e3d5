"""End-to-end monitoring loop for one or more devices."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .alerts import emit_alert
from .baseline import WILDCARD, ProfileBook
from .detector import COUNTER_LIMIT, Detector, EventKind, Verdict
from .energy import SAMPLE_SPACING, EnergyAccumulator
from .ingest import PacketEvent, Scope
from .store import Label, Record, RecordKind, RecordStore
from .windowing import SAMPLE_SECS, SLOT_SECS, WINDOW_SLOTS, SlotAccumulator

log = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_TRAFFIC_ONLY = 2
EXIT_ATTACK = 3


@dataclass
class MonitorConfig:
    slot_length: float = SLOT_SECS
    sample_length: float = SAMPLE_SECS
    window_slots: int = WINDOW_SLOTS
    counter_limit: int = COUNTER_LIMIT
    cooldown_length: Optional[float] = None
    scopes: Sequence[Scope] = tuple(Scope)
    energy_spacing: float = SAMPLE_SPACING


@dataclass
class RunResult:
    events: list = field(default_factory=list)
    slots: list = field(default_factory=list)  # (SlotMetrics, label, suppressed scopes)
    energy: dict = field(default_factory=dict)  # (device, global index) -> EnergySlot

    @property
    def detection_events(self) -> list:
        return [e for e in self.events if e.kind is not EventKind.WINDOW_VERDICT]

    @property
    def exit_code(self) -> int:
        kinds = {e.kind for e in self.events}
        if EventKind.ATTACK_CONFIRMED in kinds:
            return EXIT_ATTACK
        if EventKind.TRAFFIC_ONLY_ANOMALY in kinds:
            return EXIT_TRAFFIC_ONLY
        return EXIT_CLEAN


class _Device:
    def __init__(self, device_id, profile, config: MonitorConfig):
        self.acc = SlotAccumulator(device_id, config.slot_length, config.sample_length, config.window_slots, profile)
        self.detector = Detector(
            profile,
            config.scopes,
            counter_limit=config.counter_limit,
            cooldown_length=config.cooldown_length,
            window_slots=config.window_slots,
        )


class Monitor:
    """Feeds packet events through slotting and detection.

    Energy samples must be registered (``add_energy``) before the packet
    stream reaches the slots they belong to.  Every slot, energy footprint
    and event is appended to ``store`` when one is given.
    """

    def __init__(
        self,
        profiles: Optional[ProfileBook] = None,
        config: Optional[MonitorConfig] = None,
        store: Optional[RecordStore] = None,
        run_id: str = "",
        sinks: Iterable = (),
    ):
        self.profiles = profiles or ProfileBook()
        self.config = config or MonitorConfig()
        self.store = store
        self.run_id = run_id
        self.sinks = list(sinks)
        self.result = RunResult()
        self._devices: dict[str, _Device] = {}
        self._energy: dict[str, EnergyAccumulator] = {}

    def _device(self, device_id: str) -> _Device:
        dev = self._devices.get(device_id)
        if dev is None:
            profile = self.profiles.get(device_id)
            dev = _Device(device_id, profile, self.config)
            self._devices[device_id] = dev
            self._persist(Record(RecordKind.BASELINE, device_id, 0.0, profile.to_dict(), Label.UNLABELED, self.run_id))
        return dev

    def add_energy(self, device_id: str, samples: Iterable) -> None:
        acc = self._energy.get(device_id)
        if acc is None:
            acc = EnergyAccumulator(device_id, self.config.slot_length, self.config.energy_spacing)
            self._energy[device_id] = acc
        acc.extend(samples)

    def _energy_for(self, device_id: str, index: int, profile):
        acc = self._energy.get(device_id) or self._energy.get(WILDCARD)
        if acc is None:
            return None
        acc.extrema = (profile.energy_min, profile.energy_max)
        slot = acc.slot(index)
        if acc.device_id != device_id:
            slot = replace(slot, device_id=device_id)
        return slot

    def _persist(self, record: Record) -> None:
        if self.store is not None:
            self.store.append(record)

    def feed(self, event: PacketEvent) -> None:
        dev = self._devices.get(event.device_id) or self._device(event.device_id)
        closed = dev.acc.accumulate(event)
        if closed:
            for slot in closed:
                self._handle_slot(dev, slot)

    def feed_all(self, events: Iterable[PacketEvent]) -> None:
        for ev in events:
            self.feed(ev)

    def advance(self, clock: float) -> None:
        """Close every slot that ended before ``clock`` on all devices."""
        for dev in self._devices.values():
            for slot in dev.acc.advance(clock):
                self._handle_slot(dev, slot)

    def _handle_slot(self, dev: _Device, slot) -> None:
        det = dev.detector
        energy = self._energy_for(slot.device_id, slot.global_index, det.profile)
        suppressed = det.suppressed_scopes(slot)
        label = det.label_slot(slot)
        events = det.process(slot, energy)

        payload = slot.to_payload()
        payload["suppressed"] = [s.value for s in suppressed]
        lab = Label.ABNORMAL if label is Verdict.ABNORMAL else Label.NORMAL
        self._persist(Record(RecordKind.SLOT, slot.device_id, slot.slot_start, payload, lab, self.run_id))
        if energy is not None:
            self.result.energy[(slot.device_id, slot.global_index)] = energy
            self._persist(Record(RecordKind.ENERGY, slot.device_id, slot.slot_start, energy.to_payload(), lab, self.run_id))
        self.result.slots.append((slot, label, suppressed))
        self._emit(events)

    def _emit(self, events) -> None:
        for ev in events:
            emit_alert(ev, self.sinks, self.store, self.run_id)
            self.result.events.append(ev)

    def finish(self, until: Optional[float] = None) -> RunResult:
        """Close the open slot of every device (or every slot up to ``until``)."""
        for dev in self._devices.values():
            if until is not None:
                for slot in dev.acc.advance(until):
                    self._handle_slot(dev, slot)
            else:
                self._handle_slot(dev, dev.acc.flush())
            self._emit(dev.detector.finish())
        return self.result

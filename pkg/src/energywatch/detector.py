"""Cooldown-counter detection of energy-consumption attacks.

Per closed slot and per scope the running window average ``A`` is compared
with the profile bound ``y``:

* ``A <= y``: keep monitoring.
* ``A > y``: stop listening for one cooldown (the next slot is skipped) and
  bump the counter.  When the counter exceeds the limit (3) the device is
  registered abnormal and the slot's energy footprint decides between a
  confirmed attack and a traffic-only anomaly.

The counter is only cleared by a full window judged NORMAL or by an
operator acknowledgment.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Optional

from .baseline import BaselineProfile, threshold_for
from .energy import EnergySlot
from .errors import ConfigurationError
from .ingest import Scope
from .windowing import WINDOW_SLOTS, SlotMetrics, WindowSummary

COUNTER_LIMIT = 3


class Phase(str, Enum):
    MONITORING = "MONITORING"
    COOLDOWN = "COOLDOWN"
    REGISTERED_ABNORMAL = "REGISTERED_ABNORMAL"


class EventKind(str, Enum):
    COOLDOWN_STARTED = "COOLDOWN_STARTED"
    ABNORMAL_REGISTERED = "ABNORMAL_REGISTERED"
    ATTACK_CONFIRMED = "ATTACK_CONFIRMED"
    TRAFFIC_ONLY_ANOMALY = "TRAFFIC_ONLY_ANOMALY"
    WINDOW_VERDICT = "WINDOW_VERDICT"


class Verdict(str, Enum):
    NORMAL = "NORMAL"
    ABNORMAL = "ABNORMAL"
    UNDECIDED = "UNDECIDED"


@dataclass(frozen=True)
class DetectionState:
    device_id: str
    scope: Scope
    counter: int = 0
    cooldown_until: Optional[float] = None
    registered: bool = False

    def __post_init__(self):
        if self.counter < 0:
            raise ValueError("counter must be non-negative")

    def phase(self, now: float) -> Phase:
        if self.cooldown_until is not None and now < self.cooldown_until:
            return Phase.COOLDOWN
        if self.registered:
            return Phase.REGISTERED_ABNORMAL
        return Phase.MONITORING

    def in_cooldown(self, t: float) -> bool:
        return self.cooldown_until is not None and t < self.cooldown_until


@dataclass(frozen=True)
class DetectionEvent:
    timestamp: float
    device_id: str
    scope: Scope
    kind: EventKind
    slot_index: Optional[int] = None  # global slot index
    slot_counts: Optional[Mapping[str, int]] = None
    average: Optional[float] = None
    bound: Optional[float] = None
    energy: Optional[float] = None
    energy_threshold: Optional[float] = None
    counter: Optional[int] = None
    verdict: Optional[Verdict] = None
    note: Optional[str] = None

    def __post_init__(self):
        if self.kind is EventKind.ATTACK_CONFIRMED:
            if self.energy is None or self.energy_threshold is None or not self.energy > self.energy_threshold:
                raise ValueError("ATTACK_CONFIRMED needs energy evidence above the threshold")

    def to_payload(self) -> dict:
        out = {
            "kind": self.kind.value,
            "scope": self.scope.value,
            "slot_index": self.slot_index,
            "slot_counts": dict(self.slot_counts) if self.slot_counts is not None else None,
            "average": self.average,
            "bound": self.bound,
            "energy": self.energy,
            "energy_threshold": self.energy_threshold,
            "counter": self.counter,
            "verdict": self.verdict.value if self.verdict is not None else None,
            "note": self.note,
        }
        return out

    @classmethod
    def from_record(cls, timestamp: float, device_id: str, payload: Mapping) -> "DetectionEvent":
        return cls(
            timestamp=timestamp,
            device_id=device_id,
            scope=Scope(payload["scope"]),
            kind=EventKind(payload["kind"]),
            slot_index=payload.get("slot_index"),
            slot_counts=payload.get("slot_counts"),
            average=payload.get("average"),
            bound=payload.get("bound"),
            energy=payload.get("energy"),
            energy_threshold=payload.get("energy_threshold"),
            counter=payload.get("counter"),
            verdict=Verdict(payload["verdict"]) if payload.get("verdict") else None,
            note=payload.get("note"),
        )


def _slot_counts(slot: SlotMetrics) -> dict:
    out = {s.value: slot.counts[s] for s in (Scope.TCP, Scope.UDP, Scope.MQTT)}
    out[Scope.AGGREGATE.value] = slot.aggregate
    return out


def evaluate_slot(
    slot: SlotMetrics,
    profile: BaselineProfile,
    state: DetectionState,
    average: float,
    *,
    counter_limit: int = COUNTER_LIMIT,
    cooldown_length: Optional[float] = None,
) -> tuple[DetectionState, list]:
    """One step of the cooldown-counter rule at the close of ``slot``."""
    if slot.device_id != state.device_id:
        raise ConfigurationError(f"slot for {slot.device_id} fed to state of {state.device_id}")
    if state.in_cooldown(slot.slot_start):
        raise ValueError(f"slot at {slot.slot_start} falls inside the cooldown ending {state.cooldown_until}")
    y, _ = threshold_for(profile, state.scope)
    now = slot.slot_end
    if average <= y:
        return replace(state, cooldown_until=None, registered=False), []

    cooldown = slot.slot_length if cooldown_length is None else cooldown_length
    counter = state.counter + 1
    evidence = dict(
        device_id=state.device_id,
        scope=state.scope,
        slot_index=slot.global_index,
        slot_counts=_slot_counts(slot),
        average=average,
        bound=y,
        counter=counter,
    )
    events = [DetectionEvent(now, kind=EventKind.COOLDOWN_STARTED, **evidence)]
    newly_registered = counter > counter_limit and not state.registered
    if newly_registered:
        events.append(DetectionEvent(now, kind=EventKind.ABNORMAL_REGISTERED, **evidence))
    new_state = replace(
        state,
        counter=counter,
        cooldown_until=now + cooldown,
        registered=state.registered or newly_registered,
    )
    return new_state, events


def cross_check_energy(slot_energy: Optional[EnergySlot], profile: BaselineProfile) -> bool:
    """True when the slot's mean per-sample energy is strictly above threshold.

    Missing or gap-flagged energy never confirms.
    """
    if slot_energy is None or slot_energy.data_gap:
        return False
    return slot_energy.mean_sample_joules > profile.energy_threshold


def classify_window(window: WindowSummary, profile: BaselineProfile, scope: Scope = Scope.AGGREGATE) -> Verdict:
    if not window.slots:
        verdict = Verdict.UNDECIDED
    else:
        y, _ = threshold_for(profile, scope)
        verdict = Verdict.ABNORMAL if window.mean_count[scope] > y else Verdict.NORMAL
    window.verdict = verdict
    return verdict


def reset_counter(state: DetectionState) -> DetectionState:
    return replace(state, counter=0, cooldown_until=None, registered=False)


class Detector:
    """Runs one state machine per scope for a single device.

    Feed closed slots in order with :meth:`process`; call :meth:`finish` at
    end of stream to judge a trailing partial window.
    """

    def __init__(
        self,
        profile: BaselineProfile,
        scopes: Iterable[Scope] = tuple(Scope),
        *,
        counter_limit: int = COUNTER_LIMIT,
        cooldown_length: Optional[float] = None,
        window_slots: int = WINDOW_SLOTS,
    ):
        self.profile = profile
        self.device_id = profile.device_id
        self.scopes = tuple(scopes)
        for scope in self.scopes:
            profile.band(scope)
        self.counter_limit = counter_limit
        self.cooldown_length = cooldown_length
        self.window_slots = window_slots
        self.states = {s: DetectionState(self.device_id, s) for s in self.scopes}
        self._window_index: Optional[int] = None
        self._window_start = 0.0
        self._seen = 0
        self._slot_length = 0.0
        self._present: dict = {s: [] for s in self.scopes}
        self._suppressed: dict = {s: [] for s in self.scopes}
        self.windows: list = []

    def swap_profile(self, profile: BaselineProfile) -> None:
        for scope in self.scopes:
            profile.band(scope)
        self.profile = profile

    def label_slot(self, slot: SlotMetrics) -> Verdict:
        """Per-slot label: ABNORMAL when any watched scope's own count exceeds y."""
        for scope in self.scopes:
            if slot.count(scope) > self.profile.band(scope).normal_upper:
                return Verdict.ABNORMAL
        return Verdict.NORMAL

    def suppressed_scopes(self, slot: SlotMetrics) -> list:
        return [s for s in self.scopes if self.states[s].in_cooldown(slot.slot_start)]

    def process(self, slot: SlotMetrics, energy: Optional[EnergySlot] = None) -> list:
        if slot.device_id != self.device_id:
            raise ConfigurationError(f"detector for {self.device_id} got slot for {slot.device_id}")
        events = []
        if self._window_index is not None and slot.window_index != self._window_index:
            events.extend(self._close_window())
        if self._window_index is None:
            self._window_index = slot.window_index
            self._window_start = slot.slot_start - slot.slot_index * slot.slot_length
        self._seen += 1
        self._slot_length = slot.slot_length

        for scope in self.scopes:
            state = self.states[scope]
            if state.in_cooldown(slot.slot_start):
                self._suppressed[scope].append(slot.slot_index)
                continue
            present = self._present[scope]
            present.append(slot)
            avg = sum(s.count(scope) for s in present) / len(present)
            state, evs = evaluate_slot(
                slot,
                self.profile,
                state,
                avg,
                counter_limit=self.counter_limit,
                cooldown_length=self.cooldown_length,
            )
            self.states[scope] = state
            events.extend(evs)
            if any(e.kind is EventKind.ABNORMAL_REGISTERED for e in evs):
                events.append(self._energy_verdict(evs[-1], energy))

        if slot.slot_index == self.window_slots - 1:
            events.extend(self._close_window())
        return events

    def _energy_verdict(self, registered: DetectionEvent, energy: Optional[EnergySlot]) -> DetectionEvent:
        threshold = self.profile.energy_threshold
        if cross_check_energy(energy, self.profile):
            return replace(
                registered,
                kind=EventKind.ATTACK_CONFIRMED,
                energy=energy.mean_sample_joules,
                energy_threshold=threshold,
            )
        if energy is None:
            note, value = "no energy data", None
        elif energy.data_gap:
            note, value = "energy data gap", energy.mean_sample_joules
        else:
            note, value = "energy within normal range", energy.mean_sample_joules
        return replace(
            registered,
            kind=EventKind.TRAFFIC_ONLY_ANOMALY,
            energy=value,
            energy_threshold=threshold,
            note=note,
        )

    def _close_window(self) -> list:
        if self._window_index is None:
            return []
        full = self._seen == self.window_slots
        closes_at = self._window_start + self._seen * self._slot_length
        events = []
        for scope in self.scopes:
            window = WindowSummary.build(
                self.device_id,
                self._window_index,
                self._window_start,
                self._present[scope],
                self._suppressed[scope],
            )
            verdict = classify_window(window, self.profile, scope)
            self.windows.append((scope, window))
            events.append(
                DetectionEvent(
                    timestamp=closes_at,
                    device_id=self.device_id,
                    scope=scope,
                    kind=EventKind.WINDOW_VERDICT,
                    slot_index=self._window_index,
                    average=window.mean_count.get(scope),
                    bound=self.profile.band(scope).normal_upper,
                    counter=self.states[scope].counter,
                    verdict=verdict,
                    note=None if full else "partial window",
                )
            )
            if full and verdict is Verdict.NORMAL:
                self.states[scope] = reset_counter(self.states[scope])
        self._window_index = None
        self._seen = 0
        self._present = {s: [] for s in self.scopes}
        self._suppressed = {s: [] for s in self.scopes}
        return events

    def finish(self) -> list:
        return self._close_window()

    def acknowledge(self, scope: Optional[Scope] = None) -> None:
        """Operator acknowledgment: clear the counter for one or all scopes."""
        for s in [scope] if scope is not None else self.scopes:
            self.states[s] = reset_counter(self.states[s])

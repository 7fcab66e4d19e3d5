"""Normal-behaviour profiles.

A profile holds, per detection scope, the packet-count extrema used for
normalization and the raw-count bound ``normal_upper`` that the detector
compares the running slot average against.  Defaults come from the
published per-protocol table: 2000-6000 packets per 3-minute slot is
normal, more than 6000 is abnormal, and a mean per-second-sample energy
above 1.42 J corroborates an attack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Optional

from .errors import ConfigurationError, InsufficientDataError, InvalidBaselineError
from .ingest import Scope

DEFAULT_MIN_PKT = 2000
DEFAULT_MAX_PKT = 6000
AGGREGATE_MIN_PKT = 1500
DEFAULT_ENERGY_THRESHOLD = 1.42
DEFAULT_MARGIN = 0.10
# No idle measurements are published; idle bands are the active ones scaled down.
DEFAULT_IDLE_SCALE = 0.25
MIN_TRAINING_SLOTS = 3


class DeviceStatus(str, Enum):
    IDLE = "IDLE"
    ACTIVE = "ACTIVE"


class ProfileSource(str, Enum):
    BUILTIN = "BUILTIN"
    LEARNED = "LEARNED"


@dataclass(frozen=True)
class Band:
    min_pkt: float
    max_pkt: float
    normal_upper: float

    def __post_init__(self):
        if not self.max_pkt > self.min_pkt:
            raise InvalidBaselineError(f"band max {self.max_pkt} must exceed min {self.min_pkt}")
        if self.normal_upper < self.min_pkt:
            raise InvalidBaselineError(f"normal_upper {self.normal_upper} below min {self.min_pkt}")

    def scaled(self, factor: float) -> "Band":
        return Band(self.min_pkt * factor, self.max_pkt * factor, self.normal_upper * factor)


@dataclass(frozen=True)
class BaselineProfile:
    device_id: str
    status: DeviceStatus
    bands: Mapping[Scope, Band]
    energy_threshold: float = DEFAULT_ENERGY_THRESHOLD
    # extrema for energy normalization, in joules per one-second sample
    energy_min: float = 0.0
    energy_max: float = DEFAULT_ENERGY_THRESHOLD
    learned_at: float = 0.0
    source: ProfileSource = ProfileSource.BUILTIN

    def __post_init__(self):
        object.__setattr__(self, "bands", MappingProxyType(dict(self.bands)))
        if self.energy_threshold < 0:
            raise InvalidBaselineError("energy_threshold must be >= 0")
        if not self.energy_max > self.energy_min:
            raise InvalidBaselineError("energy_max must exceed energy_min")

    def band(self, scope: Scope) -> Band:
        try:
            return self.bands[scope]
        except KeyError:
            raise ConfigurationError(f"profile for {self.device_id} has no {scope} band") from None

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "status": self.status.value,
            "bands": {
                s.value: {"min_pkt": b.min_pkt, "max_pkt": b.max_pkt, "normal_upper": b.normal_upper}
                for s, b in sorted(self.bands.items(), key=lambda kv: kv[0].value)
            },
            "energy_threshold": self.energy_threshold,
            "energy_min": self.energy_min,
            "energy_max": self.energy_max,
            "learned_at": self.learned_at,
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "BaselineProfile":
        return cls(
            device_id=data["device_id"],
            status=DeviceStatus(data["status"]),
            bands={Scope(k): Band(**v) for k, v in data["bands"].items()},
            energy_threshold=data["energy_threshold"],
            energy_min=data.get("energy_min", 0.0),
            energy_max=data.get("energy_max", DEFAULT_ENERGY_THRESHOLD),
            learned_at=data.get("learned_at", 0.0),
            source=ProfileSource(data["source"]),
        )

    def with_overrides(self, energy_threshold: Optional[float] = None, normal_upper: Optional[float] = None):
        """Copy with the energy threshold and/or every scope's y replaced."""
        bands = dict(self.bands)
        if normal_upper is not None:
            bands = {s: Band(b.min_pkt, b.max_pkt, normal_upper) for s, b in bands.items()}
        return BaselineProfile(
            self.device_id,
            self.status,
            bands,
            self.energy_threshold if energy_threshold is None else energy_threshold,
            self.energy_min,
            self.energy_max,
            self.learned_at,
            self.source,
        )


def default_profile(
    device_id: str,
    status: DeviceStatus = DeviceStatus.ACTIVE,
    *,
    idle_scale: float = DEFAULT_IDLE_SCALE,
    energy_threshold: float = DEFAULT_ENERGY_THRESHOLD,
) -> BaselineProfile:
    per_protocol = Band(DEFAULT_MIN_PKT, DEFAULT_MAX_PKT, DEFAULT_MAX_PKT)
    bands = {
        Scope.TCP: per_protocol,
        Scope.UDP: per_protocol,
        Scope.MQTT: per_protocol,
        Scope.AGGREGATE: Band(AGGREGATE_MIN_PKT, DEFAULT_MAX_PKT, DEFAULT_MAX_PKT),
    }
    if status is DeviceStatus.IDLE:
        bands = {s: b.scaled(idle_scale) for s, b in bands.items()}
    return BaselineProfile(
        device_id,
        status,
        bands,
        energy_threshold=energy_threshold,
        energy_max=max(energy_threshold, 1e-9),
    )


def _slot_count(slot, scope: Scope) -> int:
    return slot.count(scope) if hasattr(slot, "count") else slot.counts[scope]


def learn_baseline(
    slots: Iterable,
    status: DeviceStatus = DeviceStatus.ACTIVE,
    *,
    margin: float = DEFAULT_MARGIN,
    device_id: Optional[str] = None,
    energy_slots: Iterable = (),
    energy_threshold: float = DEFAULT_ENERGY_THRESHOLD,
    min_slots: int = MIN_TRAINING_SLOTS,
) -> BaselineProfile:
    """Learn per-scope bands from attack-free slots.

    Band extrema are the observed min/max counts; ``normal_upper`` is the
    observed max widened by ``margin``.  A scope that never saw a packet
    keeps its default band.  Identical counts are widened by the margin; with
    zero margin they are an error.
    """
    slots = list(slots)
    if len(slots) < min_slots:
        raise InsufficientDataError(f"need at least {min_slots} normal slots, got {len(slots)}")
    if margin < 0:
        raise ConfigurationError("margin must be >= 0")
    if device_id is None:
        device_id = slots[0].device_id

    defaults = default_profile(device_id, status, energy_threshold=energy_threshold)
    bands = {}
    for scope in Scope:
        counts = [_slot_count(s, scope) for s in slots]
        lo, hi = min(counts), max(counts)
        if hi == 0:
            bands[scope] = defaults.bands[scope]
            continue
        upper = round(hi * (1 + margin), 6)
        if lo == hi:
            if upper == hi:
                raise InvalidBaselineError(f"{scope.value}: all training slots equal {hi} and margin is 0")
            hi = upper
        bands[scope] = Band(lo, hi, upper)

    energy_min, energy_max = defaults.energy_min, defaults.energy_max
    usable = [e.mean_sample_joules for e in energy_slots if not e.data_gap]
    if usable and max(usable) > min(usable):
        energy_min, energy_max = min(usable), max(usable)

    learned_at = max(s.slot_start + s.slot_length for s in slots)
    return BaselineProfile(
        device_id,
        status,
        bands,
        energy_threshold=energy_threshold,
        energy_min=energy_min,
        energy_max=energy_max,
        learned_at=learned_at,
        source=ProfileSource.LEARNED,
    )


def threshold_for(profile: BaselineProfile, scope) -> tuple[float, float]:
    """(normal_upper y, energy threshold) for one scope."""
    try:
        scope = Scope(scope)
    except ValueError:
        raise ConfigurationError(f"unknown scope {scope!r}") from None
    return profile.band(scope).normal_upper, profile.energy_threshold


# -- profile files ---------------------------------------------------------
# A profile file maps device ids to profiles; "*" applies to any other device.

WILDCARD = "*"


def save_profiles(profiles: Mapping[str, BaselineProfile], path) -> None:
    data = {"profiles": [profiles[k].to_dict() for k in sorted(profiles)]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_profiles(path) -> dict[str, BaselineProfile]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return {p["device_id"]: BaselineProfile.from_dict(p) for p in data["profiles"]}


@dataclass
class ProfileBook:
    """Looks up the active profile for a device, falling back to defaults."""

    profiles: dict = field(default_factory=dict)
    use_defaults: bool = True
    energy_threshold: Optional[float] = None

    def get(self, device_id: str) -> BaselineProfile:
        prof = self.profiles.get(device_id) or self.profiles.get(WILDCARD)
        if prof is None:
            if not self.use_defaults:
                raise ConfigurationError(
                    f"no baseline for device {device_id}; run 'energywatch learn' or pass --use-defaults"
                )
            prof = default_profile(device_id)
        if self.energy_threshold is not None and prof.energy_threshold != self.energy_threshold:
            prof = prof.with_overrides(energy_threshold=self.energy_threshold)
        return prof

    def swap(self, profile: BaselineProfile) -> None:
        self.profiles[profile.device_id] = profile

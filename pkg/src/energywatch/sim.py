"""Seeded traffic and energy generator.

Per-slot packet counts are drawn uniformly from the measured normal/attack
ranges and the packets are scattered uniformly (microsecond resolution)
inside their slot.  A scenario with a single counted protocol uses that
protocol's range; a mixed scenario draws the aggregate count and splits it
by the mix fractions.

Three independent RNG streams are derived from the seed (slot plan, packet
timing, sensor noise) so changing one part of the model does not reshuffle
the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional

import numpy as np

from .energy import EnergySample, write_sensor
from .errors import ConfigurationError
from .ingest import MQTT_DELIVER, MQTT_PUBLISH, Kind, PacketEvent, Protocol, detection_scope, write_replay

COUNTED = (Protocol.TCP, Protocol.UDP, Protocol.MQTT_SUB)

# inclusive per-slot count ranges
NORMAL_BANDS = {
    Protocol.TCP: (2000, 5000),
    Protocol.UDP: (1000, 3000),
    Protocol.MQTT_SUB: (2000, 5999),
}
ATTACK_BANDS = {
    Protocol.TCP: (7000, 12000),
    Protocol.UDP: (9000, 12500),
    Protocol.MQTT_SUB: (8000, 12000),
}
AGGREGATE_NORMAL = (1500, 6000)
AGGREGATE_ATTACK = (7000, 12500)

# diagnostics-only companions, as a fraction of the counted packets
TCP_ACK_FRACTION = 0.05
TCP_RETRANSMISSION_FRACTION = 0.01
MQTT_PUB_FRACTION = 0.05

NORMAL_MIX = {Protocol.TCP: 0.45, Protocol.UDP: 0.30, Protocol.MQTT_SUB: 0.20, Protocol.OTHER: 0.05}
ATTACK_MIX = {Protocol.TCP: 0.40, Protocol.MQTT_SUB: 0.40, Protocol.UDP: 0.20}

_US = 1_000_000
# event column codes
_EMITTED = (
    (Protocol.TCP, Kind.RECEIVED),
    (Protocol.UDP, Kind.RECEIVED),
    (Protocol.MQTT_SUB, Kind.RECEIVED),
    (Protocol.OTHER, Kind.RECEIVED),
    (Protocol.TCP, Kind.ACKNOWLEDGED),
    (Protocol.TCP, Kind.RETRANSMISSION),
    (Protocol.MQTT_PUB, Kind.RECEIVED),
)
_CODE = {pk: i for i, pk in enumerate(_EMITTED)}
_MARKERS = {Protocol.MQTT_SUB: MQTT_DELIVER, Protocol.MQTT_PUB: MQTT_PUBLISH}
_SIZES = {
    Protocol.TCP: (60, 1500),
    Protocol.UDP: (60, 1472),
    Protocol.MQTT_SUB: (20, 512),
    Protocol.MQTT_PUB: (20, 512),
    Protocol.OTHER: (42, 600),
}


class Regime(str, Enum):
    NORMAL = "NORMAL"
    ATTACK = "ATTACK"


@dataclass(frozen=True)
class EnergyModel:
    """Power = idle + per-packet joules * counted packets that second * (1 + noise).

    Defaults come from scripts/calibrate_energy.py: with the generator's
    ranges and +/-5 % noise, every normal slot averages at most ~1.410 J per
    sample and every attack slot at least ~1.430 J.
    """

    idle_watts: float = 1.0603
    per_packet_joules: float = 0.01
    noise: float = 0.05
    voltage: float = 5.0

    def __post_init__(self):
        for name in ("idle_watts", "per_packet_joules", "noise", "voltage"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"EnergyModel.{name} must be non-negative")
        if self.noise >= 1:
            raise ConfigurationError("EnergyModel.noise must be < 1")


def _as_protocol(p) -> Protocol:
    if isinstance(p, Protocol):
        return p
    key = str(p).upper()
    if key == "MQTT":
        return Protocol.MQTT_SUB
    return Protocol(key)


@dataclass
class ScenarioConfig:
    seed: int = 0
    duration: float = 1800.0
    slot_length: float = 180.0
    mix: Mapping = field(default_factory=lambda: {Protocol.TCP: 1.0})
    regimes: Mapping = field(default_factory=dict)
    onset: float = 0.0
    device_id: str = "rpi-1"
    time_compression: Optional[float] = None

    def __post_init__(self):
        self.mix = {_as_protocol(p): float(f) for p, f in self.mix.items()}
        self.regimes = {_as_protocol(p): Regime(r) for p, r in self.regimes.items()}
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if any(p is Protocol.MQTT_PUB for p in self.mix):
            raise ConfigurationError("MQTT_PUB traffic is generated implicitly; use MQTT_SUB in the mix")
        if any(f < 0 for f in self.mix.values()) or abs(sum(self.mix.values()) - 1.0) > 1e-9:
            raise ConfigurationError(f"mix fractions must be >= 0 and sum to 1, got {self.mix}")
        if not self.counted:
            raise ConfigurationError("mix needs at least one of TCP, UDP, MQTT_SUB")
        if self.slot_length <= 0 or self.duration <= 0:
            raise ConfigurationError("duration and slot_length must be positive")
        n = self.duration / self.slot_length
        if abs(n - round(n)) > 1e-9:
            raise ConfigurationError("duration must be a whole number of slots")
        if (self.slot_length * _US) % 1:
            raise ConfigurationError("slot_length must be a whole number of microseconds")
        if self.time_compression is not None and not self.time_compression > 0:
            raise ConfigurationError("time_compression must be positive")

    @property
    def counted(self) -> list:
        return [p for p in COUNTED if self.mix.get(p, 0) > 0]

    @property
    def n_slots(self) -> int:
        return int(round(self.duration / self.slot_length))

    def regime_at(self, slot_start: float) -> Regime:
        if slot_start < self.onset:
            return Regime.NORMAL
        if any(self.regimes.get(p) is Regime.ATTACK for p in self.counted):
            return Regime.ATTACK
        return Regime.NORMAL


@dataclass(frozen=True)
class SlotPlan:
    index: int
    regime: Regime
    counts: Mapping  # protocol -> packets, counted protocols plus OTHER


def _split(total: int, weights: Mapping) -> dict:
    """Largest-remainder split of an integer total by weights."""
    wsum = sum(weights.values())
    raw = {p: total * w / wsum for p, w in weights.items()}
    out = {p: int(math.floor(v)) for p, v in raw.items()}
    short = total - sum(out.values())
    for p in sorted(raw, key=lambda p: (-(raw[p] - out[p]), p.value))[:short]:
        out[p] += 1
    return out


def slot_plan(config: ScenarioConfig) -> list:
    rng = np.random.default_rng([config.seed, 0])
    counted = config.counted
    weights = {p: config.mix[p] for p in counted}
    other_frac = config.mix.get(Protocol.OTHER, 0.0)
    plans = []
    for i in range(config.n_slots):
        regime = config.regime_at(i * config.slot_length)
        if len(counted) == 1:
            proto = counted[0]
            lo, hi = (ATTACK_BANDS if regime is Regime.ATTACK else NORMAL_BANDS)[proto]
            counts = {proto: int(rng.integers(lo, hi + 1))}
        else:
            lo, hi = AGGREGATE_ATTACK if regime is Regime.ATTACK else AGGREGATE_NORMAL
            counts = _split(int(rng.integers(lo, hi + 1)), weights)
        total = sum(counts.values())
        counts[Protocol.OTHER] = int(round(total * other_frac / sum(weights.values())))
        plans.append(SlotPlan(i, regime, counts))
    return plans


def _slot_columns(plan: SlotPlan, slot_us: int, rng) -> tuple:
    """(offsets_us, codes, sizes) for one slot, sorted by offset."""
    blocks = []
    for proto, n in plan.counts.items():
        if n:
            blocks.append((_CODE[(proto, Kind.RECEIVED)], n))
    tcp = plan.counts.get(Protocol.TCP, 0)
    mqtt = plan.counts.get(Protocol.MQTT_SUB, 0)
    for code, n in (
        (_CODE[(Protocol.TCP, Kind.ACKNOWLEDGED)], round(tcp * TCP_ACK_FRACTION)),
        (_CODE[(Protocol.TCP, Kind.RETRANSMISSION)], round(tcp * TCP_RETRANSMISSION_FRACTION)),
        (_CODE[(Protocol.MQTT_PUB, Kind.RECEIVED)], round(mqtt * MQTT_PUB_FRACTION)),
    ):
        if n:
            blocks.append((code, n))
    blocks.sort()
    codes = np.concatenate([np.full(n, c, dtype=np.int8) for c, n in blocks]) if blocks else np.zeros(0, np.int8)
    offsets = rng.integers(0, slot_us, codes.size, dtype=np.int64)
    lo = np.array([_SIZES[_EMITTED[c][0]][0] for c in range(len(_EMITTED))])
    hi = np.array([_SIZES[_EMITTED[c][0]][1] for c in range(len(_EMITTED))])
    sizes = rng.integers(lo[codes], hi[codes] + 1)
    order = np.argsort(offsets, kind="stable")
    return offsets[order], codes[order], sizes[order]


def iter_slot_columns(config: ScenarioConfig, plans=None) -> Iterator[tuple]:
    """Yield (plan, timestamps_s, codes, sizes) per slot."""
    rng = np.random.default_rng([config.seed, 1])
    slot_us = int(round(config.slot_length * _US))
    for plan in plans if plans is not None else slot_plan(config):
        offsets, codes, sizes = _slot_columns(plan, slot_us, rng)
        stamps = (offsets + plan.index * slot_us) / _US
        yield plan, stamps, codes, sizes


def counted_code_mask(codes: np.ndarray) -> np.ndarray:
    return codes <= _CODE[(Protocol.MQTT_SUB, Kind.RECEIVED)]


def column_counts(codes: np.ndarray) -> dict:
    """Detection-counted packets per protocol in one slot's columns."""
    bins = np.bincount(codes, minlength=len(_EMITTED))
    return {p: int(bins[_CODE[(p, Kind.RECEIVED)]]) for p in COUNTED}


def iter_events(config: ScenarioConfig, plans=None) -> Iterator[PacketEvent]:
    device = config.device_id
    templates = [(p, k, _MARKERS.get(p)) for p, k in _EMITTED]
    for _, stamps, codes, sizes in iter_slot_columns(config, plans):
        for t, c, size in zip(stamps.tolist(), codes.tolist(), sizes.tolist()):
            p, k, m = templates[c]
            yield PacketEvent(t, device, p, k, size, m)


def _check_protocol(protocol) -> Protocol:
    proto = _as_protocol(protocol)
    if proto not in COUNTED:
        raise ConfigurationError(f"traffic generator supports TCP, UDP, MQTT_SUB; got {proto.value}")
    return proto


def gen_normal_traffic(protocol, seed: int, duration: float = 1800.0, **kw) -> Iterator[PacketEvent]:
    proto = _check_protocol(protocol)
    return iter_events(ScenarioConfig(seed=seed, duration=duration, mix={proto: 1.0}, **kw))


def gen_attack_traffic(protocol, seed: int, duration: float = 1800.0, **kw) -> Iterator[PacketEvent]:
    proto = _check_protocol(protocol)
    cfg = ScenarioConfig(seed=seed, duration=duration, mix={proto: 1.0}, regimes={proto: Regime.ATTACK}, **kw)
    return iter_events(cfg)


def _power_samples(per_second: np.ndarray, model: EnergyModel, seed: int, spacing: float) -> list:
    rng = np.random.default_rng([seed, 2])
    noise = rng.uniform(-model.noise, model.noise, per_second.size) if model.noise else np.zeros(per_second.size)
    power = model.idle_watts + model.per_packet_joules * per_second * (1.0 + noise)
    samples = []
    for i, p in enumerate(power.tolist()):
        p = round(p, 6)
        cur = round(p / model.voltage, 6) if model.voltage else None
        samples.append(EnergySample(round(i * spacing, 6), model.voltage or None, cur, p))
    return samples


def gen_energy(
    trace: Iterable[PacketEvent],
    model: EnergyModel = EnergyModel(),
    seed: int = 0,
    duration: Optional[float] = None,
    spacing: float = 1.0,
) -> list:
    """One sample per ``spacing`` seconds driven by the detection-counted packets."""
    bins: dict[int, int] = {}
    last = -1
    for ev in trace:
        if detection_scope(ev) is None:
            continue
        b = int(ev.timestamp // spacing)
        bins[b] = bins.get(b, 0) + 1
        last = max(last, b)
    n = int(round(duration / spacing)) if duration is not None else last + 1
    per_second = np.zeros(n)
    for b, c in bins.items():
        if b < n:
            per_second[b] = c
    return _power_samples(per_second, model, seed, spacing)


def energy_from_columns(config: ScenarioConfig, columns: Iterable[tuple], model: EnergyModel, spacing: float = 1.0):
    """Same samples as :func:`gen_energy`, computed from per-slot columns."""
    n = int(round(config.duration / spacing))
    per_second = np.zeros(n)
    for _, stamps, codes, _ in columns:
        counted = stamps[counted_code_mask(codes)]
        idx = np.floor(counted / spacing).astype(np.int64)
        per_second += np.bincount(idx[idx < n], minlength=n)[:n]
    return _power_samples(per_second, model, config.seed, spacing)


def ground_truth(config: ScenarioConfig, plans=None) -> list:
    plans = plans if plans is not None else slot_plan(config)
    return [(p.index, p.regime) for p in plans]


@dataclass(frozen=True)
class ScenarioFiles:
    replay: Path
    sensor: Path
    labels: Path


def write_labels(labels: Iterable[tuple], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# slot_index,regime\n")
        for idx, regime in labels:
            fh.write(f"{idx},{regime.value}\n")


def read_labels(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            idx, regime = line.split(",")
            out[int(idx)] = Regime(regime)
    return out


def run_scenario(config: ScenarioConfig, outdir, model: EnergyModel = EnergyModel(), spacing: float = 1.0) -> ScenarioFiles:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = ScenarioFiles(outdir / "replay.csv", outdir / "sensor.csv", outdir / "labels.csv")
    plans = slot_plan(config)
    write_replay(iter_events(config, plans), files.replay)
    samples = energy_from_columns(config, iter_slot_columns(config, plans), model, spacing)
    write_sensor(samples, files.sensor)
    write_labels(ground_truth(config, plans), files.labels)
    return files

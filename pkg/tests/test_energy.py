import logging
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energywatch.errors import InvalidBaselineError, MalformedRecordError
from energywatch.energy import (
    EnergyAccumulator,
    EnergySample,
    EnergySlot,
    format_sensor_line,
    integrate_slot,
    normalize_energy,
    parse_sensor_line,
    read_sensor,
    write_sensor,
)


def train(powers, start=0.0, spacing=1.0):
    return [EnergySample(start + i * spacing, None, None, p) for i, p in enumerate(powers)]


def oracle_joules(samples, spacing=1.0):
    """Left-rectangle sum written independently of the implementation."""
    stamps = [s.timestamp for s in samples] + [samples[-1].timestamp + spacing]
    return math.fsum(s.power * (b - a) for s, a, b in zip(samples, stamps, stamps[1:]))


def test_constant_power_slot():
    slot = integrate_slot(train([2.0] * 180))
    assert slot.joules == pytest.approx(360.0)
    assert slot.mean_sample_joules == pytest.approx(2.0)
    assert slot.sample_count == 180 and not slot.data_gap


def test_empty_slot_flags_gap():
    slot = integrate_slot([])
    assert slot.joules == 0.0 and slot.data_gap


def test_gap_detection():
    samples = train([1.0] * 10) + train([1.0] * 10, start=20.0)
    assert integrate_slot(samples).data_gap
    assert not integrate_slot(train([1.0] * 180), slot_start=0.0).data_gap
    assert integrate_slot(train([1.0] * 100), slot_start=0.0).data_gap  # tail
    assert integrate_slot(train([1.0] * 170, start=10.0), slot_start=0.0).data_gap  # lead-in


def test_out_of_order_samples():
    with pytest.raises(MalformedRecordError):
        integrate_slot([EnergySample(2.0, None, None, 1.0), EnergySample(1.0, None, None, 1.0)])
    acc = EnergyAccumulator("d")
    acc.add(EnergySample(5.0, None, None, 1.0))
    with pytest.raises(MalformedRecordError):
        acc.add(EnergySample(4.0, None, None, 1.0))


def test_parse_sensor_line_variants(caplog):
    assert parse_sensor_line("1,5,0.2,1.0").power == 1.0
    assert parse_sensor_line("1,5,0.2,").power == pytest.approx(1.0)
    assert parse_sensor_line("1,,,0.7").voltage is None
    with caplog.at_level(logging.WARNING):
        parse_sensor_line("1,5,0.2,3.0", lineno=4)
    assert "disagrees" in caplog.text
    for bad in ("1,5,0.2,-1", "1,,,", "x,5,0.2,1", "1,5,0.2", "-1,5,0.2,1", "1,inf,0.2,1"):
        with pytest.raises(MalformedRecordError):
            parse_sensor_line(bad, 9)


def test_sensor_file_round_trip(tmp_path):
    samples = [EnergySample(float(i), 5.0, 0.25, 1.25) for i in range(5)]
    path = tmp_path / "s.csv"
    assert write_sensor(samples, path) == 5
    assert list(read_sensor(path)) == samples
    assert format_sensor_line(EnergySample(1.0, None, None, 0.5)) == "1.000,,,0.500000"


def test_accumulator_buckets_by_slot():
    acc = EnergyAccumulator("d", slot_length=10.0, extrema=(0.0, 2.0)).extend(train([1.0] * 25))
    assert len(acc) == 3
    first = acc.slot(0)
    assert first.sample_count == 10 and first.joules == pytest.approx(10.0)
    assert first.normalized == pytest.approx(0.5)
    assert acc.slot(2).data_gap  # half the slot missing
    assert acc.slot(7).sample_count == 0


def test_normalize_energy_bounds():
    assert normalize_energy(0.0, 0.0, 1.42) == 0.0
    assert normalize_energy(1.42, 0.0, 1.42) == 1.0
    assert normalize_energy(3.0, 0.0, 1.42) == 1.0
    with pytest.raises(InvalidBaselineError):
        normalize_energy(1.0, 2.0, 2.0)


def test_energy_slot_payload_round_trip():
    slot = EnergySlot("d", 4, 250.0, 1.39, 0.97, 180, False)
    assert EnergySlot.from_payload("d", slot.to_payload()) == slot


_powers = st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=60)
_gaps = st.lists(st.floats(0.1, 3.0), min_size=60, max_size=60)


def _irregular(powers, gaps):
    t, out = 0.0, []
    for p, g in zip(powers, gaps):
        out.append(EnergySample(t, None, None, p))
        t += g
    return out


@settings(max_examples=200, deadline=None)
@given(_powers, _gaps)
def test_matches_oracle(powers, gaps):
    samples = _irregular(powers, gaps)
    assert integrate_slot(samples).joules == pytest.approx(oracle_joules(samples), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 100), st.integers(1, 400), st.sampled_from([0.5, 1.0, 2.0]))
def test_constant_power_within_one_spacing(p, n, spacing):
    samples = train([p] * n, spacing=spacing)
    T = n * spacing
    assert abs(integrate_slot(samples, spacing=spacing).joules - p * T) <= p * spacing + 1e-9


@settings(max_examples=200, deadline=None)
@given(_powers, _powers, st.floats(0, 10), st.floats(0, 10), _gaps)
def test_linearity(p1, p2, a, b, gaps):
    n = min(len(p1), len(p2))
    s1, s2 = _irregular(p1[:n], gaps), _irregular(p2[:n], gaps)
    mixed = [EnergySample(x.timestamp, None, None, a * x.power + b * y.power) for x, y in zip(s1, s2)]
    lhs = integrate_slot(mixed).joules
    rhs = a * integrate_slot(s1).joules + b * integrate_slot(s2).joules
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-7)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=2, max_size=120), st.data())
def test_split_additivity(powers, data):
    samples = train(powers)
    k = data.draw(st.integers(1, len(samples) - 1))
    whole = integrate_slot(samples).joules
    parts = integrate_slot(samples[:k]).joules + integrate_slot(samples[k:]).joules
    assert whole == pytest.approx(parts, rel=1e-9, abs=1e-9)

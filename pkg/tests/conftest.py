import pytest

from energywatch.baseline import default_profile
from energywatch.ingest import PROTOCOL_SCOPES, Scope
from energywatch.windowing import SlotMetrics

_ACCEPTANCE = []


def make_slot(counts, index=0, device="dev", slot_length=180.0, window_slots=10, sample_length=5.0):
    """SlotMetrics with the given per-scope counts spread evenly over samples."""
    if isinstance(counts, int):
        counts = {Scope.TCP: counts}
    full = {s: counts.get(s, 0) for s in PROTOCOL_SCOPES}
    n = int(slot_length / sample_length)
    samples = {}
    for s, c in full.items():
        base, extra = divmod(c, n)
        samples[s] = tuple(base + (1 if i < extra else 0) for i in range(n))
    return SlotMetrics(
        device_id=device,
        slot_index=index % window_slots,
        slot_start=index * slot_length,
        slot_length=slot_length,
        counts=full,
        normalized={},
        sample_counts=samples,
        window_index=index // window_slots,
        sample_length=sample_length,
    )


@pytest.fixture
def profile():
    return default_profile("dev")


@pytest.fixture
def acceptance():
    """Record one acceptance criterion's outcome for the terminal summary."""

    def record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, passed, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {number}. {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)

"""Command-line entry point: learn / monitor / replay / simulate / report."""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .alerts import StreamSink, WebhookSink
from .baseline import (
    DEFAULT_ENERGY_THRESHOLD,
    DEFAULT_MARGIN,
    WILDCARD,
    DeviceStatus,
    ProfileBook,
    learn_baseline,
    load_profiles,
    save_profiles,
)
from .detector import COUNTER_LIMIT, EventKind
from .energy import EnergyAccumulator, read_sensor
from .errors import ConfigurationError, EnergyWatchError
from .ingest import Protocol, Scope, SourceConfig, SourceKind, format_replay_line, open_source
from .pipeline import EXIT_ERROR, Monitor, MonitorConfig
from .sim import ATTACK_MIX, NORMAL_MIX, ScenarioConfig, read_labels, run_scenario
from .store import Label, Record, RecordKind, RecordStore
from .windowing import SAMPLE_SECS, SLOT_SECS, WINDOW_SLOTS, SlotAccumulator

log = logging.getLogger("energywatch")


def _scopes(text: str) -> tuple:
    out = []
    for part in text.split(","):
        part = part.strip().upper()
        if part:
            try:
                out.append(Scope(part))
            except ValueError:
                raise argparse.ArgumentTypeError(f"unknown scope {part!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty scope list")
    return tuple(dict.fromkeys(out))


def _mix(text: str) -> dict:
    mix = {}
    for part in text.split(","):
        name, _, frac = part.partition("=")
        try:
            mix[name.strip().upper()] = float(frac)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad mix entry {part!r}, expected PROTO=FRACTION") from None
    return mix


def _sensor_arg(text: str) -> tuple:
    device, sep, path = text.partition("=")
    return (device, path) if sep else (WILDCARD, text)


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("timing and thresholds")
    g.add_argument("--slot-secs", type=float, default=SLOT_SECS, help="slot length in seconds (default: 180)")
    g.add_argument("--sample-secs", type=float, default=SAMPLE_SECS, help="sample length in seconds (default: 5)")
    g.add_argument("--window-slots", type=int, default=WINDOW_SLOTS, help="slots per window (default: 10)")
    g.add_argument("--counter-limit", type=int, default=COUNTER_LIMIT, help="cooldowns tolerated before registering (default: 3)")
    g.add_argument("--cooldown-secs", type=float, default=None, help="stop-listening time (default: one slot)")
    g.add_argument(
        "--energy-threshold",
        type=float,
        default=None,
        help=f"mean joules per sensor sample that confirms an attack (default: profile value, {DEFAULT_ENERGY_THRESHOLD})",
    )
    g.add_argument("--scope", type=_scopes, default=tuple(Scope), help="comma list of tcp,udp,mqtt,aggregate (default: all)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--time-compression", type=float, default=None, help="virtual seconds per wall-clock second")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energywatch", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn a normal-behaviour profile from attack-free traffic")
    _common(p)
    p.add_argument("--replay", required=True, help="attack-free replay file")
    p.add_argument("--sensor", action="append", type=_sensor_arg, default=[], metavar="[DEVICE=]PATH")
    p.add_argument("--profile", required=True, help="where to write the learned profile (JSON)")
    p.add_argument("--margin", type=float, default=DEFAULT_MARGIN, help="head-room above the observed max (default: 0.10)")
    p.add_argument("--status", choices=["active", "idle"], default="active")
    p.add_argument("--store", help="also append baseline records to this store")
    p.set_defaults(func=cmd_learn)

    for name, helptext in (("replay", "run detection over recorded files"), ("monitor", "run detection on a live line feed")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        if name == "replay":
            p.add_argument("--replay", required=True, help="packet replay file")
        else:
            p.add_argument("--endpoint", default="-", help="'-' for stdin or host:port of a line feed")
        p.add_argument("--sensor", action="append", type=_sensor_arg, default=[], metavar="[DEVICE=]PATH")
        p.add_argument("--profile", help="profile written by 'learn'")
        p.add_argument("--use-defaults", action="store_true", help="fall back to the built-in table thresholds")
        p.add_argument("--store", help="append-only record store (JSON lines)")
        p.add_argument("--run-id", help="run identifier (default: next free run-N in the store)")
        p.add_argument("--webhook", action="append", default=[], help="POST alerts to this URL")
        p.add_argument("--quiet", action="store_true", help="no ALERT lines on stdout")
        p.add_argument("--no-fsync", action="store_true", help="skip fsync after each store append")
        p.set_defaults(func=cmd_replay if name == "replay" else cmd_monitor)

    p = sub.add_parser("simulate", help="generate seeded replay, sensor and label files")
    _common(p)
    p.add_argument("--protocol", choices=["tcp", "udp", "mqtt", "mix"], default="tcp")
    p.add_argument("--regime", choices=["normal", "attack"], default="normal")
    p.add_argument("--onset", type=float, default=0.0, help="attack onset in virtual seconds")
    p.add_argument("--duration", type=float, default=1800.0)
    p.add_argument("--mix", type=_mix, help="explicit mix, e.g. TCP=0.45,UDP=0.3,MQTT_SUB=0.2,OTHER=0.05")
    p.add_argument("--device", default="rpi-1")
    p.add_argument("--out", help="output directory")
    p.add_argument("--stream", action="store_true", help="print replay lines to stdout (paced by --time-compression)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="write per-slot series and a band-occupancy summary")
    p.add_argument("--store", required=True)
    p.add_argument("--run-id", action="append", default=[], help="run(s) to report (default: all)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--labels", help="ground-truth label file to add as a column")
    p.set_defaults(func=cmd_report)
    return parser


def _monitor_config(args) -> MonitorConfig:
    return MonitorConfig(
        slot_length=args.slot_secs,
        sample_length=args.sample_secs,
        window_slots=args.window_slots,
        counter_limit=args.counter_limit,
        cooldown_length=args.cooldown_secs,
        scopes=args.scope,
    )


# -- learn -----------------------------------------------------------------


def cmd_learn(args) -> int:
    src = SourceConfig(SourceKind.REPLAY, args.replay)
    accs: dict[str, SlotAccumulator] = {}
    slots: dict[str, list] = defaultdict(list)
    for ev in open_source(src):
        acc = accs.get(ev.device_id)
        if acc is None:
            acc = accs[ev.device_id] = SlotAccumulator(ev.device_id, args.slot_secs, args.sample_secs, args.window_slots)
        slots[ev.device_id].extend(acc.accumulate(ev))
    for dev, acc in accs.items():
        slots[dev].append(acc.flush())

    energy = {dev: EnergyAccumulator(dev, args.slot_secs).extend(read_sensor(path)) for dev, path in args.sensor}
    status = DeviceStatus(args.status.upper())
    threshold = DEFAULT_ENERGY_THRESHOLD if args.energy_threshold is None else args.energy_threshold
    if not slots:
        slots[WILDCARD] = []
    profiles = {}
    for dev, dev_slots in slots.items():
        e_acc = energy.get(dev) or energy.get(WILDCARD)
        e_slots = [e_acc.slot(s.global_index) for s in dev_slots] if e_acc else []
        profiles[dev] = learn_baseline(
            dev_slots, status, margin=args.margin, device_id=dev, energy_slots=e_slots, energy_threshold=threshold
        )
    save_profiles(profiles, args.profile)
    if args.store:
        store = RecordStore(args.store)
        run_id = store.next_run_id()
        for prof in profiles.values():
            store.append(Record(RecordKind.BASELINE, prof.device_id, prof.learned_at, prof.to_dict(), Label.NORMAL, run_id))
    for dev, prof in sorted(profiles.items()):
        print(f"device {dev} ({prof.status.value}, {len(slots[dev])} slots)")
        for scope, band in prof.bands.items():
            print(f"  {scope.value:<9} band=[{band.min_pkt:g}, {band.max_pkt:g}] y={band.normal_upper:g}")
        print(f"  energy threshold {prof.energy_threshold:g} J/sample")
    return 0


# -- replay / monitor ------------------------------------------------------


def _profile_book(args) -> ProfileBook:
    if args.profile:
        return ProfileBook(load_profiles(args.profile), use_defaults=args.use_defaults, energy_threshold=args.energy_threshold)
    if not args.use_defaults:
        raise ConfigurationError("no profile given: run 'energywatch learn' first or pass --use-defaults")
    return ProfileBook({}, use_defaults=True, energy_threshold=args.energy_threshold)


def _run(args, events) -> int:
    book = _profile_book(args)
    store = RecordStore(args.store, fsync=not args.no_fsync) if args.store else None
    run_id = args.run_id or (store.next_run_id() if store is not None else "run-1")
    sinks = [] if args.quiet else [StreamSink()]
    sinks += [WebhookSink(url) for url in args.webhook]
    monitor = Monitor(book, _monitor_config(args), store, run_id, sinks)
    for device, path in args.sensor:
        monitor.add_energy(device, read_sensor(path))
    monitor.feed_all(events)
    result = monitor.finish()
    counts = defaultdict(int)
    for ev in result.detection_events:
        counts[ev.kind.value] += 1
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "no detection events"
    print(f"# {run_id}: {len(result.slots)} slots, {summary}", file=sys.stderr)
    return result.exit_code


def cmd_replay(args) -> int:
    return _run(args, open_source(SourceConfig(SourceKind.REPLAY, args.replay)))


def cmd_monitor(args) -> int:
    return _run(args, open_source(SourceConfig(SourceKind.LIVE, args.endpoint)))


# -- simulate --------------------------------------------------------------


def scenario_from_args(args) -> ScenarioConfig:
    attack = args.regime == "attack"
    if args.mix:
        mix = args.mix
    elif args.protocol == "mix":
        mix = ATTACK_MIX if attack else NORMAL_MIX
    else:
        mix = {args.protocol.upper(): 1.0}
    regime = "ATTACK" if attack else "NORMAL"
    regimes = {p: regime for p in mix if str(p).upper() not in ("OTHER", Protocol.OTHER)}
    return ScenarioConfig(
        seed=args.seed,
        duration=args.duration,
        slot_length=args.slot_secs,
        mix=mix,
        regimes=regimes,
        onset=args.onset,
        device_id=args.device,
        time_compression=args.time_compression,
    )


def cmd_simulate(args) -> int:
    scenario = scenario_from_args(args)
    if args.stream:
        events = open_source(SourceConfig(SourceKind.SIMULATED, scenario=scenario))
        out = sys.stdout
        for ev in events:
            out.write(format_replay_line(ev) + "\n")
        out.flush()
        return 0
    if not args.out:
        raise ConfigurationError("simulate needs --out DIR (or --stream)")
    files = run_scenario(scenario, args.out)
    print(f"replay  {files.replay}")
    print(f"sensor  {files.sensor}")
    print(f"labels  {files.labels}")
    return 0


# -- report ----------------------------------------------------------------


def _in_band(count, band) -> str:
    if count > band["normal_upper"]:
        return "above"
    if count < band["min_pkt"]:
        return "below"
    return "normal"


def cmd_report(args) -> int:
    store = RecordStore(args.store)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = args.run_id or store.run_ids()
    truth = read_labels(args.labels) if args.labels else None
    if not len(store):
        log.warning("store %s is empty; writing an empty report", args.store)
    summary = ["run       device    scope      slots  normal  below  above  E<=thr  E>thr  windows(N/A)  events"]
    for run in runs:
        slot_recs = [r for r in store.query(kind=RecordKind.SLOT, run_id=run)]
        energy = {(r.device_id, r.payload["slot_index"]): r.payload for r in store.query(kind=RecordKind.ENERGY, run_id=run)}
        baselines = {r.device_id: r.payload for r in store.query(kind=RecordKind.BASELINE, run_id=run)}
        events = store.query(kind=RecordKind.EVENT, run_id=run)
        for device in sorted({r.device_id for r in slot_recs}):
            dev_slots = [r for r in slot_recs if r.device_id == device]
            profile = baselines.get(device)
            threshold = profile["energy_threshold"] if profile else DEFAULT_ENERGY_THRESHOLD
            for scope in Scope:
                rows = ["slot_index,slot_start,count,normalized,mean_sample_joules,joules,suppressed,verdict"
                        + (",truth" if truth is not None else "")]
                occ = defaultdict(int)
                for rec in dev_slots:
                    p = rec.payload
                    count = p["aggregate"] if scope is Scope.AGGREGATE else p["counts"][scope.value]
                    e = energy.get((device, p["global_index"]))
                    msj = "" if e is None else repr(e["mean_sample_joules"])
                    joules = "" if e is None else repr(e["joules"])
                    row = (
                        f"{p['global_index']},{p['slot_start']!r},{count},{p['normalized'].get(scope.value, '')},"
                        f"{msj},{joules},{int(scope.value in p.get('suppressed', []))},{rec.label.value}"
                    )
                    if truth is not None:
                        regime = truth.get(p["global_index"])
                        row += "," + ("" if regime is None else ("ABNORMAL" if regime.value == "ATTACK" else "NORMAL"))
                    rows.append(row)
                    if profile:
                        occ[_in_band(count, profile["bands"][scope.value])] += 1
                    if e is not None:
                        occ["e_hi" if e["mean_sample_joules"] > threshold else "e_lo"] += 1
                name = f"series_{run}_{device}_{scope.value.lower()}.csv"
                (out / name).write_text("\n".join(rows) + "\n", encoding="utf-8")
                scoped = [r for r in events if r.device_id == device and r.payload["scope"] == scope.value]
                wins = [r for r in scoped if r.payload["kind"] == EventKind.WINDOW_VERDICT.value]
                n_norm = sum(r.payload["verdict"] == "NORMAL" for r in wins)
                n_abn = sum(r.payload["verdict"] == "ABNORMAL" for r in wins)
                n_det = len(scoped) - len(wins)
                summary.append(
                    f"{run:<9} {device:<9} {scope.value:<10} {len(dev_slots):>5}  {occ['normal']:>6}  {occ['below']:>5}"
                    f"  {occ['above']:>5}  {occ['e_lo']:>6}  {occ['e_hi']:>5}  {n_norm:>5}/{n_abn:<6}  {n_det:>6}"
                )
    (out / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    print("\n".join(summary))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for traffic-only anomalies
        return EXIT_ERROR if exc.code else 0
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (EnergyWatchError, OSError) as exc:
        print(f"energywatch: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

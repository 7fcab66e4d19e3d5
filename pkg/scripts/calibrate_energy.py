#!/usr/bin/env python3
"""Derive the default EnergyModel so the 1.42 J/sample boundary splits the regimes.

Mean power over a slot is idle + ppj * (count / slot_secs) * (1 + mean noise),
and the per-second noise mean lies in [-noise, +noise].  The worst normal slot
is the largest normal count at +noise, the weakest attack slot the smallest
attack count at -noise.  Fixing ppj and noise, idle is chosen so the threshold
sits halfway between those two extremes.

    python scripts/calibrate_energy.py [--ppj 0.01] [--noise 0.05]
"""

import argparse

from energywatch.baseline import DEFAULT_ENERGY_THRESHOLD
from energywatch.sim import AGGREGATE_ATTACK, AGGREGATE_NORMAL, ATTACK_BANDS, NORMAL_BANDS, EnergyModel


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ppj", type=float, default=0.01, help="joules per counted packet")
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--slot-secs", type=float, default=180.0)
    ap.add_argument("--threshold", type=float, default=DEFAULT_ENERGY_THRESHOLD)
    args = ap.parse_args()

    normal_max = max([hi for _, hi in NORMAL_BANDS.values()] + [AGGREGATE_NORMAL[1]])
    attack_min = min([lo for lo, _ in ATTACK_BANDS.values()] + [AGGREGATE_ATTACK[0]])
    hi_normal = args.ppj * normal_max / args.slot_secs * (1 + args.noise)
    lo_attack = args.ppj * attack_min / args.slot_secs * (1 - args.noise)
    if lo_attack <= hi_normal:
        raise SystemExit("noise too large: the regimes overlap in energy")
    idle = round(args.threshold - (hi_normal + lo_attack) / 2, 4)

    print(f"largest normal count {normal_max}, smallest attack count {attack_min}")
    print(f"idle_watts={idle} per_packet_joules={args.ppj} noise={args.noise}")
    print(f"worst normal slot  {idle + hi_normal:.6f} J/sample (<= {args.threshold})")
    print(f"weakest attack slot {idle + lo_attack:.6f} J/sample (> {args.threshold})")
    current = EnergyModel()
    if (current.idle_watts, current.per_packet_joules, current.noise) != (idle, args.ppj, args.noise):
        print(f"note: committed defaults differ: {current}")


if __name__ == "__main__":
    main()

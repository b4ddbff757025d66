#!/usr/bin/env python3
"""Preemption threshold tradeoff on the corridor scenario.

Sweeps the green-wave distance threshold and reports, per threshold, the
corridor EV's travel time and the average travel time of the cross-street
traffic. Small thresholds leave the EV stuck behind unserved queues;
large ones hold the cross streets long before the EV arrives. A
fixed-time run without preemption anchors both columns.

Usage: python scripts/greenwave_tradeoff.py [--thresholds 100 200 ...] [--seed N]
"""

import argparse
import statistics
import sys

from evsched.baselines import BaselineConfig
from evsched.runner import FixedTimePolicy, GreenWavePolicy, run_episode
from evsched.scenarios import greenwave_tradeoff


def cross_street_average(result):
    times = [t for v, t in zip_arrivals(result) if is_cross(v)]
    return statistics.mean(times) if times else float("nan")


def zip_arrivals(result):
    from evsched.microsim import travel_time
    for veh in result.sim.arrived_vehicles:
        yield veh, travel_time(veh)


def is_cross(veh):
    # south-north groups run one intersection only: route has 3 nodes
    return veh.vclass == "ov" and len(veh.route) == 3


def ev_time(result):
    for veh, t in zip_arrivals(result):
        if veh.id == "ev-corridor":
            return t
    return float("nan")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--thresholds", type=float, nargs="+",
                        default=[100.0, 200.0, 300.0, 500.0])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    graph, flows = greenwave_tradeoff()
    base = run_episode(graph, flows, FixedTimePolicy(), seed=args.seed,
                       log_events=False)
    print(f"{'policy':>22}  {'EV travel (s)':>13}  {'cross-street avg (s)':>20}")
    print(f"{'fixedtime (no preempt)':>22}  {ev_time(base):13.1f}  "
          f"{cross_street_average(base):20.1f}")
    for threshold in args.thresholds:
        cfg = BaselineConfig(greenwave_threshold_m=threshold)
        res = run_episode(graph, flows, GreenWavePolicy(cfg), seed=args.seed,
                          log_events=False)
        label = f"greenwave @ {threshold:.0f} m"
        print(f"{label:>22}  {ev_time(res):13.1f}  "
              f"{cross_street_average(res):20.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

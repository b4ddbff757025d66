#!/usr/bin/env python3
"""Multi-policy travel-time comparison table on one scenario.

Runs the rule-based policies (and optionally a trained checkpoint under
its three router variants) over several seeds and prints mean OV / EV
travel times, mirroring the evaluation tables the CLI produces one policy
at a time.

Usage:
    python scripts/ordering_table.py --scenario synthetic.json
    python scripts/ordering_table.py --scenario s.json --checkpoint ckpt.json
"""

import argparse
import statistics
import sys

from evsched.neural import load_params
from evsched.road_network import load_scenario
from evsched.runner import (
    FixedTimePolicy, GreenWavePolicy, LearnedPolicy, MaxPressurePolicy,
    make_router, run_episode,
)


def evaluate(graph, flows, policy, router_kind, seeds):
    ovs, evs, missed = [], [], 0
    for seed in seeds:
        res = run_episode(graph, flows, policy,
                          router=make_router(router_kind, None),
                          seed=seed, log_events=False)
        ovs.append(res.avg_tt_ov)
        evs.append(res.avg_tt_ev)
        missed += res.non_arrived
    return statistics.mean(ovs), statistics.mean(evs), missed


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", required=True)
    parser.add_argument("--checkpoint")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    graph, flows = load_scenario(args.scenario)
    seeds = [args.seed + i for i in range(args.seeds)]
    rows = [
        ("fixedtime", FixedTimePolicy(), "none"),
        ("maxpressure", MaxPressurePolicy(), "none"),
        ("greenwave", GreenWavePolicy(), "none"),
    ]
    if args.checkpoint:
        params = load_params(args.checkpoint)
        rows.extend([
            ("levid-dy", LearnedPolicy(params), "none"),
            ("levid-apf", LearnedPolicy(params), "apf"),
            ("levid", LearnedPolicy(params), "apf-longterm"),
        ])
    print(f"{'policy':>12} {'router':>14} {'OVs (s)':>9} {'EVs (s)':>9} "
          f"{'not arrived':>12}")
    for name, policy, router_kind in rows:
        ov, ev, missed = evaluate(graph, flows, policy, router_kind, seeds)
        print(f"{name:>12} {router_kind:>14} {ov:9.1f} {ev:9.1f} {missed:12d}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

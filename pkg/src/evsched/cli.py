"""Command-line harness: generate | train | eval | spacetime.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
scenario, checkpoint, or config), 3 internal error.

Every run writes its fully resolved configuration next to its outputs so
results can be reproduced from the artifacts alone. Output files are
byte-reproducible under a fixed seed; wall-clock timings go to stderr
only.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import statistics
import sys
import time
from pathlib import Path

from .baselines import BaselineConfig
from .microsim import events_to_csv
from .neural import NetConfig, load_params, save_params
from .road_network import ScenarioError, load_scenario, save_scenario
from .route_planner import PlannerConfig, RoutingError
from .runner import (
    FixedTimePolicy, GreenWavePolicy, LearnedPolicy, MaxPressurePolicy,
    make_router, run_episode,
)
from .scenarios import entry_rate_per_300s, greenwave_tradeoff, grid_scenario, synthetic_6x6
from .signal_agents import AgentConfig
from .trainer import TrainConfig, curve_to_csv, train

USAGE_ERROR, DATA_ERROR, INTERNAL_ERROR = 1, 2, 3

POLICIES = ("fixedtime", "maxpressure", "greenwave",
            "levid", "levid-dy", "levid-apf")
LEARNED_POLICIES = ("levid", "levid-dy", "levid-apf")
DEFAULT_ROUTER = {
    "fixedtime": "none",
    "maxpressure": "none",
    "greenwave": "none",
    "levid": "apf-longterm",
    "levid-dy": "none",
    "levid-apf": "apf",
}


class UsageError(Exception):
    pass


# -- flat key=value config -----------------------------------------------------

_CONFIG_SECTIONS = {
    "planner": PlannerConfig,
    "agent": AgentConfig,
    "net": NetConfig,
    "train": TrainConfig,
    "baseline": BaselineConfig,
}


@dataclasses.dataclass
class Settings:
    planner: PlannerConfig
    agent: AgentConfig
    net: NetConfig
    train: TrainConfig
    baseline: BaselineConfig


def default_settings() -> Settings:
    return Settings(PlannerConfig(), AgentConfig(), NetConfig(),
                    TrainConfig(), BaselineConfig())


def parse_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(
                f"config {path} line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def apply_config(settings: Settings, overrides: dict[str, str]) -> Settings:
    for key, value in overrides.items():
        prefix, _, fname = key.partition("_")
        section = getattr(settings, prefix, None)
        if section is None or not fname or not hasattr(section, fname):
            raise ScenarioError(f"unknown config key {key!r}")
        current = getattr(section, fname)
        if isinstance(current, bool):
            parsed = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            parsed = int(value)
        elif isinstance(current, float):
            parsed = float(value)
        else:
            parsed = value
        setattr(section, fname, parsed)
    for name, cls in _CONFIG_SECTIONS.items():
        section = getattr(settings, name)
        post = getattr(section, "__post_init__", None)
        if post is not None:
            post()  # re-validate after overrides
    return settings


def resolved_config_text(settings: Settings, extra: dict | None = None) -> str:
    lines = []
    for name in sorted(_CONFIG_SECTIONS):
        section = getattr(settings, name)
        for f in dataclasses.fields(section):
            lines.append(f"{name}_{f.name} = {getattr(section, f.name)}")
    for key in sorted(extra or {}):
        lines.append(f"{key} = {extra[key]}")
    return "\n".join(lines) + "\n"


def _load_settings(args) -> Settings:
    settings = default_settings()
    if getattr(args, "config", None):
        apply_config(settings, parse_config_file(args.config))
    return settings


# -- subcommands ------------------------------------------------------------------

def cmd_generate(args) -> int:
    kind = args.kind
    if kind == "synthetic6x6":
        graph, flows = synthetic_6x6()
    elif kind == "grid":
        graph, flows = grid_scenario(
            args.rows, args.cols, args.segment_length, args.speed_limit,
            ew_rate=args.ew_rate, sn_rate=args.sn_rate,
            ev_fraction=args.ev_fraction, duration_s=args.duration)
    elif kind == "greenwave-tradeoff":
        graph, flows = greenwave_tradeoff()
    else:
        raise UsageError(f"unknown scenario kind {kind!r}")
    save_scenario(args.out, graph, flows, name=kind)
    entry_lanes = len(flows.groups)
    print(f"wrote {args.out}: {len(graph.intersections)} intersections, "
          f"{entry_lanes} entry lanes, "
          f"{entry_rate_per_300s(flows):.1f} vehicles/300s network entry rate")
    return 0


def cmd_train(args) -> int:
    settings = _load_settings(args)
    graph, flows = load_scenario(args.scenario)
    if args.episodes is not None:
        settings.train.episodes = args.episodes
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(point):
        print(f"episode {point.episode}: avg_tt_ov={point.avg_tt_ov:.1f} "
              f"avg_tt_ev={point.avg_tt_ev:.1f} loss={point.mean_loss:.3g} "
              f"eps={point.epsilon:.2f}", file=sys.stderr)

    started = time.monotonic()
    result = train(graph, flows, settings.train, settings.net, settings.agent,
                   settings.planner, router_kind=args.router, seed=args.seed,
                   on_episode=progress if args.verbose else None)
    elapsed = time.monotonic() - started
    save_params(str(out_dir / "checkpoint.json"), result.params)
    (out_dir / "curve.csv").write_text(curve_to_csv(result.curve))
    (out_dir / "resolved_config.txt").write_text(resolved_config_text(
        settings, {"seed": args.seed, "scenario": args.scenario,
                   "router": args.router}))
    print(f"trained {settings.train.episodes} episodes -> {out_dir}",
          file=sys.stderr)
    print(f"wall clock: {elapsed:.1f}s", file=sys.stderr)
    print(str(out_dir / "checkpoint.json"))
    return 0


def _policy_for(name: str, settings: Settings, checkpoint: str | None):
    if name == "fixedtime":
        return FixedTimePolicy(settings.baseline)
    if name == "maxpressure":
        return MaxPressurePolicy(settings.baseline)
    if name == "greenwave":
        return GreenWavePolicy(settings.baseline)
    if name in LEARNED_POLICIES:
        if not checkpoint:
            raise UsageError(f"policy {name!r} requires --checkpoint")
        params = load_params(checkpoint)
        return LearnedPolicy(params, settings.agent)
    raise UsageError(f"unknown policy {name!r}; choose from {POLICIES}")


def _seed_list(args) -> list[int]:
    return [args.seed + i for i in range(args.seeds)]


def run_report(graph, flows, policy, router_kind: str, settings: Settings,
               seeds: list[int]) -> list[dict]:
    rows = []
    for seed in seeds:
        router = make_router(router_kind, settings.planner)
        res = run_episode(graph, flows, policy, router=router, seed=seed,
                          log_events=False)
        rows.append({
            "seed": seed,
            "avg_tt_ov": res.avg_tt_ov,
            "avg_tt_ev": res.avg_tt_ev,
            "n_ov": len(res.ov_travel_times),
            "n_ev": len(res.ev_travel_times),
            "non_arrived": res.non_arrived,
        })
    return rows


def _fmt(value: float) -> str:
    return "nan" if isinstance(value, float) and math.isnan(value) else f"{value:.1f}"


def cmd_eval(args) -> int:
    settings = _load_settings(args)
    graph, flows = load_scenario(args.scenario)
    policy = _policy_for(args.policy, settings, args.checkpoint)
    router_kind = args.router or DEFAULT_ROUTER[args.policy]
    seeds = _seed_list(args)
    started = time.monotonic()
    rows = run_report(graph, flows, policy, router_kind, settings, seeds)
    elapsed = time.monotonic() - started

    header = "policy,router,seed,avg_tt_ov,avg_tt_ev,n_ov,n_ev,non_arrived"
    lines = [header]
    for row in rows:
        lines.append(
            f"{args.policy},{router_kind},{row['seed']},{row['avg_tt_ov']},"
            f"{row['avg_tt_ev']},{row['n_ov']},{row['n_ev']},"
            f"{row['non_arrived']}")
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(csv_text)
        Path(args.out).with_suffix(".config.txt").write_text(
            resolved_config_text(settings, {
                "policy": args.policy, "router": router_kind,
                "scenario": args.scenario, "seeds": args.seeds,
                "seed": args.seed}))

    total_vehicles = sum(r["n_ov"] + r["n_ev"] for r in rows)
    print(f"policy={args.policy} router={router_kind} "
          f"seeds={[r['seed'] for r in rows]}")
    if total_vehicles == 0:
        print("no vehicles arrived; travel-time averages are undefined")
    for row in rows:
        print(f"  seed {row['seed']}: OVs {_fmt(row['avg_tt_ov'])} s "
              f"(n={row['n_ov']}), EVs {_fmt(row['avg_tt_ev'])} s "
              f"(n={row['n_ev']}), not arrived {row['non_arrived']}")
    ovs = [r["avg_tt_ov"] for r in rows if not math.isnan(r["avg_tt_ov"])]
    evs = [r["avg_tt_ev"] for r in rows if not math.isnan(r["avg_tt_ev"])]
    if ovs:
        std = statistics.pstdev(ovs) if len(ovs) > 1 else 0.0
        print(f"  mean OVs: {statistics.mean(ovs):.1f} s (std {std:.1f})")
    if evs:
        std = statistics.pstdev(evs) if len(evs) > 1 else 0.0
        print(f"  mean EVs: {statistics.mean(evs):.1f} s (std {std:.1f})")
    print(f"wall clock: {elapsed:.1f}s", file=sys.stderr)
    return 0


def cmd_spacetime(args) -> int:
    settings = _load_settings(args)
    graph, flows = load_scenario(args.scenario)
    known = {v.id for v in flows.vehicles}
    if args.ev_id not in known:
        raise ScenarioError(f"vehicle {args.ev_id!r} not in scenario flows")
    policy = _policy_for(args.policy, settings, args.checkpoint)
    router_kind = args.router or DEFAULT_ROUTER[args.policy]
    router = make_router(router_kind, settings.planner)
    res = run_episode(graph, flows, policy, router=router, seed=args.seed,
                      track_vehicles=(args.ev_id,), track_phases=True,
                      log_events=True)
    out = Path(args.out)
    traj_path = out.with_name(out.name + "_trajectory.csv")
    phases_path = out.with_name(out.name + "_phases.csv")
    events_path = out.with_name(out.name + "_events.csv")

    traj = res.trajectories[args.ev_id]
    traj_lines = ["tick,vehicle_id,cumulative_distance_m"]
    traj_lines.extend(f"{t},{args.ev_id},{d:.3f}" for t, d in traj)
    traj_path.write_text("\n".join(traj_lines) + "\n")

    realized = None
    for veh in list(res.sim.arrived_vehicles) + list(res.sim.vehicles.values()):
        if veh.id == args.ev_id:
            realized = [nid for nid in veh.route
                        if not graph.nodes[nid].virtual]
    phase_lines = ["tick,intersection_id,phase_id"]
    for tick, node_id, phase_id in res.phase_log:
        if realized is None or node_id in realized:
            phase_lines.append(f"{tick},{node_id},{phase_id}")
    phases_path.write_text("\n".join(phase_lines) + "\n")
    events_path.write_text(events_to_csv(res.events))
    print(f"wrote {traj_path} and {phases_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evsched",
        description="Grid-traffic simulator with cooperative EV scheduling")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a scenario file")
    gen.add_argument("--kind", required=True,
                     choices=("synthetic6x6", "grid", "greenwave-tradeoff"))
    gen.add_argument("--out", required=True)
    gen.add_argument("--rows", type=int, default=4)
    gen.add_argument("--cols", type=int, default=4)
    gen.add_argument("--segment-length", type=float, default=300.0)
    gen.add_argument("--speed-limit", type=float, default=11.11)
    gen.add_argument("--ew-rate", type=float, default=300.0)
    gen.add_argument("--sn-rate", type=float, default=90.0)
    gen.add_argument("--ev-fraction", type=float, default=0.01)
    gen.add_argument("--duration", type=int, default=3600)
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train the shared signal critic")
    tr.add_argument("--scenario", required=True)
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--config")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--episodes", type=int, default=None)
    tr.add_argument("--router", default="none",
                    choices=("none", "static-dijkstra", "apf", "apf-longterm"))
    tr.add_argument("--verbose", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a policy over seeds")
    ev.add_argument("--scenario", required=True)
    ev.add_argument("--policy", required=True, choices=POLICIES)
    ev.add_argument("--checkpoint")
    ev.add_argument("--router",
                    choices=("none", "static-dijkstra", "apf", "apf-longterm"))
    ev.add_argument("--config")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--seeds", type=int, default=5)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    sp = sub.add_parser("spacetime", help="export an EV trajectory with signals")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--policy", required=True, choices=POLICIES)
    sp.add_argument("--checkpoint")
    sp.add_argument("--router",
                    choices=("none", "static-dijkstra", "apf", "apf-longterm"))
    sp.add_argument("--config")
    sp.add_argument("--ev-id", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_spacetime)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else USAGE_ERROR
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ScenarioError, RoutingError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Episode orchestration: signal policies x EV routers over one simulation.

A policy maps the simulator state to one phase action per intersection and
is queried every action interval. A router owns EV route updates: it sees
every spawn and is asked to replan at the same cadence as the policy, so
vehicle and road decisions stay interleaved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import BaselineConfig, dijkstra_route, fixed_time, green_wave, max_pressure
from .microsim import ACTION_INTERVAL_S, EV, Simulator, travel_time
from .neural import QNetworkParams, forward_q_data
from .road_network import FlowSpec, RoadGraph
from .route_planner import PlannerConfig, RoutingError, plan_next_with_samples
from .signal_agents import (
    AgentConfig, active_ev_route_edges, neighbor_observation_matrix,
    relational_distances, top_k,
)


class FixedTimePolicy:
    def __init__(self, cfg: BaselineConfig | None = None):
        self.cfg = cfg or BaselineConfig()

    def __call__(self, sim) -> dict[int, int]:
        return {n.id: fixed_time(sim, n.id, self.cfg)
                for n in sim.graph.intersections}


class MaxPressurePolicy:
    def __init__(self, cfg: BaselineConfig | None = None):
        self.cfg = cfg or BaselineConfig()

    def __call__(self, sim) -> dict[int, int]:
        return {n.id: max_pressure(sim, n.id, self.cfg)
                for n in sim.graph.intersections}


class GreenWavePolicy:
    """Threshold preemption for EVs over a fixed-time base schedule."""

    def __init__(self, cfg: BaselineConfig | None = None, fallback=None):
        self.cfg = cfg or BaselineConfig()
        self._fallback = fallback or (lambda sim, nid: fixed_time(sim, nid, self.cfg))

    def __call__(self, sim) -> dict[int, int]:
        return {n.id: green_wave(sim, n.id, self.cfg, self._fallback)
                for n in sim.graph.intersections}


class RandomPolicy:
    def __init__(self, seed: int):
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def __call__(self, sim) -> dict[int, int]:
        return {n.id: int(self.rng.integers(0, len(n.phase_table)))
                for n in sim.graph.intersections}


class LearnedPolicy:
    """Greedy policy of the shared attention critic over top-K neighborhoods."""

    def __init__(self, params: QNetworkParams, agent_cfg: AgentConfig | None = None):
        self.params = params
        self.agent_cfg = agent_cfg or AgentConfig()

    def __call__(self, sim) -> dict[int, int]:
        graph = sim.graph
        k = min(self.agent_cfg.neighbors, len(graph.intersections))
        dgraph = relational_distances(
            graph, active_ev_route_edges(sim), self.agent_cfg.route_discount)
        actions = {}
        for node in graph.intersections:
            ns = top_k(dgraph, node.id, k)
            mat = neighbor_observation_matrix(sim, ns)
            q = forward_q_data(self.params, mat)
            actions[node.id] = int(np.argmax(q))
        return actions


class NullRouter:
    """EVs keep the routes given by the scenario."""

    def on_spawn(self, sim, veh) -> None:
        pass

    def replan(self, sim) -> None:
        pass


def _splice_suffix(veh, suffix: list[int]) -> None:
    """Replaces the not-yet-traversed route beyond the current segment."""
    keep = veh.route[:veh.route_index + 1]
    assert suffix[0] == veh.route[veh.route_index + 1]
    veh.route = keep + suffix


class StaticDijkstraRouter:
    """Travel-time shortest path fixed once at departure."""

    def on_spawn(self, sim, veh) -> None:
        if not veh.auto_route or veh.destination is None:
            return
        v_c = veh.route[veh.route_index + 1]
        if v_c == veh.destination:
            return
        try:
            path = dijkstra_route(sim.graph, sim, v_c, veh.destination)
        except RoutingError:
            return  # keep the scenario route
        if len(path) >= 2 and path[1] == veh.route[veh.route_index]:
            return  # would require a u-turn; keep the scenario route
        _splice_suffix(veh, path)

    def replan(self, sim) -> None:
        pass


class FieldRouter:
    """Potential-field planner; depth 1 keeps only the immediate repulsion.

    When ``audit`` is true every replanning decision is recorded as
    (tick, ev_id, intersection, chosen next hop, field samples), ready for
    decisions_to_csv.
    """

    def __init__(self, cfg: PlannerConfig | None = None, long_term: bool = True,
                 audit: bool = False):
        base = cfg or PlannerConfig()
        self.cfg = base if long_term else replace(base, depth=1)
        self.decisions: list | None = [] if audit else None

    def _replan_one(self, sim, ev) -> None:
        if ev.route_index + 1 >= len(ev.route):
            return
        if ev.route[ev.route_index + 1] == ev.destination:
            return
        try:
            suffix, samples = plan_next_with_samples(sim, ev, self.cfg)
        except RoutingError:
            return
        _splice_suffix(ev, suffix)
        if self.decisions is not None and len(suffix) > 1:
            self.decisions.append(
                (sim.clock, ev.id, suffix[0], suffix[1], samples))

    def on_spawn(self, sim, veh) -> None:
        if veh.auto_route and veh.destination is not None:
            self._replan_one(sim, veh)

    def replan(self, sim) -> None:
        for ev in sim.active_evs:
            if ev.auto_route and ev.destination is not None:
                self._replan_one(sim, ev)


ROUTERS = ("none", "static-dijkstra", "apf", "apf-longterm")


def make_router(kind: str, planner_cfg: PlannerConfig | None = None):
    if kind == "none":
        return NullRouter()
    if kind == "static-dijkstra":
        return StaticDijkstraRouter()
    if kind == "apf":
        return FieldRouter(planner_cfg, long_term=False)
    if kind == "apf-longterm":
        return FieldRouter(planner_cfg, long_term=True)
    raise ValueError(f"unknown router {kind!r}; choose from {ROUTERS}")


@dataclass
class EpisodeResult:
    duration: int
    spawned: int
    arrived: int
    non_arrived: int
    ov_travel_times: list[int] = field(default_factory=list)
    ev_travel_times: list[int] = field(default_factory=list)
    events: list = field(default_factory=list)
    phase_log: list | None = None
    trajectories: dict[str, list] | None = None
    sim: Simulator | None = None

    @property
    def avg_tt_ov(self) -> float:
        return (sum(self.ov_travel_times) / len(self.ov_travel_times)
                if self.ov_travel_times else math.nan)

    @property
    def avg_tt_ev(self) -> float:
        return (sum(self.ev_travel_times) / len(self.ev_travel_times)
                if self.ev_travel_times else math.nan)


def run_episode(graph: RoadGraph, flows: FlowSpec, policy, router=None,
                seed: int = 0, duration: int | None = None,
                action_interval: int = ACTION_INTERVAL_S,
                log_events: bool = True, track_vehicles=(),
                track_phases: bool = False) -> EpisodeResult:
    router = router or NullRouter()
    sim = Simulator(graph, flows, seed=seed, on_spawn=router.on_spawn,
                    log_events=log_events)
    duration = duration if duration is not None else flows.duration_s
    trajectories = {vid: [] for vid in track_vehicles} if track_vehicles else None
    phase_log = [] if track_phases else None
    for t in range(duration):
        if t % action_interval == 0:
            router.replan(sim)
            sim.step(policy(sim))
        else:
            sim.step(None)
        if trajectories is not None:
            for vid in track_vehicles:
                veh = sim.vehicles.get(vid)
                if veh is not None:
                    trajectories[vid].append((t, veh.cum_distance))
        if phase_log is not None:
            for node in graph.intersections:
                phase_log.append((t, node.id, sim.phase[node.id]))
    if trajectories is not None:
        for vid in track_vehicles:
            if not trajectories[vid]:
                arrived = next((v for v in sim.arrived_vehicles if v.id == vid),
                               None)
                if arrived is not None:
                    trajectories[vid].append(
                        (arrived.arrival_time, arrived.cum_distance))
                else:
                    trajectories[vid].append((duration, 0.0))
    result = EpisodeResult(
        duration=duration, spawned=sim.spawned, arrived=sim.arrived,
        non_arrived=sim.spawned - sim.arrived + len(sim.deferred)
        + (len(sim._pending) - sim._pending_idx),
        events=sim.events, phase_log=phase_log, trajectories=trajectories,
        sim=sim)
    for veh in sim.arrived_vehicles:
        if veh.vclass == EV:
            result.ev_travel_times.append(travel_time(veh))
        else:
            result.ov_travel_times.append(travel_time(veh))
    return result

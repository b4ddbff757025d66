"""Rule-based signal policies and static EV routing for comparison runs.

All decision functions are pure over a simulator snapshot: same state,
same answer. Per-phase pressure here is the signed sum over the phase's
green movements (upstream minus downstream OV counts), which differs from
the absolute intersection pressure used in the learning reward; both
definitions are deliberate and live in their own modules.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .road_network import NUM_PHASES, RIGHT, RoadGraph
from .route_planner import RoutingError


@dataclass
class BaselineConfig:
    fixed_phase_duration_s: int = 30
    greenwave_threshold_m: float = 200.0
    maxpressure_min_phase_s: int = 10

    def __post_init__(self):
        if self.fixed_phase_duration_s <= 0:
            raise ValueError("fixed phase duration must be positive")
        if self.greenwave_threshold_m <= 0:
            raise ValueError("green wave threshold must be positive")
        if self.maxpressure_min_phase_s <= 0:
            raise ValueError("minimum phase time must be positive")


def fixed_time(sim, node_id: int, cfg: BaselineConfig) -> int:
    """Cycles the phases on a fixed global schedule, blind to traffic."""
    return (sim.clock // cfg.fixed_phase_duration_s) % NUM_PHASES


def phase_pressure(sim, node_id: int, phase_id: int) -> float:
    """Signed OV imbalance summed over the phase's green movements."""
    node = sim.graph.nodes[node_id]
    total = 0.0
    for in_lane, out_lane in node.phase_table[phase_id].green_movements:
        total += sim.lanes[in_lane].n_ov - sim.lanes[out_lane].n_ov
    return total


def max_pressure(sim, node_id: int, cfg: BaselineConfig) -> int:
    """Greedy highest-pressure phase, held at least the minimum time."""
    if sim.phase_age[node_id] < cfg.maxpressure_min_phase_s:
        return sim.phase[node_id]
    node = sim.graph.nodes[node_id]
    best, best_p = 0, -math.inf
    for phase in node.phase_table:
        p = phase_pressure(sim, node_id, phase.id)
        if p > best_p:
            best, best_p = phase.id, p
    return best


def _ev_approaches(sim, node_id: int, threshold_m: float):
    """(distance, ev, route position) for EVs within threshold upstream."""
    graph: RoadGraph = sim.graph
    hits = []
    for ev in sim.active_evs:
        seg = graph.segment(ev.segment_id)
        dist = seg.length_m - ev.offset
        pos = ev.route_index + 1
        while pos < len(ev.route) and dist <= threshold_m:
            if ev.route[pos] == node_id:
                hits.append((dist, ev, pos))
                break
            if pos + 1 >= len(ev.route):
                break
            nxt = graph.edge(ev.route[pos], ev.route[pos + 1])
            dist += nxt.length_m
            pos += 1
    return hits


def green_wave(sim, node_id: int, cfg: BaselineConfig, fallback) -> int:
    """Greens the phase of the nearest approaching EV, else falls back.

    An EV within the distance threshold upstream of the intersection wins
    the signal for its movement; right-turn movements need no signal, so
    the fallback policy answers for them too.
    """
    hits = _ev_approaches(sim, node_id, cfg.greenwave_threshold_m)
    node = sim.graph.nodes[node_id]
    for dist, ev, pos in sorted(hits, key=lambda h: (h[0], h[1].id)):
        if pos + 1 >= len(ev.route):
            continue  # EV terminates here; no movement to serve
        seg_in = sim.graph.edge(ev.route[pos - 1], ev.route[pos])
        seg_out = sim.graph.edge(ev.route[pos], ev.route[pos + 1])
        movement = next(
            (m for m in node.movements
             if m.in_lane[0] == seg_in.id and m.out_lane[0] == seg_out.id),
            None)
        if movement is None or movement.turn == RIGHT:
            continue
        for phase in node.phase_table:
            if (movement.in_lane, movement.out_lane) in phase.green_movements:
                return phase.id
    return fallback(sim, node_id)


def dijkstra_route(graph: RoadGraph, sim, v_o: int, v_d: int) -> list[int]:
    """Minimum-travel-time route at current average speeds, never replanned.

    Edge cost is length over the segment's trailing average speed at call
    time. Returns the empty route when origin equals destination.
    """
    if v_o == v_d:
        return []
    if v_o not in graph.nodes or v_d not in graph.nodes:
        raise ValueError(f"unknown intersection in ({v_o}, {v_d})")
    dist: dict[int, float] = {v_o: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, v_o)]
    while heap:
        d, nid = heapq.heappop(heap)
        if nid == v_d:
            break
        if d > dist.get(nid, math.inf):
            continue
        for seg_id in graph.adjacency[nid]:
            seg = graph.segment_by_id[seg_id]
            cost = seg.length_m / sim.segment_avg_speed(seg.id)
            nd = d + cost
            if nd < dist.get(seg.to, math.inf):
                dist[seg.to] = nd
                prev[seg.to] = nid
                heapq.heappush(heap, (nd, seg.to))
    if v_d not in dist:
        raise RoutingError(f"destination {v_d} unreachable from {v_o}")
    path = [v_d]
    while path[-1] != v_o:
        path.append(prev[path[-1]])
    path.reverse()
    return path

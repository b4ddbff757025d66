"""Real-time potential-field route planning for emergency vehicles.

Each neighbor of the vehicle's upcoming intersection is scored by a
benefit B = gravity - long-term repulsion:

* gravity is the rate of progress toward the destination: the network
  distance saved by moving to that neighbor, divided by the current
  average speed on the connecting road;
* immediate repulsion estimates the traversal time of the connecting
  road: the unqueued stretch at the road's average speed plus the queued
  stretch at the legal crossing speed;
* long-term repulsion extends immediate repulsion along downstream
  roads with a discount per step, up to a fixed search depth, always
  excluding the node just arrived from.

The route is replanned from scratch every replan interval, so only the
first hop of each plan is binding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .road_network import RoadGraph


class RoutingError(Exception):
    """Raised when no drivable route to the destination exists."""


@dataclass
class PlannerConfig:
    lam: float = 0.8  # discount per search step
    depth: int = 4  # max search depth
    replan_interval_s: int = 10
    crossing_speed_mps: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if self.depth < 1:
            raise ValueError("search depth must be >= 1")
        if self.crossing_speed_mps <= 0:
            raise ValueError("crossing speed must be > 0")


@dataclass
class FieldSample:
    neighbor: int
    gravity: float
    immediate: float
    long_term: float

    @property
    def benefit(self) -> float:
        return self.gravity - self.long_term


def gravity(state, v_c: int, v_i: int, v_d: int) -> float:
    """Progress rate toward v_d gained by moving from v_c to neighbor v_i.

    Returns -inf when the destination is unreachable from v_i, which
    disqualifies the neighbor.
    """
    graph: RoadGraph = state.graph
    d_ci = graph.network_distance(v_c, v_d)
    d_id = graph.network_distance(v_i, v_d)
    if math.isinf(d_id) or math.isinf(d_ci):
        return -math.inf
    edge = graph.edge(v_c, v_i)
    if edge is None:
        raise ValueError(f"no road segment from {v_c} to {v_i}")
    speed = state.segment_avg_speed(edge.id)
    return (d_ci - d_id) / speed


def immediate_repulsion(state, v_c: int, v_i: int,
                        cfg: PlannerConfig | None = None) -> float:
    """Estimated traversal time of the road from v_c to v_i, in seconds."""
    graph: RoadGraph = state.graph
    edge = graph.edge(v_c, v_i)
    if edge is None:
        raise ValueError(f"no road segment from {v_c} to {v_i}")
    crossing = (cfg or PlannerConfig()).crossing_speed_mps
    queue_m = min(edge.length_m, state.segment_queue_m(edge.id))
    speed = state.segment_avg_speed(edge.id)
    return (edge.length_m - queue_m) / speed + queue_m / crossing


def _recursion_neighbors(graph: RoadGraph, node: int, exclude: int) -> list[int]:
    out = []
    for seg_id in graph.adjacency[node]:
        to = graph.segment_by_id[seg_id].to
        if to != exclude and not graph.nodes[to].virtual:
            out.append(to)
    return out


class _FieldEvaluator:
    """Memoized evaluation of the discounted repulsion recursion."""

    def __init__(self, state, cfg: PlannerConfig):
        self.state = state
        self.graph: RoadGraph = state.graph
        self.cfg = cfg
        self._immediate: dict[tuple[int, int], float] = {}
        self._memo: dict[tuple[int, int, int], float] = {}

    def immediate(self, a: int, b: int) -> float:
        key = (a, b)
        val = self._immediate.get(key)
        if val is None:
            val = immediate_repulsion(self.state, a, b, self.cfg)
            self._immediate[key] = val
        return val

    def long_term(self, v_c: int, v_i: int, depth: int) -> float:
        key = (v_c, v_i, depth)
        val = self._memo.get(key)
        if val is not None:
            return val
        val = self.immediate(v_c, v_i)
        if depth > 1:
            nbrs = _recursion_neighbors(self.graph, v_i, v_c)
            if nbrs:
                val = val + self.cfg.lam * min(
                    self.long_term(v_i, v_j, depth - 1) for v_j in nbrs)
        self._memo[key] = val
        return val

    def best_branch(self, v_c: int, v_i: int, depth: int,
                    v_d: int) -> int | None:
        """Neighbor of v_i attaining the recursion minimum.

        Ties are broken toward the destination, then by lower id, so that
        on a uniform network the extension degenerates to a shortest path.
        """
        nbrs = _recursion_neighbors(self.graph, v_i, v_c)
        if depth <= 1 or not nbrs:
            return None
        ranked = sorted(
            nbrs,
            key=lambda j: (self.long_term(v_i, j, depth - 1),
                           self.graph.network_distance(j, v_d), j))
        return ranked[0]


def long_term_repulsion(state, v_c: int, v_i: int, cfg: PlannerConfig) -> float:
    """Depth-limited discounted repulsion along the cheapest continuation."""
    return _FieldEvaluator(state, cfg).long_term(v_c, v_i, cfg.depth)


def evaluate_neighbors(state, v_c: int, v_d: int, cfg: PlannerConfig,
                       exclude: int | None = None) -> list[FieldSample]:
    """Field samples for every eligible neighbor of v_c, sorted by id."""
    graph: RoadGraph = state.graph
    ev = _FieldEvaluator(state, cfg)
    samples = []
    for v_i in sorted(set(graph.neighbors(v_c))):
        if v_i == exclude:
            continue
        if graph.nodes[v_i].virtual and v_i != v_d:
            continue  # exit terminals are dead ends unless they are the goal
        g = gravity(state, v_c, v_i, v_d)
        if math.isinf(g):
            samples.append(FieldSample(v_i, g, math.inf, math.inf))
            continue
        samples.append(FieldSample(
            v_i, g, ev.immediate(v_c, v_i), ev.long_term(v_c, v_i, cfg.depth)))
    return samples


def plan_route(state, v_c: int, v_d: int, cfg: PlannerConfig,
               came_from: int | None = None) -> list[int]:
    """Route from v_c to v_d whose first hop maximizes the benefit.

    After the first hop the route follows the recursion's cheapest branch
    until the search depth runs out, then a static shortest path completes
    it. ``came_from`` excludes the node just left (no u-turns).
    """
    graph: RoadGraph = state.graph
    if v_c == v_d:
        return [v_c]
    samples = [s for s in evaluate_neighbors(state, v_c, v_d, cfg, came_from)
               if not math.isinf(s.benefit)]
    if not samples:
        raise RoutingError(f"destination {v_d} unreachable from {v_c}")
    best = max(samples, key=lambda s: (s.benefit, -s.neighbor))
    route = [v_c, best.neighbor]
    evaluator = _FieldEvaluator(state, cfg)
    remaining = cfg.depth - 1
    while route[-1] != v_d and remaining >= 1:
        branch = evaluator.best_branch(route[-2], route[-1], remaining + 1, v_d)
        if branch is None:
            break
        if math.isinf(graph.network_distance(branch, v_d)):
            break  # cheapest branch walked off the reachable set
        route.append(branch)
        remaining -= 1
    if route[-1] != v_d:
        tail = graph.shortest_path(route[-1], v_d,
                                   forbidden_first_hop=route[-2])
        if tail is None:
            tail = graph.shortest_path(route[-1], v_d)
        if tail is None:
            raise RoutingError(f"destination {v_d} unreachable from {route[-1]}")
        route.extend(tail[1:])
    return route


def plan_next(state, ev, cfg: PlannerConfig) -> list[int]:
    """Replanned route suffix for an en-route EV, from its next intersection.

    The EV keeps its current segment; the returned route starts at that
    segment's end node and reaches the EV's destination.
    """
    route, _ = plan_next_with_samples(state, ev, cfg)
    return route


def plan_next_with_samples(state, ev,
                           cfg: PlannerConfig) -> tuple[list[int], list[FieldSample]]:
    """plan_next plus the per-neighbor field samples behind the decision."""
    if ev.destination is None:
        raise RoutingError(f"vehicle {ev.id} has no destination")
    v_c = ev.route[ev.route_index + 1]
    came_from = ev.route[ev.route_index]
    if v_c == ev.destination:
        return [v_c], []
    samples = evaluate_neighbors(state, v_c, ev.destination, cfg, came_from)
    route = plan_route(state, v_c, ev.destination, cfg, came_from=came_from)
    return route, samples


def decisions_to_csv(decisions) -> str:
    """Audit log of planner decisions: one row per (replan, neighbor)."""
    lines = ["tick,ev_id,at_intersection,chosen_next,neighbor,benefit"]
    for tick, ev_id, v_c, chosen, samples in decisions:
        for s in samples:
            lines.append(f"{tick},{ev_id},{v_c},{chosen},{s.neighbor},{s.benefit}")
    return "\n".join(lines) + "\n"

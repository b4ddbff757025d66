"""Per-intersection agent interface: observations, reward, neighbor selection.

The observation layout is fixed at 52 entries so one shared critic serves
every agent:

    [0:4]    current phase, one-hot
    [4:16]   OV count per incoming lane, sides N,E,S,W x lanes L,S,R
    [16:28]  OV count per outgoing lane, same slot order
    [28:40]  EV count per incoming lane
    [40:52]  EV count per outgoing lane

Counts cover both queued and moving vehicles on a lane. Lanes absent at an
intersection stay zero, so partially connected intersections share the
same input shape.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .road_network import (
    NORTH, EAST, SOUTH, WEST, RoadGraph, TURN_EXIT_SIDE,
)

OBS_WIDTH = 4 + 4 * 12
_SIDES = (NORTH, EAST, SOUTH, WEST)
_PHASE0, _OV_IN0, _OV_OUT0, _EV_IN0, _EV_OUT0 = 0, 4, 16, 28, 40

# Canonical movement slots: (incoming side, turn) -> outgoing side.
_CANONICAL_MOVEMENTS = tuple(
    (side, turn, TURN_EXIT_SIDE[side][turn])
    for side in _SIDES for turn in (0, 1, 2))


@dataclass
class Observation:
    node_id: int
    vector: np.ndarray  # shape (OBS_WIDTH,)

    @property
    def phase_onehot(self) -> np.ndarray:
        return self.vector[_PHASE0:_OV_IN0]

    @property
    def ov_in(self) -> np.ndarray:
        return self.vector[_OV_IN0:_OV_OUT0]

    @property
    def ov_out(self) -> np.ndarray:
        return self.vector[_OV_OUT0:_EV_IN0]

    @property
    def ev_in(self) -> np.ndarray:
        return self.vector[_EV_IN0:_EV_OUT0]

    @property
    def ev_out(self) -> np.ndarray:
        return self.vector[_EV_OUT0:]


@dataclass
class AgentConfig:
    neighbors: int = 6  # K, includes the intersection itself
    route_discount: float = 0.5  # delta applied to edges on active EV routes
    ev_share: float = 0.01  # eta in the reward


def observe(sim, node_id: int) -> Observation:
    graph: RoadGraph = sim.graph
    node = graph.node(node_id)
    vec = np.zeros(OBS_WIDTH)
    vec[_PHASE0 + sim.phase[node_id]] = 1.0
    for side in _SIDES:
        seg_in = node.incoming.get(side)
        if seg_in is not None:
            lanes = graph.segment_by_id[seg_in].lanes
            for k in range(min(3, lanes)):
                lane = sim.lanes[(seg_in, k)]
                slot = side * 3 + k
                vec[_OV_IN0 + slot] = lane.n_ov
                vec[_EV_IN0 + slot] = lane.n_ev
        seg_out = node.outgoing.get(side)
        if seg_out is not None:
            lanes = graph.segment_by_id[seg_out].lanes
            for k in range(min(3, lanes)):
                lane = sim.lanes[(seg_out, k)]
                slot = side * 3 + k
                vec[_OV_OUT0 + slot] = lane.n_ov
                vec[_EV_OUT0 + slot] = lane.n_ev
    return Observation(node_id, vec)


def pressure(obs: Observation) -> float:
    """Total absolute OV imbalance across the canonical movements."""
    ov_in, ov_out = obs.ov_in, obs.ov_out
    total = 0.0
    for side, turn, exit_side in _CANONICAL_MOVEMENTS:
        total += abs(ov_in[side * 3 + turn] - ov_out[exit_side * 3 + turn])
    return total


def reward(obs: Observation, eta: float) -> float:
    """Weighted penalty on waiting EVs and OV pressure; always <= 0."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"ev share eta must be in (0, 1), got {eta}")
    l_e = float(obs.ev_in.sum())
    return -l_e / eta - pressure(obs) / (1.0 - eta)


class DynamicGraph:
    """Road graph reweighted along active EV routes.

    Directed edges lying on an EV's remaining route have their length
    multiplied by ``delta``; every other edge keeps its base length.
    Pairwise relational distances are shortest-path sums over these
    weights, restricted to signalized intersections.
    """

    def __init__(self, graph: RoadGraph, discounted: frozenset, delta: float):
        self.graph = graph
        self.delta = delta
        self.discounted = discounted
        self.flagged_queries = 0
        self.total_queries = 0
        self._into: dict[int, list] = {n.id: [] for n in graph.intersections}
        for seg in graph.segments:
            if graph.nodes[seg.frm].virtual or graph.nodes[seg.to].virtual:
                continue
            self._into[seg.to].append(seg)
        self._dist_to: dict[int, dict[int, float]] = {}

    def edge_weight(self, frm: int, to: int) -> float:
        seg = self.graph.edge(frm, to)
        if seg is None:
            raise ValueError(f"no road segment from {frm} to {to}")
        if (frm, to) in self.discounted:
            return seg.length_m * self.delta
        return seg.length_m

    def base_weight(self, frm: int, to: int) -> float:
        seg = self.graph.edge(frm, to)
        if seg is None:
            raise ValueError(f"no road segment from {frm} to {to}")
        return seg.length_m

    def distances_to(self, target: int) -> dict[int, float]:
        """Relational distance from every reaching intersection to target."""
        cached = self._dist_to.get(target)
        if cached is not None:
            return cached
        dist = {target: 0.0}
        heap = [(0.0, target)]
        while heap:
            d, nid = heapq.heappop(heap)
            if d > dist.get(nid, math.inf):
                continue
            for seg in self._into[nid]:
                w = seg.length_m * (
                    self.delta if (seg.frm, seg.to) in self.discounted else 1.0)
                nd = d + w
                if nd < dist.get(seg.frm, math.inf):
                    dist[seg.frm] = nd
                    heapq.heappush(heap, (nd, seg.frm))
        self._dist_to[target] = dist
        return dist

    def relational_distance(self, frm: int, to: int) -> float:
        return self.distances_to(to).get(frm, math.inf)

    def candidate_frontier(self, target: int, want: int) -> tuple[list[int], int, bool]:
        """Hop-bounded breadth-first candidate set on the reverse graph.

        Expands whole hop levels until at least ``want`` signalized nodes
        are collected. Returns (candidates, completed hop radius,
        exhausted flag).
        """
        seen = {target}
        frontier = [target]
        hops = 0
        while len(seen) < want:
            nxt = []
            for nid in frontier:
                for seg in self._into[nid]:
                    if seg.frm not in seen:
                        seen.add(seg.frm)
                        nxt.append(seg.frm)
            if not nxt:
                return sorted(seen), hops, True
            frontier = nxt
            hops += 1
        # Levels are always completed, so only the last frontier can still
        # have unexplored parents.
        exhausted = not any(seg.frm not in seen
                            for nid in frontier for seg in self._into[nid])
        return sorted(seen), hops, exhausted


@dataclass
class NeighborSet:
    target: int
    ids: list[int]
    distances: list[float] = field(default_factory=list)
    exact: bool = True


def active_ev_route_edges(sim) -> frozenset:
    """Directed edges on the remaining routes of all active EVs."""
    edges = set()
    for ev in sim.active_evs:
        rest = ev.route[ev.route_index:]
        edges.update(zip(rest, rest[1:]))
    return frozenset(edges)


def relational_distances(graph: RoadGraph, active_ev_routes,
                         delta: float) -> DynamicGraph:
    """Dynamic directed graph discounting edges along active EV routes."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"route discount delta must be in (0, 1], got {delta}")
    discounted = set()
    if isinstance(active_ev_routes, frozenset):
        discounted = set(active_ev_routes)
    else:
        for route in active_ev_routes:
            discounted.update(zip(route, route[1:]))
    discounted = {(a, b) for a, b in discounted if graph.edge(a, b) is not None}
    return DynamicGraph(graph, frozenset(discounted), delta)


def top_k(dgraph: DynamicGraph, v_i: int, k: int) -> NeighborSet:
    """K nearest intersections to v_i by relational distance, self included.

    The candidate pool is a breadth-first frontier of about 2K nodes; a
    query is flagged inexact when the K-th distance cannot be guaranteed
    against unexplored nodes.
    """
    graph = dgraph.graph
    if graph.nodes[v_i].virtual:
        raise ValueError(f"intersection {v_i} is a virtual terminal")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_real = len(graph.intersections)
    if k > n_real:
        warnings.warn(f"k={k} exceeds network size {n_real}; clamping")
        k = n_real
    candidates, _, exhausted = dgraph.candidate_frontier(v_i, 2 * k)
    dist = dgraph.distances_to(v_i)
    ranked = sorted(candidates, key=lambda nid: (dist[nid], nid))[:k]
    distances = [dist[nid] for nid in ranked]
    dgraph.total_queries += 1
    exact = True
    if not exhausted and len(ranked) == k:
        # The selection pool is the bounded frontier; the query is exact
        # unless some node outside the pool sits at or inside the K-th
        # distance (then ties or closer nodes could be missed).
        pool = set(candidates)
        outside = min((d for nid, d in dist.items() if nid not in pool),
                      default=math.inf)
        if outside <= distances[-1]:
            exact = False
            dgraph.flagged_queries += 1
    return NeighborSet(v_i, ranked, distances, exact)


def neighbor_observation_matrix(sim, neighbor_set: NeighborSet) -> np.ndarray:
    """Stacked observations of a neighbor set, target intersection first."""
    rows = [observe(sim, nid).vector for nid in neighbor_set.ids]
    return np.stack(rows, axis=0)

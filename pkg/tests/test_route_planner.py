import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evsched.road_network import (
    Intersection, RoadGraph, RoadSegment, build_grid, validate_route,
)
from evsched.route_planner import (
    FieldSample, PlannerConfig, RoutingError, evaluate_neighbors, gravity,
    immediate_repulsion, long_term_repulsion, plan_next, plan_route,
)


class StubState:
    """Planner-facing view with hand-set per-segment speeds and queues."""

    def __init__(self, graph, speed=10.0):
        self.graph = graph
        self.default_speed = speed
        self.speeds = {}
        self.queues = {}

    def set_edge(self, a, b, speed=None, queue_m=None):
        seg = self.graph.edge(a, b)
        if speed is not None:
            self.speeds[seg.id] = speed
        if queue_m is not None:
            self.queues[seg.id] = queue_m

    def segment_avg_speed(self, seg_id):
        return self.speeds.get(seg_id, self.default_speed)

    def segment_queue_m(self, seg_id):
        return self.queues.get(seg_id, 0.0)


def line_graph(lengths, speed=10.0):
    """0 -> 1 -> ... -> n with given edge lengths (one way)."""
    nodes = [Intersection(id=i, position=(float(i), 0.0))
             for i in range(len(lengths) + 1)]
    segs = [RoadSegment(i, i, i + 1, float(l), 3, speed)
            for i, l in enumerate(lengths)]
    return RoadGraph(nodes, segs, [])


def random_graph(rng, n_nodes, p_edge=0.45):
    nodes = [Intersection(id=i, position=(float(rng.integers(0, 100)),
                                          float(rng.integers(0, 100))))
             for i in range(n_nodes)]
    segs = []
    sid = 0
    for a in range(n_nodes):
        for b in range(n_nodes):
            if a != b and rng.random() < p_edge:
                segs.append(RoadSegment(sid, a, b,
                                        float(rng.integers(50, 400)), 3, 10.0))
                sid += 1
    return RoadGraph(nodes, segs, [])


def real_neighbors(graph, node, exclude):
    return [graph.segment_by_id[s].to for s in graph.adjacency[node]
            if graph.segment_by_id[s].to != exclude
            and not graph.nodes[graph.segment_by_id[s].to].virtual]


def oracle_long_term(state, v_c, v_i, cfg):
    """Exhaustive enumeration of depth-bounded no-backtrack walks."""
    graph = state.graph
    walks = []

    def extend(prev, cur, depth_left, acc):
        nbrs = real_neighbors(graph, cur, prev)
        if depth_left == 0 or not nbrs:
            walks.append(list(acc))
            return
        for j in nbrs:
            acc.append((cur, j))
            extend(cur, j, depth_left - 1, acc)
            acc.pop()

    extend(v_c, v_i, cfg.depth - 1, [(v_c, v_i)])
    best = math.inf
    for walk in walks:
        value = immediate_repulsion(state, *walk[-1], cfg)
        for a, b in reversed(walk[:-1]):
            value = immediate_repulsion(state, a, b, cfg) + cfg.lam * value
        best = min(best, value)
    return best


def test_gravity_zero_when_equidistant():
    nodes = [Intersection(id=i, position=(float(i), 0.0)) for i in range(3)]
    segs = [RoadSegment(0, 0, 1, 50.0, 3, 10.0),
            RoadSegment(1, 0, 2, 100.0, 3, 10.0),
            RoadSegment(2, 1, 2, 100.0, 3, 10.0)]
    state = StubState(RoadGraph(nodes, segs, []))
    assert gravity(state, 0, 1, 2) == 0.0


def test_gravity_direct_evaluation():
    state = StubState(line_graph([300.0, 300.0]))
    # 600 m to go from the current node, 300 m from the neighbor, speed 10
    assert gravity(state, 0, 1, 2) == pytest.approx(30.0)


def test_gravity_negative_when_leading_away():
    g = build_grid(1, 3, 300.0, 10.0)  # 0 - 1 - 2 west to east
    state = StubState(g)
    assert gravity(state, 1, 0, 2) < 0.0


def test_gravity_unreachable_sentinel():
    nodes = [Intersection(id=i, position=(float(i), 0.0)) for i in range(3)]
    segs = [RoadSegment(0, 0, 1, 100.0, 3, 10.0)]  # node 2 unreachable
    state = StubState(RoadGraph(nodes, segs, []))
    assert gravity(state, 0, 1, 2) == -math.inf


def test_immediate_repulsion_examples():
    state = StubState(line_graph([300.0]))
    cfg = PlannerConfig(crossing_speed_mps=5.0)
    assert immediate_repulsion(state, 0, 1, cfg) == pytest.approx(30.0)
    state.set_edge(0, 1, queue_m=60.0)
    assert immediate_repulsion(state, 0, 1, cfg) == pytest.approx(36.0)
    state.set_edge(0, 1, queue_m=300.0)
    assert immediate_repulsion(state, 0, 1, cfg) == pytest.approx(60.0)


def test_long_term_depth_one_equals_immediate():
    state = StubState(line_graph([120.0, 250.0, 80.0]))
    cfg = PlannerConfig(depth=1)
    assert long_term_repulsion(state, 0, 1, cfg) == \
        immediate_repulsion(state, 0, 1, cfg)


def test_long_term_chain_hand_unrolled():
    state = StubState(line_graph([100.0, 200.0]))  # repulsions 10 and 20
    cfg = PlannerConfig(lam=0.8, depth=2)
    assert long_term_repulsion(state, 0, 1, cfg) == pytest.approx(26.0)


@given(seed=st.integers(0, 100_000))
@settings(max_examples=40, deadline=None)
def test_long_term_matches_enumeration_oracle(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    graph = random_graph(rng, int(rng.integers(3, 9)))
    if not graph.segments:
        return
    state = StubState(graph)
    for seg in graph.segments:
        if rng.random() < 0.5:
            state.queues[seg.id] = float(rng.integers(0, 40)) * 7.5
        state.speeds[seg.id] = float(rng.integers(2, 12))
    cfg = PlannerConfig(lam=0.8, depth=int(rng.integers(1, 5)))
    seg = graph.segments[int(rng.integers(0, len(graph.segments)))]
    got = long_term_repulsion(state, seg.frm, seg.to, cfg)
    assert got == oracle_long_term(state, seg.frm, seg.to, cfg)


@given(q1=st.floats(0, 250), q2=st.floats(0, 250),
       speed=st.floats(5.0, 15.0), crossing=st.floats(1.0, 5.0))
@settings(max_examples=60, deadline=None)
def test_immediate_repulsion_monotone_in_queue(q1, q2, speed, crossing):
    # holds whenever the crossing speed does not exceed the traffic speed
    lo, hi = sorted((q1, q2))
    state = StubState(line_graph([300.0]))
    cfg = PlannerConfig(crossing_speed_mps=crossing)
    state.set_edge(0, 1, speed=speed, queue_m=lo)
    f_lo = immediate_repulsion(state, 0, 1, cfg)
    state.set_edge(0, 1, queue_m=hi)
    f_hi = immediate_repulsion(state, 0, 1, cfg)
    assert f_hi >= f_lo - 1e-9


def test_benefit_identity():
    state = StubState(build_grid(3, 3, 300.0, 10.0))
    samples = evaluate_neighbors(state, 4, 8, PlannerConfig())
    assert samples
    for s in samples:
        if not math.isinf(s.benefit):
            assert s.benefit == s.gravity - s.long_term


def test_plan_route_forced_single_edge():
    state = StubState(line_graph([100.0]))
    assert plan_route(state, 0, 1, PlannerConfig()) == [0, 1]


def test_plan_route_uniform_network_reduces_to_shortest_path():
    g = build_grid(3, 3, 300.0, 10.0)
    state = StubState(g)
    route = plan_route(state, 0, 8, PlannerConfig())
    assert route[0] == 0 and route[-1] == 8
    length = sum(g.edge(a, b).length_m for a, b in zip(route, route[1:]))
    assert length == g.network_distance(0, 8)
    assert route[1] == 1  # tie between 1 and 3 broken by lower id


def test_plan_route_prefers_free_detour_over_congested_edge():
    g = build_grid(2, 2, 100.0, 10.0)
    state = StubState(g)
    state.set_edge(0, 1, queue_m=100.0)  # direct east edge fully queued
    cfg = PlannerConfig(lam=0.8, depth=2, crossing_speed_mps=5.0)
    samples = {s.neighbor: s for s in evaluate_neighbors(state, 0, 3, cfg)}
    assert samples[2].benefit > samples[1].benefit
    route = plan_route(state, 0, 3, cfg)
    assert route == [0, 2, 3]


def test_plan_route_unreachable_destination():
    nodes = [Intersection(id=i, position=(float(i), 0.0)) for i in range(3)]
    segs = [RoadSegment(0, 0, 1, 100.0, 3, 10.0)]
    state = StubState(RoadGraph(nodes, segs, []))
    with pytest.raises(RoutingError):
        plan_route(state, 0, 2, PlannerConfig())


def test_plan_next_uses_upcoming_intersection_and_blocks_uturn():
    g = build_grid(1, 3, 300.0, 10.0)
    state = StubState(g)

    class FakeEV:
        id = "ev"
        route = [0, 1, 2]
        route_index = 0
        destination = 2

    route = plan_next(state, FakeEV(), PlannerConfig())
    assert route[0] == 1 and route[-1] == 2
    assert route[1] != 0  # never plans straight back where it came from


@given(seed=st.integers(0, 50_000))
@settings(max_examples=25, deadline=None)
def test_planned_routes_always_valid_and_terminate(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    rows, cols = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    g = build_grid(rows, cols, 200.0, 10.0)
    state = StubState(g)
    for seg in g.segments:
        if rng.random() < 0.4:
            state.queues[seg.id] = float(rng.integers(0, 26)) * 7.5
            state.speeds[seg.id] = float(rng.integers(2, 11))
    ids = [n.id for n in g.intersections]
    v_c = ids[int(rng.integers(0, len(ids)))]
    v_d = ids[int(rng.integers(0, len(ids)))]
    if v_c == v_d:
        return
    route = plan_route(state, v_c, v_d, PlannerConfig(depth=int(rng.integers(1, 5))))
    assert route[-1] == v_d
    validate_route(g, route)


def test_planner_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(lam=0.0)
    with pytest.raises(ValueError):
        PlannerConfig(lam=1.2)
    with pytest.raises(ValueError):
        PlannerConfig(depth=0)
    with pytest.raises(ValueError):
        PlannerConfig(crossing_speed_mps=-1)

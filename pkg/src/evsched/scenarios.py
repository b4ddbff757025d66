"""Scenario generators for the grid benchmarks.

The synthetic grid carries uniform bidirectional straight-through flows:
every east-west entry lane inserts at one rate, every south-north entry
lane at a lower one. Vehicles travel straight across the grid, so each
approach feeds exactly one (the straight) lane; rates are therefore per
entry lane. A fixed share of generated vehicles is flagged as EVs, whose
routes a router may override at run time.
"""

from __future__ import annotations

from .road_network import (
    EAST, NORTH, SOUTH, WEST, FlowGroup, FlowSpec, FlowVehicle, RoadGraph,
    build_grid,
)

EW_RATE_VEH_PER_HOUR = 300.0
SN_RATE_VEH_PER_HOUR = 90.0
DEFAULT_EV_FRACTION = 0.01
DEFAULT_SPEED_MPS = 11.11
DEFAULT_SEGMENT_M = 300.0


def _entry_terminal(graph: RoadGraph, node_id: int, side: int) -> int:
    seg = graph.node(node_id).incoming[side]
    return graph.segment_by_id[seg].frm


def _exit_terminal(graph: RoadGraph, node_id: int, side: int) -> int:
    seg = graph.node(node_id).outgoing[side]
    return graph.segment_by_id[seg].to


def _through_route(graph: RoadGraph, nodes: list[int], entry_side: int,
                   exit_side: int) -> list[int]:
    entry = _entry_terminal(graph, nodes[0], entry_side)
    exit_ = _exit_terminal(graph, nodes[-1], exit_side)
    return [entry] + nodes + [exit_]


def grid_scenario(rows: int, cols: int,
                  segment_length_m: float = DEFAULT_SEGMENT_M,
                  speed_limit_mps: float = DEFAULT_SPEED_MPS,
                  ew_rate: float = EW_RATE_VEH_PER_HOUR,
                  sn_rate: float = SN_RATE_VEH_PER_HOUR,
                  ev_fraction: float = DEFAULT_EV_FRACTION,
                  duration_s: int = 3600) -> tuple[RoadGraph, FlowSpec]:
    """Uniform bidirectional straight-through demand on an r x c grid.

    Entry lanes: 2 * rows east-west plus 2 * cols south-north. The
    network-wide entry rate in vehicles per 300 s is
    2 * (rows * ew_rate + cols * sn_rate) / 12.
    """
    graph = build_grid(rows, cols, segment_length_m, speed_limit_mps)
    flows = FlowSpec(duration_s=duration_s)

    def add(route, rate):
        if rate > 0:
            flows.groups.append(FlowGroup(
                route=route, rate_veh_per_hour=rate, ev_fraction=ev_fraction))

    for r in range(rows):
        row_nodes = [r * cols + c for c in range(cols)]
        add(_through_route(graph, row_nodes, WEST, EAST), ew_rate)
        add(_through_route(graph, row_nodes[::-1], EAST, WEST), ew_rate)
    for c in range(cols):
        col_nodes = [r * cols + c for r in range(rows)]
        add(_through_route(graph, col_nodes, SOUTH, NORTH), sn_rate)
        add(_through_route(graph, col_nodes[::-1], NORTH, SOUTH), sn_rate)
    return graph, flows


def synthetic_6x6() -> tuple[RoadGraph, FlowSpec]:
    """The standard 6x6 benchmark: 300 m segments, 3 lanes per approach,
    300 veh/lane/hour east-west and 90 veh/lane/hour south-north, 1% EVs."""
    return grid_scenario(6, 6)


def entry_rate_per_300s(flows: FlowSpec) -> float:
    return sum(g.rate_veh_per_hour for g in flows.groups) / 12.0


def greenwave_tradeoff(duration_s: int = 900) -> tuple[RoadGraph, FlowSpec]:
    """Corridor scenario for the preemption threshold tradeoff.

    One EV runs east along a 1 x 5 corridor while every intersection
    carries heavy crossing traffic. Evaluating it under different
    green-wave thresholds exposes the tension between EV delay (threshold
    too small: the queue ahead has no time to clear) and cross-street
    delay (threshold too large: opposing flows are held needlessly).
    """
    cols = 5
    graph = build_grid(1, cols, DEFAULT_SEGMENT_M, 10.0)
    flows = FlowSpec(duration_s=duration_s)
    row_nodes = list(range(cols))
    flows.groups.append(FlowGroup(
        route=_through_route(graph, row_nodes, WEST, EAST),
        rate_veh_per_hour=240.0))
    for c in range(cols):
        flows.groups.append(FlowGroup(
            route=_through_route(graph, [c], SOUTH, NORTH),
            rate_veh_per_hour=360.0))
        flows.groups.append(FlowGroup(
            route=_through_route(graph, [c], NORTH, SOUTH),
            rate_veh_per_hour=360.0))
    flows.vehicles.append(FlowVehicle(
        id="ev-corridor", vclass="ev", depart_time_s=300,
        route=_through_route(graph, row_nodes, WEST, EAST)))
    return graph, flows

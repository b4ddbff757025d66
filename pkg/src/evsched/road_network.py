"""Static road-network model: intersections, directed segments, lanes, phases.

Conventions used throughout the package:

* Nodes are intersections. Signalized intersections live in
  ``RoadGraph.intersections``; virtual boundary terminals (where vehicles
  enter and leave a grid) live in ``RoadGraph.terminals``. Both share one
  integer id namespace.
* A lane is identified by ``(segment_id, lane_index)`` with lane indices
  LEFT=0, STRAIGHT=1, RIGHT=2. Vehicles pick the lane that permits their
  next turn, so no lane-change model is needed.
* Approaches are keyed by the compass side the traffic comes from
  (N, E, S, W). Traffic arriving from the north travels southbound.
* Each 4-way intersection has 12 movements (4 approaches x 3 turns).
  The 8 signalized ones are grouped into the 4 standard phases
  (WE-Straight, NS-Straight, WE-Left, NS-Left); right turns carry no
  signal and are always permitted.
"""

from __future__ import annotations

import json
import math
import heapq
from dataclasses import dataclass, field

# Lane indices by turn.
LEFT, STRAIGHT, RIGHT = 0, 1, 2
TURN_NAMES = ("left", "straight", "right")

# Compass sides, indexed N=0, E=1, S=2, W=3.
NORTH, EAST, SOUTH, WEST = 0, 1, 2, 3
SIDE_NAMES = ("N", "E", "S", "W")
SIDE_INDEX = {name: i for i, name in enumerate(SIDE_NAMES)}

# Exit side for traffic arriving from a given side, per turn. Traffic from
# the north heads south: its left turn exits east, straight exits south,
# right exits west (right-hand driving).
TURN_EXIT_SIDE = {
    NORTH: {LEFT: EAST, STRAIGHT: SOUTH, RIGHT: WEST},
    EAST: {LEFT: SOUTH, STRAIGHT: WEST, RIGHT: NORTH},
    SOUTH: {LEFT: WEST, STRAIGHT: NORTH, RIGHT: EAST},
    WEST: {LEFT: NORTH, STRAIGHT: EAST, RIGHT: SOUTH},
}

# The four phase actions, in fixed order. Each names (approach side, turn)
# pairs whose movements are green.
PHASE_SPECS = (
    ("WE-Straight", ((WEST, STRAIGHT), (EAST, STRAIGHT))),
    ("NS-Straight", ((NORTH, STRAIGHT), (SOUTH, STRAIGHT))),
    ("WE-Left", ((WEST, LEFT), (EAST, LEFT))),
    ("NS-Left", ((NORTH, LEFT), (SOUTH, LEFT))),
)
NUM_PHASES = len(PHASE_SPECS)

LaneId = tuple[int, int]


class ScenarioError(Exception):
    """Raised for unreadable, malformed, or inconsistent scenario data."""


@dataclass(frozen=True)
class RoadSegment:
    id: int
    frm: int
    to: int
    length_m: float
    lanes: int = 3
    speed_limit_mps: float = 11.11

    def __post_init__(self):
        if self.length_m <= 0:
            raise ValueError(f"segment {self.id}: length must be > 0")
        if self.speed_limit_mps <= 0:
            raise ValueError(f"segment {self.id}: speed limit must be > 0")
        if self.lanes < 1:
            raise ValueError(f"segment {self.id}: needs at least one lane")
        if self.frm == self.to:
            raise ValueError(f"segment {self.id}: loop edges are not allowed")

    def lane_for_turn(self, turn: int) -> int:
        return min(turn, self.lanes - 1)


@dataclass(frozen=True)
class Movement:
    in_lane: LaneId
    out_lane: LaneId
    turn: int


@dataclass(frozen=True)
class Phase:
    id: int
    name: str
    green_movements: frozenset[tuple[LaneId, LaneId]]


@dataclass
class Intersection:
    id: int
    position: tuple[float, float]
    incoming: dict[int, int] = field(default_factory=dict)  # side -> segment id
    outgoing: dict[int, int] = field(default_factory=dict)  # side -> segment id
    movements: list[Movement] = field(default_factory=list)
    phase_table: list[Phase] = field(default_factory=list)
    virtual: bool = False

    def incoming_lanes(self, segments: dict[int, RoadSegment]) -> list[LaneId]:
        out = []
        for side in (NORTH, EAST, SOUTH, WEST):
            seg = self.incoming.get(side)
            if seg is None:
                continue
            out.extend((seg, k) for k in range(segments[seg].lanes))
        return out

    def outgoing_lanes(self, segments: dict[int, RoadSegment]) -> list[LaneId]:
        out = []
        for side in (NORTH, EAST, SOUTH, WEST):
            seg = self.outgoing.get(side)
            if seg is None:
                continue
            out.extend((seg, k) for k in range(segments[seg].lanes))
        return out


@dataclass
class FlowVehicle:
    id: str
    vclass: str  # "ov" | "ev"
    depart_time_s: int
    route: list[int] | None  # None means planner-controlled ("auto")
    origin: int | None = None
    destination: int | None = None


@dataclass
class FlowGroup:
    """Uniform arrival process on one entry route, materialized per seed."""

    route: list[int]
    rate_veh_per_hour: float
    ev_fraction: float = 0.0
    start_s: int = 0
    end_s: int | None = None  # defaults to scenario duration


@dataclass
class FlowSpec:
    vehicles: list[FlowVehicle] = field(default_factory=list)
    groups: list[FlowGroup] = field(default_factory=list)
    duration_s: int = 3600


class RoadGraph:
    """Immutable after construction; safe for concurrent readers.

    ``intersections`` holds the signalized nodes, ``terminals`` the virtual
    boundary nodes. ``adjacency`` maps every node id to its outgoing
    segment ids, sorted by destination id.
    """

    def __init__(self, intersections: list[Intersection],
                 segments: list[RoadSegment],
                 terminals: list[Intersection] | None = None):
        self.intersections = list(intersections)
        self.terminals = list(terminals or [])
        self.segments = list(segments)
        self.nodes: dict[int, Intersection] = {}
        for node in self.intersections + self.terminals:
            if node.id in self.nodes:
                raise ScenarioError(f"duplicate intersection id {node.id}")
            self.nodes[node.id] = node
        self.segment_by_id: dict[int, RoadSegment] = {}
        for seg in self.segments:
            if seg.id in self.segment_by_id:
                raise ScenarioError(f"duplicate segment id {seg.id}")
            self.segment_by_id[seg.id] = seg
        self.adjacency: dict[int, list[int]] = {nid: [] for nid in self.nodes}
        self._edge_index: dict[tuple[int, int], int] = {}
        for seg in self.segments:
            for endpoint in (seg.frm, seg.to):
                if endpoint not in self.nodes:
                    raise ScenarioError(
                        f"segment {seg.id} references unknown intersection {endpoint}")
            self.adjacency[seg.frm].append(seg.id)
            self._edge_index[(seg.frm, seg.to)] = seg.id
        for nid in self.adjacency:
            self.adjacency[nid].sort(key=lambda s: self.segment_by_id[s].to)
        self._dist_cache: dict[int, dict[int, float]] = {}

    # -- queries ------------------------------------------------------------

    def node(self, node_id: int) -> Intersection:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise ValueError(f"unknown intersection id {node_id}") from None

    def segment(self, segment_id: int) -> RoadSegment:
        try:
            return self.segment_by_id[segment_id]
        except KeyError:
            raise ValueError(f"unknown segment id {segment_id}") from None

    def edge(self, frm: int, to: int) -> RoadSegment | None:
        seg_id = self._edge_index.get((frm, to))
        return None if seg_id is None else self.segment_by_id[seg_id]

    def neighbors(self, node_id: int) -> list[int]:
        return [self.segment_by_id[s].to for s in self.adjacency[node_id]]

    def internal_segments(self) -> list[RoadSegment]:
        return [s for s in self.segments
                if not self.nodes[s.frm].virtual and not self.nodes[s.to].virtual]

    def network_distance(self, v_a: int, v_b: int) -> float:
        """Shortest directed path length in meters; +inf if unreachable."""
        if v_a not in self.nodes:
            raise ValueError(f"unknown intersection id {v_a}")
        if v_b not in self.nodes:
            raise ValueError(f"unknown intersection id {v_b}")
        dist = self._dist_cache.get(v_a)
        if dist is None:
            dist = self._single_source(v_a)
            self._dist_cache[v_a] = dist
        return dist.get(v_b, math.inf)

    def _single_source(self, source: int) -> dict[int, float]:
        dist = {source: 0.0}
        heap = [(0.0, source)]
        while heap:
            d, nid = heapq.heappop(heap)
            if d > dist.get(nid, math.inf):
                continue
            for seg_id in self.adjacency[nid]:
                seg = self.segment_by_id[seg_id]
                nd = d + seg.length_m
                if nd < dist.get(seg.to, math.inf):
                    dist[seg.to] = nd
                    heapq.heappush(heap, (nd, seg.to))
        return dist

    def shortest_path(self, v_a: int, v_b: int,
                      forbidden_first_hop: int | None = None) -> list[int] | None:
        """Node sequence of a shortest directed path, or None if unreachable.

        ``forbidden_first_hop`` drops one outgoing edge of the source, used
        to avoid immediate backtracking when splicing route suffixes.
        """
        if v_a == v_b:
            return [v_a]
        dist = {v_a: 0.0}
        prev: dict[int, int] = {}
        heap = [(0.0, v_a)]
        while heap:
            d, nid = heapq.heappop(heap)
            if nid == v_b:
                break
            if d > dist.get(nid, math.inf):
                continue
            for seg_id in self.adjacency[nid]:
                seg = self.segment_by_id[seg_id]
                if nid == v_a and seg.to == forbidden_first_hop:
                    continue
                nd = d + seg.length_m
                if nd < dist.get(seg.to, math.inf):
                    dist[seg.to] = nd
                    prev[seg.to] = nid
                    heapq.heappush(heap, (nd, seg.to))
        if v_b not in dist:
            return None
        path = [v_b]
        while path[-1] != v_a:
            path.append(prev[path[-1]])
        path.reverse()
        return path

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        segments = self.segment_by_id
        for node in self.intersections:
            in_lanes = set(node.incoming_lanes(segments))
            out_lanes = set(node.outgoing_lanes(segments))
            for mv in node.movements:
                if mv.in_lane not in in_lanes:
                    raise ScenarioError(
                        f"intersection {node.id}: movement input lane {mv.in_lane} "
                        f"is not an incoming lane")
                if mv.out_lane not in out_lanes:
                    raise ScenarioError(
                        f"intersection {node.id}: movement output lane {mv.out_lane} "
                        f"is not an outgoing lane")
            legal = {(mv.in_lane, mv.out_lane) for mv in node.movements}
            for phase in node.phase_table:
                if not phase.green_movements:
                    raise ScenarioError(
                        f"intersection {node.id}: phase {phase.id} has no movements")
                for pair in phase.green_movements:
                    if pair not in legal:
                        raise ScenarioError(
                            f"intersection {node.id}: phase {phase.id} greens "
                            f"unknown movement {pair}")
            seen: set[tuple[LaneId, LaneId]] = set()
            for phase in node.phase_table:
                overlap = seen & phase.green_movements
                if overlap:
                    raise ScenarioError(
                        f"intersection {node.id}: movement {next(iter(overlap))} "
                        f"appears in two phases")
                seen |= phase.green_movements


def approach_side(graph: RoadGraph, node_id: int, other_id: int) -> int:
    """Compass side of ``other`` as seen from ``node``, by dominant axis."""
    x0, y0 = graph.node(node_id).position
    x1, y1 = graph.node(other_id).position
    dx, dy = x1 - x0, y1 - y0
    if abs(dx) >= abs(dy):
        return EAST if dx >= 0 else WEST
    return NORTH if dy > 0 else SOUTH


def _build_movements_and_phases(node: Intersection,
                                segments: dict[int, RoadSegment]) -> None:
    movements = []
    by_key: dict[tuple[int, int], Movement] = {}
    for side in (NORTH, EAST, SOUTH, WEST):
        seg_in = node.incoming.get(side)
        if seg_in is None:
            continue
        for turn in (LEFT, STRAIGHT, RIGHT):
            exit_side = TURN_EXIT_SIDE[side][turn]
            seg_out = node.outgoing.get(exit_side)
            if seg_out is None:
                continue
            in_lane = (seg_in, segments[seg_in].lane_for_turn(turn))
            out_lane = (seg_out, segments[seg_out].lane_for_turn(turn))
            mv = Movement(in_lane, out_lane, turn)
            movements.append(mv)
            by_key[(side, turn)] = mv
    phases = []
    for pid, (name, combos) in enumerate(PHASE_SPECS):
        greens = frozenset(
            (by_key[c].in_lane, by_key[c].out_lane) for c in combos if c in by_key)
        phases.append(Phase(pid, name, greens))
    node.movements = movements
    node.phase_table = phases


def build_grid(rows: int, cols: int, segment_length_m: float,
               speed_limit_mps: float) -> RoadGraph:
    """Regular grid with bidirectional internal segments and boundary terminals.

    Intersection (r, c) has id r*cols + c, position (c*L, r*L) with row 0
    at the south edge. Every open boundary side gets a virtual terminal
    node joined by an entry and an exit segment of the same length, so all
    generated intersections are 4-way and vehicles can enter or leave on
    any border.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid needs rows >= 1 and cols >= 1")
    if segment_length_m <= 0:
        raise ValueError("segment length must be > 0")
    if speed_limit_mps <= 0:
        raise ValueError("speed limit must be > 0")

    length = float(segment_length_m)
    intersections = []
    for r in range(rows):
        for c in range(cols):
            intersections.append(
                Intersection(id=r * cols + c, position=(c * length, r * length)))

    segments: list[RoadSegment] = []
    seg_counter = 0

    def add_segment(frm: int, to: int) -> int:
        nonlocal seg_counter
        seg = RoadSegment(seg_counter, frm, to, length, 3, speed_limit_mps)
        segments.append(seg)
        seg_counter += 1
        return seg.id

    node_of = lambda r, c: r * cols + c
    by_id = {node.id: node for node in intersections}

    def connect(a: Intersection, b: Intersection, side_of_b_from_a: int) -> None:
        fwd = add_segment(a.id, b.id)
        rev = add_segment(b.id, a.id)
        opposite = (side_of_b_from_a + 2) % 4
        a.outgoing[side_of_b_from_a] = fwd
        b.incoming[opposite] = fwd
        b.outgoing[opposite] = rev
        a.incoming[side_of_b_from_a] = rev

    for r in range(rows):
        for c in range(cols):
            here = by_id[node_of(r, c)]
            if c + 1 < cols:
                connect(here, by_id[node_of(r, c + 1)], EAST)
            if r + 1 < rows:
                connect(here, by_id[node_of(r + 1, c)], NORTH)

    terminals: list[Intersection] = []
    term_id = rows * cols
    offsets = {NORTH: (0.0, length), EAST: (length, 0.0),
               SOUTH: (0.0, -length), WEST: (-length, 0.0)}
    for r in range(rows):
        for c in range(cols):
            here = by_id[node_of(r, c)]
            for side in (NORTH, EAST, SOUTH, WEST):
                if side in here.outgoing:
                    continue
                dx, dy = offsets[side]
                term = Intersection(
                    id=term_id,
                    position=(here.position[0] + dx, here.position[1] + dy),
                    virtual=True)
                term_id += 1
                terminals.append(term)
                connect(here, term, side)

    segment_map = {s.id: s for s in segments}
    for node in intersections:
        _build_movements_and_phases(node, segment_map)
    for term in terminals:
        term.movements = []
        term.phase_table = []
    return RoadGraph(intersections, segments, terminals)


def network_distance(graph: RoadGraph, v_a: int, v_b: int) -> float:
    return graph.network_distance(v_a, v_b)


def validate_route(graph: RoadGraph, route: list[int]) -> None:
    """Checks consecutive edges exist and no immediate backtracking occurs."""
    if len(route) < 2:
        raise ValueError("route needs at least two intersections")
    for a, b in zip(route, route[1:]):
        if graph.edge(a, b) is None:
            raise ValueError(f"route step {a}->{b} has no road segment")
    for k in range(len(route) - 2):
        if route[k] == route[k + 2]:
            raise ValueError(
                f"route backtracks to intersection {route[k]} at position {k + 2}")


# -- scenario files ----------------------------------------------------------

SCENARIO_FORMAT = 1


def save_scenario(path: str, graph: RoadGraph, flows: FlowSpec,
                  name: str = "scenario") -> None:
    doc = {
        "format": SCENARIO_FORMAT,
        "name": name,
        "duration_s": flows.duration_s,
        "intersections": [
            {
                "id": node.id,
                "position": list(node.position),
                "virtual": node.virtual,
                "approaches": {
                    SIDE_NAMES[side]: {
                        "in": node.incoming.get(side),
                        "out": node.outgoing.get(side),
                    }
                    for side in (NORTH, EAST, SOUTH, WEST)
                    if side in node.incoming or side in node.outgoing
                },
            }
            for node in graph.intersections + graph.terminals
        ],
        "segments": [
            {
                "id": seg.id,
                "from": seg.frm,
                "to": seg.to,
                "length_m": seg.length_m,
                "lanes": seg.lanes,
                "speed_limit_mps": seg.speed_limit_mps,
            }
            for seg in graph.segments
        ],
        "flows": [
            {
                "id": veh.id,
                "class": veh.vclass,
                "depart_time_s": veh.depart_time_s,
                "route": veh.route if veh.route is not None else "auto",
                **({"origin": veh.origin} if veh.origin is not None else {}),
                **({"destination": veh.destination}
                   if veh.destination is not None else {}),
            }
            for veh in flows.vehicles
        ],
        "flow_groups": [
            {
                "route": grp.route,
                "rate_veh_per_hour": grp.rate_veh_per_hour,
                "ev_fraction": grp.ev_fraction,
                "start_s": grp.start_s,
                "end_s": grp.end_s,
            }
            for grp in flows.groups
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_scenario(path: str) -> tuple[RoadGraph, FlowSpec]:
    """Parses and validates a scenario file.

    Parse errors carry line context; referential errors name the offending
    entity id.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"scenario {path}: parse error at line {exc.lineno}, "
            f"column {exc.colno}: {exc.msg}") from exc

    if doc.get("format") != SCENARIO_FORMAT:
        raise ScenarioError(
            f"scenario {path}: unsupported format {doc.get('format')!r}")

    try:
        segments = [
            RoadSegment(int(s["id"]), int(s["from"]), int(s["to"]),
                        float(s["length_m"]), int(s.get("lanes", 3)),
                        float(s["speed_limit_mps"]))
            for s in doc.get("segments", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"scenario {path}: bad segment entry: {exc}") from exc

    intersections, terminals = [], []
    for entry in doc.get("intersections", []):
        try:
            node = Intersection(
                id=int(entry["id"]),
                position=(float(entry["position"][0]), float(entry["position"][1])),
                virtual=bool(entry.get("virtual", False)))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ScenarioError(
                f"scenario {path}: bad intersection entry {entry!r}: {exc}") from exc
        for side_name, links in (entry.get("approaches") or {}).items():
            if side_name not in SIDE_INDEX:
                raise ScenarioError(
                    f"intersection {node.id}: unknown approach side {side_name!r}")
            side = SIDE_INDEX[side_name]
            if links.get("in") is not None:
                node.incoming[side] = int(links["in"])
            if links.get("out") is not None:
                node.outgoing[side] = int(links["out"])
        (terminals if node.virtual else intersections).append(node)

    graph = RoadGraph(intersections, segments, terminals)
    segment_map = graph.segment_by_id
    for node in intersections + terminals:
        for side, seg_id in list(node.incoming.items()) + list(node.outgoing.items()):
            if seg_id not in segment_map:
                raise ScenarioError(
                    f"intersection {node.id}: approach references unknown "
                    f"segment {seg_id}")
    for node in intersections:
        _build_movements_and_phases(node, segment_map)
    graph.validate()

    flows = FlowSpec(duration_s=int(doc.get("duration_s", 3600)))
    for entry in doc.get("flows", []):
        route_field = entry.get("route")
        if route_field == "auto":
            route = None
        else:
            route = [int(v) for v in route_field]
        veh = FlowVehicle(
            id=str(entry["id"]),
            vclass=str(entry["class"]).lower(),
            depart_time_s=int(entry["depart_time_s"]),
            route=route,
            origin=entry.get("origin"),
            destination=entry.get("destination"))
        if veh.vclass not in ("ov", "ev"):
            raise ScenarioError(f"vehicle {veh.id}: unknown class {veh.vclass!r}")
        if veh.route is not None:
            for nid in veh.route:
                if nid not in graph.nodes:
                    raise ScenarioError(
                        f"vehicle {veh.id}: route references unknown "
                        f"intersection {nid}")
            validate_route(graph, veh.route)
        else:
            if veh.vclass != "ev":
                raise ScenarioError(
                    f"vehicle {veh.id}: only EVs may use route 'auto'")
            if veh.origin is None or veh.destination is None:
                raise ScenarioError(
                    f"vehicle {veh.id}: route 'auto' needs origin and destination")
            for nid in (veh.origin, veh.destination):
                if nid not in graph.nodes:
                    raise ScenarioError(
                        f"vehicle {veh.id}: references unknown intersection {nid}")
        flows.vehicles.append(veh)
    for entry in doc.get("flow_groups", []):
        grp = FlowGroup(
            route=[int(v) for v in entry["route"]],
            rate_veh_per_hour=float(entry["rate_veh_per_hour"]),
            ev_fraction=float(entry.get("ev_fraction", 0.0)),
            start_s=int(entry.get("start_s", 0)),
            end_s=(int(entry["end_s"]) if entry.get("end_s") is not None else None))
        for nid in grp.route:
            if nid not in graph.nodes:
                raise ScenarioError(
                    f"flow group: route references unknown intersection {nid}")
        validate_route(graph, grp.route)
        if grp.rate_veh_per_hour <= 0:
            raise ScenarioError("flow group: rate must be positive")
        if not 0.0 <= grp.ev_fraction <= 1.0:
            raise ScenarioError("flow group: ev_fraction must be in [0, 1]")
        flows.groups.append(grp)
    return graph, flows

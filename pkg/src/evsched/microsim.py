"""Deterministic 1-second-tick microscopic traffic simulation.

Model rules (point-queue, no car following):

* Driving vehicles advance at the segment speed limit, capped by the back
  of the queue on their lane. On reaching the queue back they join a FIFO
  queue stacked from the stop line, one slot of VEHICLE_LENGTH_M each.
* A queue head discharges (crosses the intersection) after it has been
  served for SATURATION_HEADWAY_S consecutive ticks. Service accrues when
  the head's movement is green, when the head is an emergency vehicle
  (the signal exemption applies only at the head of the queue), or when
  the movement is an unsignalized right turn. Interrupted service restarts.
* Crossing moves the vehicle onto the lane of its next turn on the next
  segment at offset 0; the discharge consumes that tick.
* A vehicle arrives when it reaches the end (or the queue back) of the
  final segment of its route. Virtual terminal nodes carry no signals.
* Phase actions take effect on the tick they are passed to step(); ticks
  without actions hold the current phases.

Two runs with the same scenario, seed, and action stream produce
bit-identical event logs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .road_network import RIGHT, FlowSpec, RoadGraph, ScenarioError

TICK_S = 1
ACTION_INTERVAL_S = 10
SATURATION_HEADWAY_S = 2
VEHICLE_LENGTH_M = 7.5
SPEED_WINDOW_TICKS = 30
AVG_SPEED_FLOOR_MPS = 0.1

OV, EV = "ov", "ev"
DRIVING, QUEUED, ARRIVED = "driving", "queued", "arrived"

# Event kinds in the log, in emission order within a tick.
SPAWN, DEFER, CROSS, ARRIVE = "spawn", "defer", "cross", "arrive"


@dataclass(slots=True)
class Vehicle:
    id: str
    vclass: str
    route: list[int]
    depart_time: int
    route_index: int = 0  # vehicle is on segment route[i] -> route[i+1]
    segment_id: int = -1
    lane_index: int = 1
    offset: float = 0.0
    speed: float = 0.0
    status: str = DRIVING
    arrival_time: int | None = None
    auto_route: bool = False
    destination: int | None = None
    cum_distance: float = 0.0
    moved_tick: int = -1  # tick the vehicle last crossed or joined a queue
    drive_ticks: dict[int, int] = field(default_factory=dict)  # per segment
    wait_ticks: dict[int, int] = field(default_factory=dict)  # per intersection

    @property
    def is_ev(self) -> bool:
        return self.vclass == EV


@dataclass
class LaneMetrics:
    queue_length_count: int
    queue_length_m: float
    avg_speed: float


class _Lane:
    __slots__ = ("key", "segment", "queue", "driving", "service", "n_ov", "n_ev")

    def __init__(self, key, segment):
        self.key = key
        self.segment = segment
        self.queue: deque[Vehicle] = deque()
        self.driving: deque[Vehicle] = deque()  # front = furthest downstream
        self.service = 0
        self.n_ov = 0
        self.n_ev = 0

    def count(self) -> int:
        return len(self.queue) + len(self.driving)


class _SegmentTrace:
    """Trailing window of per-tick mean speeds on one segment."""

    __slots__ = ("samples",)

    def __init__(self):
        self.samples: deque[tuple[int, float, int]] = deque()  # (tick, sum, n)

    def record(self, tick: int, speed_sum: float, n: int) -> None:
        if n > 0:
            self.samples.append((tick, speed_sum, n))
        while self.samples and self.samples[0][0] <= tick - SPEED_WINDOW_TICKS:
            self.samples.popleft()

    def mean(self, now: int, fallback: float) -> float:
        total, n = 0.0, 0
        for tick, speed_sum, count in self.samples:
            if tick > now - SPEED_WINDOW_TICKS:
                total += speed_sum
                n += count
        if n == 0:
            return fallback
        return max(AVG_SPEED_FLOOR_MPS, min(fallback, total / n))


class Simulator:
    """Owns the full simulation state; one instance per episode."""

    def __init__(self, graph: RoadGraph, flows: FlowSpec, seed: int = 0,
                 on_spawn=None, log_events: bool = True):
        self.graph = graph
        self.seed = seed
        self.clock = 0
        self.on_spawn = on_spawn
        self.log_events = log_events
        self.events: list[tuple[int, str, str, int, str]] = []

        self.lanes: dict[tuple[int, int], _Lane] = {}
        self._lane_list: list[_Lane] = []
        for seg in graph.segments:
            for k in range(seg.lanes):
                lane = _Lane((seg.id, k), seg)
                self.lanes[(seg.id, k)] = lane
                self._lane_list.append(lane)
        self._traces: dict[int, _SegmentTrace] = {
            seg.id: _SegmentTrace() for seg in graph.segments}

        self.phase: dict[int, int] = {n.id: 0 for n in graph.intersections}
        self.time_in_phase: dict[int, int] = {n.id: 0 for n in graph.intersections}
        self.phase_age: dict[int, int] = {n.id: 0 for n in graph.intersections}
        self._green: dict[int, frozenset] = {}
        for node in graph.intersections:
            self._set_phase(node.id, 0)

        self.vehicles: dict[str, Vehicle] = {}
        self.active_evs: list[Vehicle] = []
        self.arrived_vehicles: list[Vehicle] = []
        self.spawned = 0
        self.arrived = 0
        self.deferred: list[Vehicle] = []
        self._pending = self._materialize(flows)
        self._pending_idx = 0

    # -- flow materialization --------------------------------------------------

    def _materialize(self, flows: FlowSpec) -> list[Vehicle]:
        rng = np.random.Generator(np.random.PCG64(self.seed))
        out: list[Vehicle] = []
        for gi, grp in enumerate(flows.groups):
            headway = 3600.0 / grp.rate_veh_per_hour
            end = flows.duration_s if grp.end_s is None else grp.end_s
            offset = rng.uniform(0.0, headway)
            k = 0
            t = grp.start_s + offset
            while t < end:
                vclass = EV if rng.random() < grp.ev_fraction else OV
                out.append(Vehicle(
                    id=f"g{gi}.{k}", vclass=vclass, route=list(grp.route),
                    depart_time=int(t), destination=grp.route[-1],
                    auto_route=(vclass == EV)))
                k += 1
                t = grp.start_s + offset + k * headway
        for fv in flows.vehicles:
            if fv.route is not None:
                route = list(fv.route)
            else:
                route = self.graph.shortest_path(fv.origin, fv.destination)
                if route is None or len(route) < 2:
                    raise ScenarioError(
                        f"vehicle {fv.id}: destination {fv.destination} "
                        f"unreachable from origin {fv.origin}")
            out.append(Vehicle(
                id=fv.id, vclass=fv.vclass, route=route,
                depart_time=fv.depart_time_s,
                destination=fv.destination if fv.destination is not None
                else route[-1],
                auto_route=(fv.route is None)))
        out.sort(key=lambda v: (v.depart_time, v.id))
        return out

    # -- phase handling ----------------------------------------------------------

    def _set_phase(self, node_id: int, phase_id: int) -> None:
        node = self.graph.nodes[node_id]
        if self.phase[node_id] != phase_id:
            self.phase_age[node_id] = 0
        self.phase[node_id] = phase_id
        self.time_in_phase[node_id] = 0
        self._green[node_id] = node.phase_table[phase_id].green_movements

    def apply_actions(self, phase_actions: dict[int, int]) -> None:
        for node in self.graph.intersections:
            if node.id not in phase_actions:
                raise ValueError(f"no phase action for intersection {node.id}")
            pid = phase_actions[node.id]
            if not 0 <= pid < len(node.phase_table):
                raise ValueError(f"intersection {node.id}: illegal phase id {pid}")
        for node_id, pid in phase_actions.items():
            self._set_phase(node_id, pid)

    # -- spawning -------------------------------------------------------------------

    def _entry_lane(self, veh: Vehicle) -> _Lane:
        seg = self.graph.edge(veh.route[0], veh.route[1])
        lane_idx = self._lane_for_step(seg, veh.route, 0)
        return self.lanes[(seg.id, lane_idx)]

    def _lane_for_step(self, segment, route: list[int], index: int) -> int:
        """Lane on ``segment`` = route[index]->route[index+1] by next turn."""
        if index + 2 > len(route) - 1:
            return segment.lane_for_turn(1)  # final segment: straight lane
        node = self.graph.nodes[route[index + 1]]
        nxt = self.graph.edge(route[index + 1], route[index + 2])
        for mv in node.movements:
            if mv.in_lane[0] == segment.id and mv.out_lane[0] == nxt.id:
                return mv.in_lane[1]
        return segment.lane_for_turn(1)

    def _insert(self, veh: Vehicle) -> bool:
        lane = self._entry_lane(veh)
        if VEHICLE_LENGTH_M * (lane.count() + 1) > lane.segment.length_m:
            return False
        veh.segment_id = lane.segment.id
        veh.lane_index = lane.key[1]
        veh.offset = 0.0
        veh.speed = lane.segment.speed_limit_mps
        veh.status = DRIVING
        if self.clock > veh.depart_time:
            # Deferred entry counts as waiting at the origin.
            veh.wait_ticks[veh.route[0]] = self.clock - veh.depart_time
        lane.driving.append(veh)
        self._count(lane, veh, +1)
        self.vehicles[veh.id] = veh
        if veh.is_ev:
            self.active_evs.append(veh)
        self.spawned += 1
        self._log(SPAWN, veh.id, veh.route[0], lane.key)
        if self.on_spawn is not None:
            self.on_spawn(self, veh)
        return True

    def spawn_pending(self) -> int:
        """Inserts all vehicles due at the current clock; defers full lanes."""
        inserted = 0
        still_deferred = []
        for veh in self.deferred:
            if self._insert(veh):
                inserted += 1
            else:
                still_deferred.append(veh)
        self.deferred = still_deferred
        while (self._pending_idx < len(self._pending)
               and self._pending[self._pending_idx].depart_time <= self.clock):
            veh = self._pending[self._pending_idx]
            self._pending_idx += 1
            if self._insert(veh):
                inserted += 1
            else:
                self.deferred.append(veh)
                self._log(DEFER, veh.id, veh.route[0], self._entry_lane(veh).key)
        return inserted

    # -- stepping -----------------------------------------------------------------------

    def step(self, phase_actions: dict[int, int] | None = None) -> list:
        """Advances one tick; returns the events emitted during it."""
        mark = len(self.events)
        if phase_actions is not None:
            self.apply_actions(phase_actions)
        else:
            for node_id in self.time_in_phase:
                self.time_in_phase[node_id] += 1
        for node_id in self.phase_age:
            self.phase_age[node_id] += 1

        self.spawn_pending()

        for lane in self._lane_list:
            if lane.queue:
                self._service_lane(lane)
            elif lane.service:
                lane.service = 0

        traces = self._traces
        clock = self.clock
        for lane in self._lane_list:
            if lane.driving or lane.queue:
                speed_sum, n = self._advance_lane(lane)
                if n:
                    traces[lane.segment.id].record(clock, speed_sum, n)

        self.clock += TICK_S
        active = len(self.vehicles)
        assert self.spawned == self.arrived + active, (
            f"conservation violated at tick {self.clock}: spawned={self.spawned} "
            f"arrived={self.arrived} active={active}")
        return self.events[mark:]

    def _service_lane(self, lane: _Lane) -> None:
        head = lane.queue[0]
        node_id = lane.segment.to
        node = self.graph.nodes[node_id]
        movement = self._head_movement(head, lane)
        eligible = (
            head.is_ev
            or node.virtual
            or (movement is not None
                and (movement.turn == RIGHT
                     or (movement.in_lane, movement.out_lane)
                     in self._green[node_id])))
        if not eligible:
            lane.service = 0
            return
        if lane.service < SATURATION_HEADWAY_S:
            lane.service += 1
        if lane.service >= SATURATION_HEADWAY_S and self._cross(head, lane):
            lane.service = 0

    def _head_movement(self, veh: Vehicle, lane: _Lane):
        if veh.route_index + 2 > len(veh.route) - 1:
            return None
        node = self.graph.nodes[veh.route[veh.route_index + 1]]
        nxt = self.graph.edge(veh.route[veh.route_index + 1],
                              veh.route[veh.route_index + 2])
        if nxt is None:
            return None
        fallback = None
        for mv in node.movements:
            if mv.out_lane[0] != nxt.id:
                continue
            if mv.in_lane == lane.key:
                return mv
            if mv.in_lane[0] == lane.key[0] and fallback is None:
                fallback = mv
        # Lane may not match the turn after an EV replans mid-segment; any
        # movement from this segment toward the next still identifies the
        # crossing for signal purposes.
        return fallback

    def _cross(self, veh: Vehicle, lane: _Lane) -> bool:
        node_id = lane.segment.to
        nxt_seg = self.graph.edge(veh.route[veh.route_index + 1],
                                  veh.route[veh.route_index + 2])
        nxt_lane_idx = self._lane_for_step(nxt_seg, veh.route, veh.route_index + 1)
        nxt_lane = self.lanes[(nxt_seg.id, nxt_lane_idx)]
        if VEHICLE_LENGTH_M * (nxt_lane.count() + 1) > nxt_seg.length_m:
            return False  # downstream lane full, try again next tick
        lane.queue.popleft()
        self._count(lane, veh, -1)
        veh.cum_distance += lane.segment.length_m - veh.offset
        veh.wait_ticks[node_id] = veh.wait_ticks.get(node_id, 0) + 1
        veh.route_index += 1
        veh.segment_id = nxt_seg.id
        veh.lane_index = nxt_lane_idx
        veh.offset = 0.0
        veh.speed = 0.0
        veh.status = DRIVING
        veh.moved_tick = self.clock
        nxt_lane.driving.append(veh)
        self._count(nxt_lane, veh, +1)
        self._log(CROSS, veh.id, node_id, lane.key)
        return True

    def _advance_lane(self, lane: _Lane) -> tuple[float, int]:
        seg = lane.segment
        length = seg.length_m
        limit = length - VEHICLE_LENGTH_M * (len(lane.queue) + 1)
        speed_sum = 0.0
        n = 0
        still: deque[Vehicle] = deque()
        while lane.driving:
            veh = lane.driving.popleft()
            if veh.moved_tick == self.clock:
                still.append(veh)  # crossed this tick; moves next tick
                continue
            final = veh.route_index + 1 == len(veh.route) - 1
            if final:
                # Destination reached at the stop line or the queue back.
                cap = min(length, max(limit + VEHICLE_LENGTH_M, veh.offset))
            else:
                cap = max(limit, veh.offset)
            new_offset = min(veh.offset + seg.speed_limit_mps * TICK_S, cap)
            delta = new_offset - veh.offset
            veh.cum_distance += delta
            veh.offset = new_offset
            veh.speed = delta / TICK_S
            speed_sum += veh.speed
            n += 1
            veh.drive_ticks[seg.id] = veh.drive_ticks.get(seg.id, 0) + 1
            if final and new_offset >= cap - 1e-9:
                self._arrive(veh, lane)
            elif not final and new_offset >= limit - 1e-9:
                veh.status = QUEUED
                veh.moved_tick = self.clock
                lane.queue.append(veh)
                limit -= VEHICLE_LENGTH_M
            else:
                still.append(veh)
        lane.driving = still

        end_node = seg.to
        for idx, veh in enumerate(lane.queue):
            if veh.moved_tick == self.clock:
                continue  # joined or crossed this tick; already accounted
            slot = max(0.0, length - VEHICLE_LENGTH_M * (idx + 1))
            if slot > veh.offset:
                veh.cum_distance += slot - veh.offset
                veh.offset = slot
            veh.speed = 0.0
            veh.wait_ticks[end_node] = veh.wait_ticks.get(end_node, 0) + 1
            n += 1
        return speed_sum, n

    def _arrive(self, veh: Vehicle, lane: _Lane) -> None:
        self._count(lane, veh, -1)
        veh.status = ARRIVED
        veh.arrival_time = self.clock + TICK_S
        del self.vehicles[veh.id]
        if veh.is_ev:
            self.active_evs = [e for e in self.active_evs if e.id != veh.id]
        self.arrived += 1
        self.arrived_vehicles.append(veh)
        self._log(ARRIVE, veh.id, veh.route[-1], lane.key)

    # -- bookkeeping ------------------------------------------------------------------------

    def _count(self, lane: _Lane, veh: Vehicle, delta: int) -> None:
        if veh.is_ev:
            lane.n_ev += delta
        else:
            lane.n_ov += delta

    def _log(self, kind: str, vehicle_id: str, node_id: int, lane_key) -> None:
        if self.log_events:
            self.events.append(
                (self.clock, kind, vehicle_id, node_id,
                 f"{lane_key[0]}:{lane_key[1]}"))

    # -- queries ---------------------------------------------------------------------------------

    def lane_metrics(self, lane_key: tuple[int, int]) -> LaneMetrics:
        lane = self.lanes.get(lane_key)
        if lane is None:
            raise ValueError(f"unknown lane {lane_key}")
        fallback = lane.segment.speed_limit_mps
        return LaneMetrics(
            queue_length_count=len(lane.queue),
            queue_length_m=len(lane.queue) * VEHICLE_LENGTH_M,
            avg_speed=self._traces[lane.segment.id].mean(self.clock, fallback))

    def segment_avg_speed(self, segment_id: int) -> float:
        seg = self.graph.segment(segment_id)
        return self._traces[segment_id].mean(self.clock, seg.speed_limit_mps)

    def segment_queue_m(self, segment_id: int) -> float:
        """Worst per-lane queue length on the segment, in meters."""
        seg = self.graph.segment(segment_id)
        worst = max(len(self.lanes[(segment_id, k)].queue)
                    for k in range(seg.lanes))
        return min(seg.length_m, worst * VEHICLE_LENGTH_M)


def step(sim: Simulator, phase_actions: dict[int, int] | None = None) -> list:
    return sim.step(phase_actions)


def spawn_pending(sim: Simulator) -> int:
    return sim.spawn_pending()


def lane_metrics(sim: Simulator, lane_key: tuple[int, int]) -> LaneMetrics:
    return sim.lane_metrics(lane_key)


def travel_time(vehicle: Vehicle) -> int:
    """Arrival minus departure, in seconds. Only valid once arrived."""
    if vehicle.status != ARRIVED or vehicle.arrival_time is None:
        raise ValueError(f"vehicle {vehicle.id} has not arrived")
    return vehicle.arrival_time - vehicle.depart_time


def events_to_csv(events) -> str:
    lines = ["tick,event,vehicle_id,intersection_id,lane_id"]
    lines.extend(f"{t},{kind},{vid},{nid},{lane}"
                 for t, kind, vid, nid, lane in events)
    return "\n".join(lines) + "\n"

"""Discrete-event simulation of case arrivals, assignment execution, and
hourly resource availability.

Events live in a single calendar ordered by (time, type priority, insertion
sequence); completions fire before the hourly availability update, which
fires before arrivals at the same instant. The simulation advances until an
assignment becomes possible, then hands control to a policy. An episode ends
when the first event beyond the horizon is popped; that event never fires.

All stochastic draws go through one generator per episode, in a fixed order
(availability draws at init, then per event: interarrival before first
label on arrivals), and always over sorted collections, so a seed fully
determines the trajectory.
"""

from __future__ import annotations

import heapq
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .model import DtapInstance, hour_of_week
from .rewards import (RewardLedger, record_case_cycle, record_transition,
                      reward_for_decision)

EVENT_COMPLETE_ACTIVITY = "complete_activity"
EVENT_SCHEDULE_RESOURCES = "schedule_resources"
EVENT_CASE_ARRIVAL = "case_arrival"

# Completions run first at an instant so a resource freed on the hour is seen
# by the availability update; arrivals come last.
_PRIORITY = {
    EVENT_COMPLETE_ACTIVITY: 0,
    EVENT_SCHEDULE_RESOURCES: 1,
    EVENT_CASE_ARRIVAL: 2,
}

DURATION_FLOOR_H = 1e-6

STATUS_ACTIVE = "active"
STATUS_BUSY = "busy"
STATUS_COMPLETED = "completed"


class SimulationError(RuntimeError):
    """Internal inconsistency; simulation state can no longer be trusted."""


class InfeasibleAssignmentError(ValueError):
    """Raised when an assignment violates a feasibility condition."""


@dataclass
class Case:
    case_id: int
    current_label: int
    arrival_time: float
    status: str = STATUS_ACTIVE


@dataclass(frozen=True)
class InFlightAssignment:
    resource_id: int
    case_id: int
    label_id: int
    start_time: float
    completion_time: float


@dataclass(frozen=True)
class DecisionPoint:
    state: "SimState"
    feasible: tuple[tuple[int, int], ...]
    node_indices: tuple[int, ...]

    @property
    def clock(self) -> float:
        return self.state.clock


@dataclass(frozen=True)
class EpisodeEnd:
    end_time: float


@dataclass
class SimState:
    instance: DtapInstance
    seed: int
    rng: np.random.Generator
    horizon_hours: float
    determinize: bool = False
    check_invariants: bool = True

    clock: float = 0.0
    decision_step: int = 0
    active_resources: set[int] = field(default_factory=set)
    busy_resources: set[int] = field(default_factory=set)
    off_resources: set[int] = field(default_factory=set)
    active_cases: dict[int, Case] = field(default_factory=dict)
    busy_cases: dict[int, Case] = field(default_factory=dict)
    completed_cases: list[Case] = field(default_factory=list)
    in_flight: dict[int, InFlightAssignment] = field(default_factory=dict)
    leave_after_completion: set[int] = field(default_factory=set)
    ledger: RewardLedger = field(default_factory=RewardLedger)

    # Per-label (arrival_time, case_id) heaps; the top is the case an
    # assignment for that label will serve.
    label_queues: dict[int, list[tuple[float, int]]] = field(default_factory=dict)

    events: list = field(default_factory=list)
    event_seq: int = 0
    next_case_id: int = 0
    arrivals: int = 0
    ended: bool = False
    end_time: float = 0.0

    trace: list | None = None
    event_log: list | None = None

    def open_case_count(self) -> int:
        return len(self.active_cases) + len(self.busy_cases)

    def open_case_arrivals(self) -> dict[int, float]:
        out = {c.case_id: c.arrival_time for c in self.active_cases.values()}
        out.update({c.case_id: c.arrival_time for c in self.busy_cases.values()})
        return out


def sample_interarrival(rng: np.random.Generator, arrival_rate: float) -> float:
    if arrival_rate <= 0:
        raise ValueError(f"arrival rate must be positive, got {arrival_rate}")
    return float(rng.exponential(1.0 / arrival_rate))


def sample_completion(instance: DtapInstance, label_id: int, resource_id: int,
                      rng: np.random.Generator, determinize: bool = False) -> float:
    """Completion duration for one assignment: the distribution mean when
    determinized, otherwise the absolute value of a normal draw. Never
    below a small positive floor so events keep strict forward progress."""
    model = instance.completion.get((label_id, resource_id))
    if model is None:
        raise InfeasibleAssignmentError(
            f"({label_id}, {resource_id}) is not an assignment pool pair")
    if determinize:
        return max(model.mean, DURATION_FLOOR_H)
    return max(abs(float(rng.normal(model.mean, model.std_dev))), DURATION_FLOOR_H)


def sample_next_label(instance: DtapInstance, label_id: int,
                      rng: np.random.Generator) -> int:
    targets, cum = instance.transitions.sampling_rows[label_id]
    if not targets:
        raise SimulationError(f"label {label_id} has no positive transition")
    u = rng.random() * cum[-1]
    idx = min(bisect_right(cum, u), len(targets) - 1)
    return targets[idx]


def _weighted_sample_without_replacement(rng, items: list[int],
                                         weights: list[float], k: int) -> list[int]:
    """Successive draws proportional to remaining weight, so heavier items
    are more likely to be included."""
    items = list(items)
    weights = [float(w) for w in weights]
    chosen = []
    for _ in range(min(k, len(items))):
        total = sum(weights)
        u = rng.random() * total
        acc = 0.0
        pick = len(items) - 1
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                pick = i
                break
        chosen.append(items.pop(pick))
        weights.pop(pick)
    return chosen


def _push_event(state: SimState, time: float, kind: str, payload=None) -> None:
    heapq.heappush(state.events, (time, _PRIORITY[kind], state.event_seq, kind, payload))
    state.event_seq += 1


def _trace(state: SimState, event_type: str, case_id="", resource_id="", label_id="") -> None:
    if state.trace is not None:
        state.trace.append((state.clock, event_type, case_id, resource_id, label_id))


def init_episode(instance: DtapInstance, seed: int, *, horizon_hours: float | None = None,
                 determinize: bool = False, check_invariants: bool = True,
                 record_trace: bool = False, record_event_log: bool = False) -> SimState:
    """Fresh episode at clock 0: all resources start off, one availability
    draw runs immediately, and the first arrival plus the hourly availability
    event are enqueued."""
    state = SimState(
        instance=instance,
        seed=seed,
        rng=np.random.default_rng(seed),
        horizon_hours=float(horizon_hours if horizon_hours is not None else instance.horizon_hours),
        determinize=determinize,
        check_invariants=check_invariants,
    )
    if record_trace:
        state.trace = []
    if record_event_log:
        state.event_log = []
    state.off_resources = {r.id for r in instance.resources}
    state.label_queues = {l: [] for l in instance.regular_label_ids}

    schedule_resources(state, instance)
    _push_event(state, 1.0, EVENT_SCHEDULE_RESOURCES)
    _push_event(state, sample_interarrival(state.rng, instance.arrival_rate),
                EVENT_CASE_ARRIVAL)
    if state.check_invariants:
        _assert_invariants(state, instance)
    return state


def schedule_resources(state: SimState, instance: DtapInstance) -> SimState:
    """Hourly availability update. Leave flags are recomputed from scratch:
    excess presence is shed from idle resources first (uniformly), then by
    flagging working ones to leave at completion; shortfall is filled from
    the off pool by weight, without replacement."""
    state.leave_after_completion.clear()
    target = instance.calendar.expected_active[hour_of_week(state.clock, instance.calendar)]
    present = len(state.active_resources) + len(state.busy_resources)

    if present > target:
        excess = present - target
        idle = sorted(state.active_resources)
        n_idle = min(excess, len(idle))
        if n_idle:
            removed = state.rng.choice(len(idle), size=n_idle, replace=False)
            for i in removed:
                rid = idle[int(i)]
                state.active_resources.remove(rid)
                state.off_resources.add(rid)
        remainder = excess - n_idle
        if remainder:
            working = sorted(state.busy_resources)
            flagged = state.rng.choice(len(working), size=remainder, replace=False)
            state.leave_after_completion.update(working[int(i)] for i in flagged)
    elif present < target:
        off = sorted(state.off_resources)
        weights = [instance.resources[rid].weight for rid in off]
        joined = _weighted_sample_without_replacement(
            state.rng, off, weights, target - present)
        for rid in joined:
            state.off_resources.remove(rid)
            state.active_resources.add(rid)

    _trace(state, EVENT_SCHEDULE_RESOURCES)
    return state


def _fire_case_arrival(state: SimState, instance: DtapInstance) -> None:
    case_id = state.next_case_id
    state.next_case_id += 1
    state.arrivals += 1
    _push_event(state, state.clock + sample_interarrival(state.rng, instance.arrival_rate),
                EVENT_CASE_ARRIVAL)
    first_label = sample_next_label(instance, instance.start_label_id, state.rng)
    case = Case(case_id=case_id, current_label=first_label,
                arrival_time=state.clock)
    _trace(state, EVENT_CASE_ARRIVAL, case_id, "", first_label)
    if first_label in instance.end_label_ids:
        # Degenerate route straight to completion: zero cycle time.
        case.status = STATUS_COMPLETED
        state.completed_cases.append(case)
        record_case_cycle(state.ledger, case_id, 0.0)
        _trace(state, "complete_case", case_id, "", first_label)
    else:
        state.active_cases[case_id] = case
        heapq.heappush(state.label_queues[first_label], (case.arrival_time, case_id))
    record_transition(state.ledger, state.clock, state.open_case_count())


def fire_complete_activity(state: SimState, instance: DtapInstance,
                           assignment: InFlightAssignment) -> SimState:
    """Finish an assignment: free the resource (to off if it was flagged to
    leave), sample the case's next label, and either complete the case or
    return it to the active pool under the new label."""
    if state.in_flight.get(assignment.resource_id) is not assignment:
        raise SimulationError(f"assignment {assignment} is not in flight")
    if assignment.completion_time != state.clock:
        raise SimulationError(
            f"completion fired at {state.clock}, expected {assignment.completion_time}")
    del state.in_flight[assignment.resource_id]
    state.busy_resources.remove(assignment.resource_id)
    if assignment.resource_id in state.leave_after_completion:
        state.leave_after_completion.remove(assignment.resource_id)
        state.off_resources.add(assignment.resource_id)
    else:
        state.active_resources.add(assignment.resource_id)

    case = state.busy_cases.pop(assignment.case_id)
    if state.event_log is not None:
        state.event_log.append((case.case_id, instance.label_name(assignment.label_id),
                                instance.resource_name(assignment.resource_id),
                                assignment.start_time, state.clock))
    _trace(state, EVENT_COMPLETE_ACTIVITY, case.case_id, assignment.resource_id,
           assignment.label_id)

    next_label = sample_next_label(instance, case.current_label, state.rng)
    if next_label in instance.end_label_ids:
        case.status = STATUS_COMPLETED
        case.current_label = next_label
        state.completed_cases.append(case)
        record_case_cycle(state.ledger, case.case_id, state.clock - case.arrival_time)
        _trace(state, "complete_case", case.case_id, "", next_label)
    else:
        case.status = STATUS_ACTIVE
        case.current_label = next_label
        state.active_cases[case.case_id] = case
        heapq.heappush(state.label_queues[next_label], (case.arrival_time, case.case_id))
    record_transition(state.ledger, state.clock, state.open_case_count())
    return state


def compute_feasible(state: SimState, instance: DtapInstance) -> tuple[tuple[int, int], ...]:
    """Pairs assignable right now: pooled, resource idle, label has a waiting
    case. Ordered by assignment-node index."""
    return tuple(
        pair for pair in instance.pools
        if pair[1] in state.active_resources and state.label_queues[pair[0]]
    )


def apply_assignment(state: SimState, instance: DtapInstance,
                     pair: tuple[int, int]) -> SimState:
    """Assign the oldest waiting case of the pair's label (ties by lowest
    case id) to the pair's resource. Simulated time does not advance; the
    decision counter does, and the decision's reward is recorded."""
    if state.ended:
        raise SimulationError("episode already ended")
    label_id, resource_id = pair
    if pair not in instance.pool_index:
        raise InfeasibleAssignmentError(f"{pair} is not an assignment pool pair")
    if resource_id not in state.active_resources:
        where = "busy" if resource_id in state.busy_resources else "off shift"
        raise InfeasibleAssignmentError(f"resource {resource_id} is {where}, not idle")
    queue = state.label_queues[label_id]
    if not queue:
        raise InfeasibleAssignmentError(f"no active case with label {label_id}")

    _, case_id = heapq.heappop(queue)
    case = state.active_cases.pop(case_id)
    case.status = STATUS_BUSY
    state.busy_cases[case_id] = case
    state.active_resources.remove(resource_id)
    state.busy_resources.add(resource_id)
    duration = sample_completion(instance, label_id, resource_id, state.rng,
                                 state.determinize)
    assignment = InFlightAssignment(
        resource_id=resource_id, case_id=case_id, label_id=label_id,
        start_time=state.clock, completion_time=state.clock + duration)
    state.in_flight[resource_id] = assignment
    _push_event(state, assignment.completion_time, EVENT_COMPLETE_ACTIVITY, resource_id)
    state.decision_step += 1
    _trace(state, "start_activity", case_id, resource_id, label_id)

    record_transition(state.ledger, state.clock, state.open_case_count())
    reward_for_decision(state.ledger)
    if state.check_invariants:
        _assert_invariants(state, instance)
    return state


def step_until_decision(state: SimState, instance: DtapInstance, *,
                        auto_apply_singletons: bool = False):
    """Fire events in calendar order until assignments are possible, and
    return the DecisionPoint; or return EpisodeEnd once the next event lies
    beyond the horizon. With auto_apply_singletons, decision points offering
    exactly one pair are applied internally and stepping continues."""
    if state.ended:
        raise SimulationError("episode already ended")
    while True:
        feasible = compute_feasible(state, instance)
        if feasible:
            if auto_apply_singletons and len(feasible) == 1:
                apply_assignment(state, instance, feasible[0])
                continue
            return DecisionPoint(
                state=state, feasible=feasible,
                node_indices=tuple(instance.pool_index[p] for p in feasible))
        if not state.events:
            raise SimulationError("event calendar is empty")
        time = state.events[0][0]
        if time > state.horizon_hours:
            state.ended = True
            state.end_time = time
            return EpisodeEnd(end_time=time)
        time, _, _, kind, payload = heapq.heappop(state.events)
        if time < state.clock:
            raise SimulationError(f"clock regression: {time} < {state.clock}")
        state.clock = time
        if kind == EVENT_COMPLETE_ACTIVITY:
            fire_complete_activity(state, instance, state.in_flight[payload])
        elif kind == EVENT_SCHEDULE_RESOURCES:
            schedule_resources(state, instance)
            _push_event(state, state.clock + 1.0, EVENT_SCHEDULE_RESOURCES)
        elif kind == EVENT_CASE_ARRIVAL:
            _fire_case_arrival(state, instance)
        else:
            raise SimulationError(f"unknown event kind {kind!r}")
        if state.check_invariants:
            _assert_invariants(state, instance)


def _assert_invariants(state: SimState, instance: DtapInstance) -> None:
    all_ids = {r.id for r in instance.resources}
    a, b, o = state.active_resources, state.busy_resources, state.off_resources
    if a & b or a & o or b & o:
        raise SimulationError("resource sets overlap")
    if (a | b | o) != all_ids:
        raise SimulationError("resource sets do not cover the instance")
    if not (len(state.in_flight) == len(b) == len(state.busy_cases)):
        raise SimulationError(
            f"working counts disagree: {len(state.in_flight)} in flight, "
            f"{len(b)} busy resources, {len(state.busy_cases)} busy cases")
    if set(state.in_flight) != b:
        raise SimulationError("in-flight assignments do not match busy resources")
    if state.active_cases.keys() & state.busy_cases.keys():
        raise SimulationError("a case is both active and busy")
    if len(state.active_cases) + len(state.busy_cases) + len(state.completed_cases) \
            != state.arrivals:
        raise SimulationError("case conservation violated")
    if sum(len(q) for q in state.label_queues.values()) != len(state.active_cases):
        raise SimulationError("label queues out of sync with active cases")
    if not state.leave_after_completion <= b:
        raise SimulationError("leave flag on a non-busy resource")


def write_trace_csv(state: SimState, path) -> None:
    """Trajectory trace: one row per fired transition."""
    import csv

    if state.trace is None:
        raise ValueError("episode was not recorded with record_trace")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clock", "event_type", "case_id", "resource_id", "label_id"])
        for row in state.trace:
            writer.writerow(row)


LOG_EPOCH_ISO = "2024-01-01T00:00:00"  # a Monday, so hour 0 meets calendar slot 0


def write_event_log_csv(state: SimState, path) -> None:
    """Completed-activity log in the miner's input format, with clock hours
    rendered as timestamps counted from a Monday midnight."""
    import csv
    from datetime import datetime, timedelta

    if state.event_log is None:
        raise ValueError("episode was not recorded with record_event_log")
    epoch = datetime.fromisoformat(LOG_EPOCH_ISO)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "activity", "resource",
                         "start_timestamp", "end_timestamp"])
        for case_id, activity, resource, start_h, end_h in state.event_log:
            writer.writerow([
                case_id, activity, resource,
                (epoch + timedelta(hours=start_h)).isoformat(timespec="microseconds"),
                (epoch + timedelta(hours=end_h)).isoformat(timespec="microseconds"),
            ])

"""Event-driven simulator for transport-aware flexible job-shop scheduling.

The episode is a sequence of decision epochs. At each epoch the agent picks
a feasible (operation, machine, vehicle) triple: the operation's
predecessor is complete, the machine is compatible and idle, the vehicle is
idle. Applying the triple sends the vehicle from its current location to
the product (off-load leg) and then to the machine (on-load leg);
processing starts on arrival. When no triple is feasible at the current
clock, the clock advances to the next machine/vehicle release event. The
episode terminates once every operation has been assigned.

The per-step reward is the decrease of an optimistic completion-time bound
computed from mean processing times (transport excluded); rewards are kept
as exact rationals so the per-episode sum telescopes to
initial_bound - makespan with no rounding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path


class ScheduleError(RuntimeError):
    """Contract violation: an environment operation was misused."""


class InfeasibleActionError(ScheduleError):
    """An action triple failed a feasibility clause."""


class DeadlockError(ScheduleError):
    """No future event can release a feasible action (unreachable by design)."""


@dataclass(frozen=True)
class ActionTriple:
    """0-based (job, operation, machine, vehicle) selection."""
    job: int
    op: int
    machine: int
    vehicle: int


@dataclass(frozen=True)
class StepOutcome:
    reward: Fraction
    done: bool
    clock: int  # decision clock after the step (post clock advance)


@dataclass
class TransportTask:
    job: int
    op: int
    depart: int      # vehicle leaves its previous location
    pickup_at: int   # product location (travel index)
    arrival: int     # delivery at destination machine
    source: int      # vehicle location at departure (travel index)
    dest: int        # destination (travel index)


@dataclass
class OpRecord:
    job: int
    op: int
    machine: int
    vehicle: int
    depart: int
    arrival: int
    start: int
    completion: int


class ScheduleState:
    """Mutable simulation state for one episode over a fixed instance."""

    def __init__(self, inst):
        self.inst = inst
        self.clock = 0
        self.next_op = [0] * inst.n                 # next unscheduled op per job
        self.sched_completion = [0] * inst.n        # completion of last assigned op
        self.mach_busy_until = [0] * inst.m
        self.mach_intervals = [[] for _ in range(inst.m)]   # (start, completion)
        self.veh_busy_until = [0] * inst.v
        self.veh_loc = [0] * inst.v                 # travel index; depot = 0
        self.veh_tasks = [[] for _ in range(inst.v)]
        self.records = [None] * inst.total_ops      # OpRecord once assigned
        self.scheduled_count = 0
        # Per-job suffix sums of mean processing times: tail[i][j] is the
        # optimistic remaining work of ops j.. of job i.
        self.tails = []
        for ops in inst.jobs:
            tail = [Fraction(0)] * (len(ops) + 1)
            for j in range(len(ops) - 1, -1, -1):
                tail[j] = tail[j + 1] + Fraction(sum(ops[j].values()), len(ops[j]))
            self.tails.append(tail)

    # -- Queries -------------------------------------------------------------

    @property
    def done(self):
        return self.scheduled_count == self.inst.total_ops

    def op_record(self, i, j):
        return self.records[self.inst.op_index(i, j)]

    def pred_completion(self, i, j):
        """Completion time of the predecessor of (i, j); 0 for the first op."""
        if j == 0:
            return 0
        rec = self.op_record(i, j - 1)
        return rec.completion if rec is not None else None

    def product_location(self, i):
        """Travel index of job i's product: machine of the last operation
        completed by the current clock, else the depot."""
        for j in range(self.next_op[i] - 1, -1, -1):
            rec = self.op_record(i, j)
            if rec.completion <= self.clock:
                return rec.machine + 1
        return 0

    def machine_utilization(self, k):
        """Fraction of [0, clock] during which machine k was processing."""
        if self.clock == 0:
            return 0.0
        busy = sum(max(0, min(c, self.clock) - s) for s, c in self.mach_intervals[k])
        return busy / self.clock

    def clone(self):
        other = ScheduleState.__new__(ScheduleState)
        other.inst = self.inst
        other.clock = self.clock
        other.next_op = list(self.next_op)
        other.sched_completion = list(self.sched_completion)
        other.mach_busy_until = list(self.mach_busy_until)
        other.mach_intervals = [list(iv) for iv in self.mach_intervals]
        other.veh_busy_until = list(self.veh_busy_until)
        other.veh_loc = list(self.veh_loc)
        other.veh_tasks = [list(t) for t in self.veh_tasks]
        other.records = list(self.records)
        other.scheduled_count = self.scheduled_count
        other.tails = self.tails  # static after reset
        return other


def reset(inst):
    """Initial state: clock 0, everything idle at the depot."""
    return ScheduleState(inst)


def feasible_structure(state):
    """Factored feasible set at the current clock.

    Returns (ops, machines_for, vehicles): eligible operations as (job, op)
    pairs, their idle compatible machines, and the idle vehicles. Vehicles
    are interchangeable across operations, so the feasible triples are the
    cross product ops x machines_for[op] x vehicles.
    """
    t = state.clock
    vehicles = [u for u in range(state.inst.v) if state.veh_busy_until[u] <= t]
    ops = []
    machines_for = {}
    if vehicles:
        for i in range(state.inst.n):
            j = state.next_op[i]
            if j >= state.inst.num_ops(i):
                continue
            pred = state.pred_completion(i, j)
            if pred is None or pred > t:
                continue
            machines = [k for k in state.inst.machines_for(i, j)
                        if state.mach_busy_until[k] <= t]
            if machines:
                ops.append((i, j))
                machines_for[(i, j)] = machines
    return ops, machines_for, vehicles


def feasible_actions(state):
    """All feasible triples at the current clock, in index order."""
    if state.done:
        raise ScheduleError("feasible_actions called on a terminal state")
    ops, machines_for, vehicles = feasible_structure(state)
    return [ActionTriple(i, j, k, u)
            for (i, j) in ops for k in machines_for[(i, j)] for u in vehicles]


def advance_clock(state):
    """Move the clock to the earliest event time with a feasible action.

    Precondition: the state is not terminal and no action is feasible now.
    """
    if state.done:
        raise ScheduleError("advance_clock called on a terminal state")
    ops, _, _ = feasible_structure(state)
    if ops:
        raise ScheduleError("advance_clock called while actions are feasible")
    events = sorted({t for t in state.mach_busy_until if t > state.clock}
                    | {t for t in state.veh_busy_until if t > state.clock})
    for t in events:
        state.clock = t
        ops, _, _ = feasible_structure(state)
        if ops:
            return state.clock
    raise DeadlockError(
        f"no future event releases a feasible action at clock {state.clock}")


def makespan_lower_bound(state):
    """Optimistic completion bound: per job, the completion of the last
    assigned operation plus the mean processing times of the remaining
    ones (transport excluded). Exact rational; equals the true makespan
    once every operation is assigned."""
    best = Fraction(0)
    for i in range(state.inst.n):
        b = state.sched_completion[i] + state.tails[i][state.next_op[i]]
        if b > best:
            best = b
    return best


def apply_action(state, a, auto_advance=True):
    """Assign one operation and advance the simulation.

    The vehicle departs at the current clock, drives to the product and
    then to the machine; processing runs from arrival for the machine's
    processing time. With auto_advance (the default) the clock then moves
    to the next decision epoch, so feasible_actions is never empty between
    steps of an episode.
    """
    inst = state.inst
    i, j, k, u = a.job, a.op, a.machine, a.vehicle
    t = state.clock
    if not (0 <= i < inst.n) or state.next_op[i] != j:
        raise InfeasibleActionError(
            f"operation ({i},{j}) is not the next unscheduled operation of job {i}")
    pred = state.pred_completion(i, j)
    if pred is None or pred > t:
        raise InfeasibleActionError(
            f"predecessor of operation ({i},{j}) not completed by clock {t}")
    if k not in inst.jobs[i][j]:
        raise InfeasibleActionError(f"machine {k} not compatible with operation ({i},{j})")
    if state.mach_busy_until[k] > t:
        raise InfeasibleActionError(
            f"machine {k} busy until {state.mach_busy_until[k]} > clock {t}")
    if not (0 <= u < inst.v) or state.veh_busy_until[u] > t:
        raise InfeasibleActionError(f"vehicle {u} not idle at clock {t}")

    bound_before = makespan_lower_bound(state)
    product = state.product_location(i)
    off = inst.travel[state.veh_loc[u]][product]
    on = inst.travel[product][k + 1]
    arrival = t + off + on
    start = max(arrival, state.mach_busy_until[k])
    completion = start + inst.proc_time(i, j, k)

    oid = inst.op_index(i, j)
    state.records[oid] = OpRecord(i, j, k, u, t, arrival, start, completion)
    state.veh_tasks[u].append(TransportTask(i, j, t, product, arrival,
                                            state.veh_loc[u], k + 1))
    state.veh_busy_until[u] = arrival
    state.veh_loc[u] = k + 1
    state.mach_busy_until[k] = completion
    state.mach_intervals[k].append((start, completion))
    state.next_op[i] = j + 1
    state.sched_completion[i] = completion
    state.scheduled_count += 1

    reward = bound_before - makespan_lower_bound(state)
    if not state.done and auto_advance:
        ops, _, _ = feasible_structure(state)
        if not ops:
            advance_clock(state)
    return StepOutcome(reward=reward, done=state.done, clock=state.clock)


def makespan(state):
    """Actual makespan of a terminal state."""
    if not state.done:
        raise ScheduleError("makespan requested for a non-terminal state")
    return max(state.sched_completion)


# -- Final schedule and verification -----------------------------------------

@dataclass
class Schedule:
    instance_name: str
    rows: list                      # OpRecord per operation, job-major order
    vehicle_tasks: list             # TransportTask lists, one per vehicle
    makespan: int = field(init=False)

    def __post_init__(self):
        self.makespan = max(r.completion for r in self.rows)


def final_schedule(state):
    """Extract the complete schedule from a terminal state."""
    if not state.done:
        raise ScheduleError("final_schedule requires a terminal state")
    return Schedule(instance_name=state.inst.name,
                    rows=list(state.records),
                    vehicle_tasks=[list(ts) for ts in state.veh_tasks])


def verify_schedule(inst, sched):
    """Check a schedule against the problem's physical constraints.

    Returns a list of violation descriptions (empty when feasible):
    precedence, machine compatibility and exclusivity, vehicle exclusivity,
    and transport timing (leg durations from the travel matrix, processing
    start at delivery or later, pickup after the product exists).
    """
    problems = []
    by_op = {(r.job, r.op): r for r in sched.rows}
    if len(sched.rows) != inst.total_ops:
        problems.append(f"schedule has {len(sched.rows)} rows, expected {inst.total_ops}")
        return problems
    for r in sched.rows:
        if r.machine not in inst.jobs[r.job][r.op]:
            problems.append(f"op ({r.job},{r.op}) on incompatible machine {r.machine}")
            continue
        if r.completion != r.start + inst.proc_time(r.job, r.op, r.machine):
            problems.append(f"op ({r.job},{r.op}) completion != start + processing time")
        if r.start < r.arrival:
            problems.append(f"op ({r.job},{r.op}) starts before vehicle arrival")
        if r.op > 0:
            pred = by_op[(r.job, r.op - 1)]
            if r.start < pred.completion:
                problems.append(f"op ({r.job},{r.op}) starts before its predecessor completes")
            if r.depart < pred.completion:
                problems.append(f"op ({r.job},{r.op}) picked up before its predecessor completes")
    # machine exclusivity
    per_mach = {}
    for r in sched.rows:
        per_mach.setdefault(r.machine, []).append((r.start, r.completion))
    for k, ivs in per_mach.items():
        ivs.sort()
        for (s1, c1), (s2, c2) in zip(ivs, ivs[1:]):
            if s2 < c1:
                problems.append(f"machine {k}: intervals ({s1},{c1}) and ({s2},{c2}) overlap")
    # vehicle exclusivity + transport timing and location continuity
    for u, tasks in enumerate(sched.vehicle_tasks):
        loc = 0
        prev_arrival = 0
        for task in sorted(tasks, key=lambda t: t.depart):
            if task.depart < prev_arrival:
                problems.append(f"vehicle {u}: transport overlaps previous task")
            if task.source != loc:
                problems.append(f"vehicle {u}: departs from {task.source}, expected {loc}")
            rec = by_op[(task.job, task.op)]
            expected_pickup = 1 + by_op[(task.job, task.op - 1)].machine if task.op > 0 else 0
            if task.pickup_at != expected_pickup:
                problems.append(f"vehicle {u}: pickup location {task.pickup_at} "
                                f"!= product location {expected_pickup}")
            legs = inst.travel[loc][task.pickup_at] + inst.travel[task.pickup_at][task.dest]
            if task.arrival != task.depart + legs:
                problems.append(f"vehicle {u}: arrival {task.arrival} != depart + travel {legs}")
            if rec.arrival != task.arrival or rec.vehicle != u:
                problems.append(f"vehicle {u}: task for op ({task.job},{task.op}) "
                                f"inconsistent with its operation record")
            loc = task.dest
            prev_arrival = task.arrival
    return problems


def schedule_to_csv(sched, path):
    """Write the per-operation schedule table (1-based indices)."""
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["job", "op", "machine", "vehicle",
                    "off_load_start", "arrival", "start", "completion"])
        for r in sched.rows:
            w.writerow([r.job + 1, r.op + 1, r.machine + 1, r.vehicle + 1,
                        r.depart, r.arrival, r.start, r.completion])

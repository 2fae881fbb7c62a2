"""Classical solvers sharing the simulator: dispatching rules with
nearest-vehicle selection, a permutation genetic algorithm, and an
exhaustive branch-and-bound oracle for tiny instances.

All of them act at the simulator's decision epochs, so every schedule they
produce is reachable by the learned policy as well and the exhaustive
optimum bounds them all from below.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .environment import (ActionTriple, ScheduleError, apply_action,
                          feasible_structure, final_schedule, makespan, reset)

RULES = ("spt", "lpt", "fifo")


@dataclass(frozen=True)
class RulePolicy:
    """Dispatching rule for the operation-machine pick; vehicles always
    follow nearest-vehicle selection (minimal empty travel to the product,
    ties to the lowest index)."""
    rule: str

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}; expected one of {RULES}")


def _nearest_vehicle(state, job, vehicles):
    product = state.product_location(job)
    return min(vehicles,
               key=lambda u: (state.inst.travel[state.veh_loc[u]][product], u))


def rule_step(state, rule):
    """One dispatching decision at the current clock.

    spt/lpt pick the feasible operation-machine pair with the shortest or
    longest processing time; fifo picks the operation released (its
    predecessor completed) earliest and its lowest-index idle machine.
    All ties break toward lower indices.
    """
    if isinstance(rule, RulePolicy):
        rule = rule.rule
    ops, machines_for, vehicles = feasible_structure(state)
    if not ops:
        raise ScheduleError("rule_step requires a feasible action")
    inst = state.inst
    if rule in ("spt", "lpt"):
        sign = 1 if rule == "spt" else -1
        job, op, mach = min(
            ((i, j, k) for (i, j) in ops for k in machines_for[(i, j)]),
            key=lambda t: (sign * inst.proc_time(t[0], t[1], t[2]), t[0], t[1], t[2]))
    elif rule == "fifo":
        job, op = min(ops, key=lambda ij: (state.pred_completion(*ij), ij[0], ij[1]))
        mach = machines_for[(job, op)][0]
    else:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    return ActionTriple(job, op, mach, _nearest_vehicle(state, job, vehicles))


def run_rule(inst, rule):
    """Roll a dispatching rule to completion; returns the terminal state."""
    state = reset(inst)
    while not state.done:
        apply_action(state, rule_step(state, rule))
    return state


def random_rollout(inst, rng):
    """Uniformly random feasible choice at every epoch (test traffic)."""
    state = reset(inst)
    while not state.done:
        ops, machines_for, vehicles = feasible_structure(state)
        i, j = ops[rng.integers(len(ops))]
        k = machines_for[(i, j)][rng.integers(len(machines_for[(i, j)]))]
        u = vehicles[rng.integers(len(vehicles))]
        apply_action(state, ActionTriple(i, j, k, u))
    return state


# -- Genetic algorithm --------------------------------------------------------

@dataclass
class GAConfig:
    population_size: int = 40
    generations: int = 60
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    tournament_size: int = 3
    seed: int = 0
    time_budget: float | None = None  # seconds; None = generations only

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        for name in ("crossover_rate", "mutation_rate"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {r}")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")


@dataclass
class _Individual:
    perm: list        # operation ids; emitted as a per-job priority order
    machines: list    # preferred machine per operation id
    vehicles: list    # preferred vehicle per operation id
    span: int | None = None


def _decode(inst, ind):
    """Replay the simulator following the chromosome as priorities.

    At each epoch the feasible operation appearing earliest in the
    permutation is scheduled; its preferred machine/vehicle is used when
    idle, otherwise repaired to the lowest-index feasible one.
    """
    rank = {oid: pos for pos, oid in enumerate(ind.perm)}
    state = reset(inst)
    while not state.done:
        ops, machines_for, vehicles = feasible_structure(state)
        i, j = min(ops, key=lambda ij: rank[inst.op_index(*ij)])
        oid = inst.op_index(i, j)
        cand = machines_for[(i, j)]
        k = ind.machines[oid] if ind.machines[oid] in cand else cand[0]
        u = ind.vehicles[oid] if ind.vehicles[oid] in vehicles else vehicles[0]
        apply_action(state, ActionTriple(i, j, k, u))
    return state


def _random_individual(inst, rng):
    perm = list(rng.permutation(inst.total_ops))
    machines = [int(rng.choice(inst.machines_for(i, j))) for (i, j) in inst.op_ids]
    vehicles = [int(rng.integers(inst.v)) for _ in range(inst.total_ops)]
    return _Individual(perm=[int(x) for x in perm], machines=machines,
                       vehicles=vehicles)


def _one_point_perm_crossover(a, b, rng):
    cut = int(rng.integers(1, len(a)))
    head = a[:cut]
    taken = set(head)
    return head + [g for g in b if g not in taken]


def _one_point_vector_crossover(a, b, rng):
    cut = int(rng.integers(1, len(a)))
    return a[:cut] + b[cut:]


def _mutate(inst, ind, rng):
    if len(ind.perm) >= 2:
        p, q = rng.choice(len(ind.perm), size=2, replace=False)
        ind.perm[p], ind.perm[q] = ind.perm[q], ind.perm[p]
    oid = int(rng.integers(inst.total_ops))
    i, j = inst.op_ids[oid]
    ind.machines[oid] = int(rng.choice(inst.machines_for(i, j)))
    oid = int(rng.integers(inst.total_ops))
    ind.vehicles[oid] = int(rng.integers(inst.v))


def ga_solve(inst, cfg):
    """Elitist tournament GA over (priority permutation, machine vector,
    vehicle vector) chromosomes decoded through the simulator.

    Returns (schedule, makespan, best_per_generation). The best-so-far
    curve is monotone and never worse than the best initial individual.
    """
    rng = np.random.default_rng(cfg.seed)
    deadline = (time.perf_counter() + cfg.time_budget
                if cfg.time_budget is not None else None)
    pop = [_random_individual(inst, rng) for _ in range(cfg.population_size)]
    for ind in pop:
        ind.span = makespan(_decode(inst, ind))
    best = min(pop, key=lambda x: x.span)
    curve = [best.span]

    def tournament():
        picks = rng.integers(len(pop), size=cfg.tournament_size)
        return min((pop[p] for p in picks), key=lambda x: x.span)

    for _ in range(cfg.generations):
        if deadline is not None and time.perf_counter() >= deadline:
            break
        nxt = [_Individual(perm=list(best.perm), machines=list(best.machines),
                           vehicles=list(best.vehicles), span=best.span)]
        while len(nxt) < cfg.population_size:
            pa, pb = tournament(), tournament()
            if rng.random() < cfg.crossover_rate:
                child = _Individual(
                    perm=_one_point_perm_crossover(pa.perm, pb.perm, rng),
                    machines=_one_point_vector_crossover(pa.machines, pb.machines, rng),
                    vehicles=_one_point_vector_crossover(pa.vehicles, pb.vehicles, rng))
            else:
                child = _Individual(perm=list(pa.perm), machines=list(pa.machines),
                                    vehicles=list(pa.vehicles))
            if rng.random() < cfg.mutation_rate:
                _mutate(inst, child, rng)
            child.span = makespan(_decode(inst, child))
            nxt.append(child)
        pop = nxt
        best = min(pop, key=lambda x: x.span)
        curve.append(best.span)

    state = _decode(inst, best)
    return final_schedule(state), best.span, curve


# -- Exhaustive oracle --------------------------------------------------------

class OracleCapError(ValueError):
    """Instance too large for exhaustive enumeration."""


def _remaining_lower_bound(state):
    """True completion lower bound: per job, the completion of the last
    assigned operation plus the minimum processing times of the rest
    (transport ignored, so never above the real optimum)."""
    inst = state.inst
    best = 0
    for i in range(inst.n):
        rem = state.sched_completion[i]
        for j in range(state.next_op[i], inst.num_ops(i)):
            rem += min(inst.jobs[i][j].values())
        best = max(best, rem)
    return best


def exhaustive_optimal(inst, cap=8, prune=True):
    """Depth-first enumeration of every feasible action sequence.

    Returns (optimal makespan, one optimal sequence of triples). Refuses
    instances with more than `cap` operations. With prune=True branches
    whose completion lower bound already meets the incumbent are cut,
    which never changes the optimum.
    """
    if inst.total_ops > cap:
        raise OracleCapError(
            f"instance has {inst.total_ops} operations, cap is {cap}")
    best_span = None
    best_seq = None
    state0 = reset(inst)
    stack = [(state0, [])]
    while stack:
        state, seq = stack.pop()
        ops, machines_for, vehicles = feasible_structure(state)
        for (i, j) in ops:
            for k in machines_for[(i, j)]:
                for u in vehicles:
                    a = ActionTriple(i, j, k, u)
                    child = state.clone()
                    apply_action(child, a)
                    if prune and best_span is not None \
                            and _remaining_lower_bound(child) >= best_span:
                        continue
                    if child.done:
                        span = makespan(child)
                        if best_span is None or span < best_span:
                            best_span = span
                            best_seq = seq + [a]
                    else:
                        stack.append((child, seq + [a]))
    return best_span, best_seq


def replay_sequence(inst, seq):
    """Apply a recorded action sequence from reset; returns the state."""
    state = reset(inst)
    for a in seq:
        apply_action(state, a)
    return state

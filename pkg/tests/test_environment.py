from fractions import Fraction

import numpy as np
import pytest

from fjspt import environment as env
from fjspt.baselines import random_rollout
from fjspt.environment import (ActionTriple, DeadlockError,
                               InfeasibleActionError, ScheduleError)
from fjspt.instance import generate_instance


def test_reset_single_triple(single_op_instance):
    state = env.reset(single_op_instance)
    assert env.feasible_actions(state) == [ActionTriple(0, 0, 0, 0)]
    assert state.clock == 0


def test_initial_bound_is_max_mean_work(tiny_2x2x1):
    state = env.reset(tiny_2x2x1)
    # independent recomputation: per job, sum of mean processing times
    expected = max(
        Fraction(4 + 6, 2) + Fraction(3, 1),
        Fraction(5, 1) + Fraction(2 + 7, 2),
    )
    assert env.makespan_lower_bound(state) == expected == Fraction(19, 2)


def test_feasible_enumeration_two_jobs_two_machines():
    # both first operations compatible with both machines, one vehicle
    from fjspt.instance import Instance
    inst = Instance(name="enum", n=2, m=2, v=1,
                    jobs=(({0: 2, 1: 2},), ({0: 2, 1: 2},)),
                    travel=((0, 1, 1), (1, 0, 1), (1, 1, 0)))
    acts = env.feasible_actions(env.reset(inst))
    assert len(acts) == 4  # 2 ops x 2 machines x 1 vehicle


def test_apply_arithmetic_single_op(single_op_instance):
    state = env.reset(single_op_instance)
    out = env.apply_action(state, ActionTriple(0, 0, 0, 0))
    rec = state.op_record(0, 0)
    # off-load 0 (vehicle and product at depot), on-load 3, processing 5
    assert (rec.depart, rec.arrival, rec.start, rec.completion) == (0, 3, 3, 8)
    assert out.done and env.makespan(state) == 8


def test_zero_travel_reduces_to_processing():
    from fjspt.instance import Instance
    inst = Instance(name="zt", n=1, m=1, v=1,
                    jobs=(({0: 4}, {0: 6}),),
                    travel=((0, 0), (0, 0)))
    state = env.reset(inst)
    env.apply_action(state, ActionTriple(0, 0, 0, 0))
    env.apply_action(state, ActionTriple(0, 1, 0, 0))
    assert env.makespan(state) == 10


def test_hand_simulated_trace(tiny_2x2x1):
    """Frozen hand simulation of a fixed action sequence."""
    state = env.reset(tiny_2x2x1)
    seq = [ActionTriple(0, 0, 0, 0), ActionTriple(1, 0, 0, 0),
           ActionTriple(0, 1, 1, 0), ActionTriple(1, 1, 0, 0)]
    expected_records = [  # (depart, arrival, start, completion)
        (0, 2, 2, 6),
        (6, 10, 10, 15),
        (10, 14, 14, 17),
        (15, 19, 19, 21),
    ]
    expected_clocks = [6, 10, 15, 15]
    expected_rewards = [Fraction(0), Fraction(-10), Fraction(0), Fraction(-3, 2)]
    for a, erec, eclock, erew in zip(seq, expected_records, expected_clocks,
                                     expected_rewards):
        out = env.apply_action(state, a)
        rec = state.op_record(a.job, a.op)
        assert (rec.depart, rec.arrival, rec.start, rec.completion) == erec
        assert out.clock == eclock
        assert out.reward == erew
    assert env.makespan(state) == 21
    assert env.verify_schedule(tiny_2x2x1, env.final_schedule(state)) == []


def test_mid_episode_bound_matches_hand_recursion(tiny_2x2x1):
    state = env.reset(tiny_2x2x1)
    env.apply_action(state, ActionTriple(0, 0, 0, 0))
    env.apply_action(state, ActionTriple(1, 0, 0, 0))
    # job0: completion(op0)=6 plus mean of remaining op (3) -> 9
    # job1: completion(op0)=15 plus mean {2,7} -> 15 + 4.5 = 19.5
    assert env.makespan_lower_bound(state) == Fraction(39, 2)


def test_advance_clock_contract(tiny_2x2x1):
    state = env.reset(tiny_2x2x1)
    with pytest.raises(ScheduleError):
        env.advance_clock(state)  # actions are feasible at t=0
    out = env.apply_action(state, ActionTriple(0, 0, 0, 0), auto_advance=False)
    # sole vehicle is now busy: nothing feasible until it frees at t=2,
    # and nothing is released there either; the next epoch is t=6.
    assert out.clock == 0
    ops, _, _ = env.feasible_structure(state)
    assert ops == []
    assert env.advance_clock(state) == 6


def test_single_busy_machine_event():
    from fjspt.instance import Instance
    inst = Instance(name="ev", n=2, m=1, v=2,
                    jobs=(({0: 7},), ({0: 3},)),
                    travel=((0, 0), (0, 0)))
    state = env.reset(inst)
    out = env.apply_action(state, ActionTriple(0, 0, 0, 0))
    # machine busy until 7; second op must wait for it
    assert out.clock == 7
    assert state.mach_busy_until[0] == 7


def test_infeasible_actions_raise(tiny_2x2x1):
    state = env.reset(tiny_2x2x1)
    with pytest.raises(InfeasibleActionError, match="not the next"):
        env.apply_action(state, ActionTriple(0, 1, 1, 0))
    with pytest.raises(InfeasibleActionError, match="not compatible"):
        env.apply_action(state, ActionTriple(1, 0, 1, 0))
    env.apply_action(state, ActionTriple(0, 0, 0, 0), auto_advance=False)
    with pytest.raises(InfeasibleActionError, match="predecessor"):
        env.apply_action(state, ActionTriple(0, 1, 1, 0))  # completes at 6
    with pytest.raises(InfeasibleActionError, match="busy"):
        env.apply_action(state, ActionTriple(1, 0, 0, 0))  # machine 0 occupied

    from fjspt.instance import Instance
    inst = Instance(name="veh", n=2, m=2, v=1,
                    jobs=(({0: 2, 1: 2},), ({0: 2, 1: 2},)),
                    travel=((0, 1, 1), (1, 0, 1), (1, 1, 0)))
    state = env.reset(inst)
    env.apply_action(state, ActionTriple(0, 0, 0, 0), auto_advance=False)
    with pytest.raises(InfeasibleActionError, match="vehicle"):
        env.apply_action(state, ActionTriple(1, 0, 1, 0))  # vehicle busy at t=0


def test_terminal_state_contracts(single_op_instance):
    state = env.reset(single_op_instance)
    with pytest.raises(ScheduleError):
        env.final_schedule(state)
    env.apply_action(state, ActionTriple(0, 0, 0, 0))
    with pytest.raises(ScheduleError):
        env.feasible_actions(state)
    sched = env.final_schedule(state)
    assert len(sched.rows) == 1 and sched.makespan == 8


@pytest.mark.parametrize("shape,episodes", [((2, 2, 1), 30), ((5, 3, 3), 30),
                                            ((3, 4, 2), 20)])
def test_random_episodes_feasible_and_telescoping(shape, episodes):
    rng = np.random.default_rng(hash(shape) % (2 ** 32))
    for ep in range(episodes):
        inst = generate_instance(*shape, seed=ep)
        state = env.reset(inst)
        bound0 = env.makespan_lower_bound(state)
        total = Fraction(0)
        clocks = [0]
        while not state.done:
            acts = env.feasible_actions(state)
            assert acts, "auto-advance must keep the feasible set nonempty"
            out = env.apply_action(state, acts[rng.integers(len(acts))])
            total += out.reward
            clocks.append(out.clock)
        assert total == bound0 - env.makespan(state)
        assert all(a <= b for a, b in zip(clocks, clocks[1:])), "clock must not regress"
        assert env.verify_schedule(inst, env.final_schedule(state)) == []


def test_exhaustive_oracle_equivalence_small():
    """On tiny instances the simulator's optimum over all action sequences
    matches an unpruned enumeration, and no sequence beats it."""
    from fjspt.baselines import exhaustive_optimal, replay_sequence
    for seed in range(4):
        inst = generate_instance(2, 2, 2, seed=seed)
        assert inst.total_ops <= 6
        span_p, seq_p = exhaustive_optimal(inst, cap=8, prune=True)
        span_u, _ = exhaustive_optimal(inst, cap=8, prune=False)
        assert span_p == span_u
        assert env.makespan(replay_sequence(inst, seq_p)) == span_p
        # random sequences never beat the enumerated optimum
        rng = np.random.default_rng(seed)
        for _ in range(20):
            assert env.makespan(random_rollout(inst, rng)) >= span_p


def test_gantt_export_row_count(tmp_path, tiny_2x2x1):
    state = env.reset(tiny_2x2x1)
    rng = np.random.default_rng(0)
    while not state.done:
        acts = env.feasible_actions(state)
        env.apply_action(state, acts[rng.integers(len(acts))])
    sched = env.final_schedule(state)
    out = tmp_path / "sched.csv"
    env.schedule_to_csv(sched, out)
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1 + tiny_2x2x1.total_ops

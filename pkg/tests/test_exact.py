"""Dynamic-programming oracle: value evaluation, best responses, sweeps."""
import itertools

import numpy as np
import pytest

from abcplan.exact import (
    CapacityError,
    EnumerableMmdp,
    TabularJointPolicy,
    evaluate_joint,
    exact_best_response,
    exact_q_values,
    grid_state_index,
    is_nash,
    joint_response_sweep,
    mmdp_from_domain,
    random_mmdp,
    random_policy,
    solve_joint_optimal,
    tabular_from_handles,
)
from abcplan.factory_floor import initial_state
from abcplan.heuristic import HeuristicPolicy

from conftest import make_spec


def recursive_value(mmdp, policy, t, s):
    """Textbook expectimax replay of a fixed joint policy, no tables."""
    if t >= mmdp.horizon:
        return 0.0
    ja = mmdp.joint_index(tuple(policy.action(i, t, s) for i in range(len(mmdp.action_counts))))
    total = mmdp.rewards[s, ja]
    for s2, p in mmdp.transitions[s][ja]:
        total += mmdp.discount * p * recursive_value(mmdp, policy, t + 1, s2)
    return total


def matrix_game(payoffs):
    """One-state, one-step MMDP from a payoff matrix for two agents."""
    payoffs = np.asarray(payoffs, dtype=float)
    n_a, n_b = payoffs.shape
    rewards = payoffs.reshape(1, n_a * n_b)
    transitions = [[((0, 1.0),) for _ in range(n_a * n_b)]]
    return EnumerableMmdp(
        states=["s"],
        action_counts=(n_a, n_b),
        transitions=transitions,
        rewards=rewards,
        horizon=1,
    )


def test_evaluate_joint_matches_recursive_replay():
    for seed in range(12):
        mmdp = random_mmdp(seed, n_states=4, action_counts=(2, 3), horizon=3)
        policy = random_policy(mmdp, seed + 100)
        values = evaluate_joint(mmdp, policy)
        assert values.shape == (4, 4)
        for s in range(4):
            assert values[0, s] == pytest.approx(recursive_value(mmdp, policy, 0, s), abs=1e-10)
        assert np.all(values[3] == 0.0)


def test_transition_rows_are_distributions():
    mmdp = random_mmdp(5, n_states=6, action_counts=(3, 2), horizon=2)
    for s in range(6):
        for ja in range(6):
            probs = [p for _, p in mmdp.transitions[s][ja]]
            assert sum(probs) == pytest.approx(1.0, abs=1e-12)
            assert all(p >= 0 for p in probs)


def test_q_values_back_up_the_best_response():
    # Q carries the maxed-out continuation, so the policy's own value can
    # never exceed it, and the argmax policy attains the max exactly.
    for seed in (3, 4, 5):
        mmdp = random_mmdp(seed, n_states=5, action_counts=(2, 2), horizon=3)
        policy = random_policy(mmdp, seed)
        values = evaluate_joint(mmdp, policy)
        for agent in range(2):
            q = exact_q_values(mmdp, policy, agent)
            assert q.shape == (3, 5, 2)
            own = np.array(
                [[q[t, s, policy.action(agent, t, s)] for s in range(5)] for t in range(3)]
            )
            assert np.all(own >= values[:3] - 1e-10)
            br_values = evaluate_joint(mmdp, exact_best_response(mmdp, policy, agent))
            assert np.allclose(br_values[:3], q.max(axis=2), atol=1e-10)


def test_best_response_never_hurts():
    for seed in range(15):
        mmdp = random_mmdp(seed, n_states=4, action_counts=(2, 2, 2), horizon=3)
        policy = random_policy(mmdp, seed + 7)
        base = evaluate_joint(mmdp, policy)
        for agent in range(3):
            improved = exact_best_response(mmdp, policy, agent)
            assert np.all(evaluate_joint(mmdp, improved) >= base - 1e-9)


def test_best_response_breaks_ties_low():
    # All payoffs equal: any action is optimal, so the response must be 0.
    mmdp = matrix_game([[1.0, 1.0], [1.0, 1.0]])
    policy = TabularJointPolicy(np.ones((2, 1, 1), dtype=np.int64))
    br = exact_best_response(mmdp, policy, 0)
    assert br.action(0, 0, 0) == 0
    assert br.action(1, 0, 0) == 1  # the other agent is untouched


def test_matrix_game_suboptimal_nash():
    # (1,1) pays 0.5 and neither side can gain alone, yet (0,0) pays 1.0:
    # a Nash point that is not the optimum.
    mmdp = matrix_game([[1.0, 0.0], [0.0, 0.5]])
    stuck = TabularJointPolicy(np.ones((2, 1, 1), dtype=np.int64))
    flag, witness = is_nash(mmdp, stuck)
    assert flag and witness is None
    assert evaluate_joint(mmdp, stuck)[0, 0] == 0.5
    best_policy, best_value = solve_joint_optimal(mmdp)
    assert best_value[0, 0] == 1.0
    swept, sweeps = joint_response_sweep(mmdp, stuck)
    assert np.array_equal(swept.actions, stuck.actions)
    assert evaluate_joint(mmdp, swept)[0, 0] == 0.5


def test_nash_witness_names_a_profitable_deviation():
    mmdp = matrix_game([[1.0, 0.0], [0.0, 0.5]])
    mixed = TabularJointPolicy(np.array([[[0]], [[1]]], dtype=np.int64))
    flag, witness = is_nash(mmdp, mixed)
    assert not flag
    agent, t, state, action = witness
    assert t == 0 and state == 0
    deviated = mixed.with_component(
        agent, np.full((1, 1), action, dtype=np.int64)
    )
    assert evaluate_joint(mmdp, deviated)[0, 0] > evaluate_joint(mmdp, mixed)[0, 0]


def test_sweep_reaches_nash_and_never_dips():
    for seed in range(10):
        mmdp = random_mmdp(seed, n_states=4, action_counts=(2, 3), horizon=3)
        policy = random_policy(mmdp, seed + 55)
        trace = [evaluate_joint(mmdp, policy)[0].copy()]
        current = policy
        swept, sweeps = joint_response_sweep(mmdp, current)
        assert sweeps >= 1
        flag, witness = is_nash(mmdp, swept)
        assert flag, f"seed {seed} left witness {witness}"
        # replay one best response at a time and audit monotonicity
        for _ in range(sweeps):
            for agent in range(2):
                nxt = exact_best_response(mmdp, current, agent)
                before = evaluate_joint(mmdp, current)
                after = evaluate_joint(mmdp, nxt)
                assert np.all(after >= before - 1e-9)
                current = nxt
        assert np.all(np.isclose(evaluate_joint(mmdp, current), evaluate_joint(mmdp, swept)))


def test_sweep_respects_custom_order():
    mmdp = random_mmdp(2, n_states=3, action_counts=(2, 2), horizon=2)
    policy = random_policy(mmdp, 9)
    a, _ = joint_response_sweep(mmdp, policy, order=(1, 0))
    assert is_nash(mmdp, a)[0]


def test_solve_joint_optimal_is_an_upper_bound():
    for seed in range(8):
        mmdp = random_mmdp(seed, n_states=4, action_counts=(2, 2), horizon=3)
        _, best = solve_joint_optimal(mmdp)
        swept, _ = joint_response_sweep(mmdp, random_policy(mmdp, seed))
        assert np.all(best + 1e-9 >= evaluate_joint(mmdp, swept))


def corridor_mmdp(act_success=0.9):
    spec = make_spec(move_success=0.9, act_success=act_success)
    return spec, mmdp_from_domain(spec)


def test_corridor_exact_root_values():
    # By hand: reach the east cell in two 0.9 moves, then one act attempt.
    spec, mmdp = corridor_mmdp()
    root = grid_state_index(mmdp, initial_state(spec))
    zero = TabularJointPolicy(np.zeros((1, 3, len(mmdp.states)), dtype=np.int64))
    q = exact_q_values(mmdp, zero, 0)
    assert q[0, root] == pytest.approx([0.0, 0.0, 0.0, 0.729, 0.0], abs=1e-12)
    spec1, mmdp1 = corridor_mmdp(act_success=1.0)
    root1 = grid_state_index(mmdp1, initial_state(spec1))
    q1 = exact_q_values(mmdp1, TabularJointPolicy(np.zeros((1, 3, len(mmdp1.states)), dtype=np.int64)), 0)
    assert q1[0, root1] == pytest.approx([0.0, 0.0, 0.0, 0.81, 0.0], abs=1e-12)


def test_corridor_open_loop_enumeration_agrees():
    # Brute force over all 5^3 action scripts; with no useful feedback on
    # this instance the best open-loop script ties the closed-loop optimum.
    spec, mmdp = corridor_mmdp()

    def script_value(script):
        dist = {grid_state_index(mmdp, initial_state(spec)): 1.0}
        total = 0.0
        for action in script:
            ja = mmdp.joint_index((action,))
            nxt = {}
            for s, mass in dist.items():
                total += mass * mmdp.rewards[s, ja]
                for s2, p in mmdp.transitions[s][ja]:
                    nxt[s2] = nxt.get(s2, 0.0) + mass * p
            dist = nxt
        return total

    best_script = max(
        script_value(s) for s in itertools.product(range(5), repeat=3)
    )
    _, best = solve_joint_optimal(mmdp)
    root = grid_state_index(mmdp, initial_state(spec))
    assert best_script == pytest.approx(0.729, abs=1e-12)
    assert best[0, root] == pytest.approx(best_script, abs=1e-12)


def test_domain_compiler_matches_handle_rollout():
    # Sure dynamics: the compiled model evaluated under the heuristic must
    # equal the deterministic episode return.
    spec = make_spec()
    mmdp = mmdp_from_domain(spec)
    policy = tabular_from_handles(mmdp, spec, [HeuristicPolicy(spec, 0)])
    values = evaluate_joint(mmdp, policy)
    root = grid_state_index(mmdp, initial_state(spec))
    assert values[0, root] == pytest.approx(1.0, abs=1e-12)


def test_domain_compiler_two_robots():
    spec = make_spec(
        width=3,
        height=1,
        robot_ids=(1, 2),
        robot_starts=((0, 0), (0, 2)),
        fixed_tasks=((0, 1, 1), (0, 2, 1)),
    )
    mmdp = mmdp_from_domain(spec)
    policy = tabular_from_handles(
        mmdp, spec, [HeuristicPolicy(spec, i) for i in range(2)]
    )
    values = evaluate_joint(mmdp, policy)
    root = grid_state_index(mmdp, initial_state(spec))
    assert values[0, root] == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize(
    "overrides",
    [
        dict(width=4, height=3),
        dict(width=3, height=3, robot_ids=(1, 2, 3), robot_starts=((0, 0), (0, 1), (0, 2))),
        dict(fixed_tasks=((0, 1, 2),)),
        dict(spawn_cells=((0, 2),), spawn_probability=0.5, spawn_events=1),
    ],
)
def test_domain_compiler_capacity_limits(overrides):
    with pytest.raises(CapacityError):
        mmdp_from_domain(make_spec(**overrides))


def test_policy_shape_validation():
    with pytest.raises(ValueError):
        TabularJointPolicy(np.zeros((2, 3), dtype=np.int64))

"""The rank-based initial policy: destination scoring and path choice."""
import math
import random

from abcplan.factory_floor import FactoryFloorEnv, initial_state
from abcplan.heuristic import (
    HeuristicPolicy,
    destination_value,
    heuristic_action,
    social_rank,
)

from conftest import make_spec

UP, DOWN, LEFT, RIGHT, ACT = range(5)


def co_located_spec(n):
    return make_spec(
        width=5,
        height=5,
        robot_ids=tuple(range(1, n + 1)),
        robot_starts=(((2, 2),) * n),
        fixed_tasks=((0, 0, 1),),
    )


def test_social_rank_orders_co_located_robots_by_id():
    spec = co_located_spec(4)
    state = initial_state(spec)
    assert [social_rank(state, i, spec) for i in range(4)] == [1, 2, 3, 4]


def test_social_rank_resets_when_apart():
    spec = make_spec(
        width=5,
        height=5,
        robot_ids=(1, 2, 3),
        robot_starts=((0, 0), (4, 4), (4, 4)),
        fixed_tasks=((0, 1, 1),),
    )
    state = initial_state(spec)
    assert [social_rank(state, i, spec) for i in range(3)] == [1, 1, 2]


def test_destination_value_is_count_over_distance():
    spec = make_spec(width=5, height=5, robot_starts=((0, 0),), fixed_tasks=((2, 1, 2),))
    state = initial_state(spec)
    assert destination_value(state, (2, 1), 0, spec) == 2.0 / 3.0
    assert destination_value(state, (0, 1), 0, spec) == -math.inf
    on_top = state._replace(positions=((2, 1),))
    assert destination_value(on_top, (2, 1), 0, spec) == math.inf


def test_acts_on_reached_target():
    spec = make_spec(robot_starts=((0, 2),))
    assert heuristic_action(initial_state(spec), 0, spec) == ACT


def test_acts_in_place_when_no_tasks():
    spec = make_spec(fixed_tasks=())
    assert heuristic_action(initial_state(spec), 0, spec) == ACT


def test_moves_along_larger_axis_first():
    # Target two columns right, one row down: the column gap is larger.
    spec = make_spec(width=4, height=4, robot_starts=((0, 0),), fixed_tasks=((1, 2, 1),))
    assert heuristic_action(initial_state(spec), 0, spec) == RIGHT


def test_axis_tie_moves_vertically():
    spec = make_spec(width=4, height=4, robot_starts=((0, 0),), fixed_tasks=((2, 2, 1),))
    assert heuristic_action(initial_state(spec), 0, spec) == DOWN


def test_rank_two_robot_takes_second_best():
    # Both robots on one cell. Best destination is the pile of 3 to the
    # east, second best the single to the west; rank 2 goes west.
    spec = make_spec(
        width=5,
        height=1,
        robot_ids=(1, 2),
        robot_starts=((0, 2), (0, 2)),
        fixed_tasks=((0, 4, 3), (0, 0, 1)),
    )
    state = initial_state(spec)
    assert heuristic_action(state, 0, spec) == RIGHT
    assert heuristic_action(state, 1, spec) == LEFT


def test_ranks_wrap_around_candidates():
    # Three co-located robots, two candidate cells: rank 3 wraps to the best.
    spec = make_spec(
        width=5,
        height=1,
        robot_ids=(1, 2, 3),
        robot_starts=((0, 2), (0, 2), (0, 2)),
        fixed_tasks=((0, 4, 3), (0, 0, 1)),
    )
    state = initial_state(spec)
    assert heuristic_action(state, 2, spec) == RIGHT


def test_value_tie_breaks_row_major():
    # Two equally valued singles; the row-major earlier cell wins rank 1.
    spec = make_spec(
        width=3,
        height=3,
        robot_ids=(1, 2),
        robot_starts=((1, 1), (1, 1)),
        fixed_tasks=((0, 1, 1), (2, 1, 1)),
    )
    state = initial_state(spec)
    assert heuristic_action(state, 0, spec) == UP
    assert heuristic_action(state, 1, spec) == DOWN


def test_shipped_two_robot_map_first_moves(two_robot_spec):
    # Hand-ranked: robot 1 at (0,3) heads for (1,4), robot 2 at (3,3) for
    # (2,4); both beliefs collide on the east piles, which is the point of
    # the map.
    state = initial_state(two_robot_spec)
    assert heuristic_action(state, 0, two_robot_spec) == DOWN
    assert heuristic_action(state, 1, two_robot_spec) == UP


def test_policy_handle_matches_function(two_robot_spec):
    env = FactoryFloorEnv(two_robot_spec)
    rng = random.Random(0)
    state = env.initial_state()
    for agent in range(2):
        handle = HeuristicPolicy(two_robot_spec, agent)
        assert handle.act(state, rng) == heuristic_action(state, agent, two_robot_spec)
        assert handle.act(state, rng) == handle.act(state, rng)


def test_full_episode_collects_everything_on_sure_dynamics():
    # Two robots, sure moves, one pile each after rank splitting: the
    # heuristic pair clears the map well inside the horizon.
    spec = make_spec(
        width=5,
        height=1,
        horizon=8,
        robot_ids=(1, 2),
        robot_starts=((0, 2), (0, 2)),
        fixed_tasks=((0, 4, 2), (0, 0, 1)),
    )
    env = FactoryFloorEnv(spec)
    policies = [HeuristicPolicy(spec, i) for i in range(2)]
    state = env.initial_state()
    rng = random.Random(0)
    total = 0.0
    for _ in range(spec.horizon):
        actions = [p.act(state, rng) for p in policies]
        state, reward, _ = env.step_detail(state, actions, rng)
        total += reward
    assert total == 3.0
    assert sum(state.tasks) == 0

"""Shared fixtures: tiny domains and micro-scale settings for fast tests."""
import pytest

from abcplan.cloning import TrainingHyperparams
from abcplan.factory_floor import DomainSpec, FactoryFloorEnv
from abcplan.mcts import MctsParams


def make_spec(**overrides) -> DomainSpec:
    """A 1x3 corridor with one task at the east end, everything overridable."""
    base = dict(
        width=3,
        height=1,
        horizon=3,
        move_success=1.0,
        act_success=1.0,
        robot_ids=(1,),
        robot_starts=((0, 0),),
        fixed_tasks=((0, 2, 1),),
        spawn_cells=(),
        spawn_probability=0.0,
        spawn_events=0,
    )
    base.update(overrides)
    return DomainSpec(**base)


@pytest.fixture
def corridor_spec():
    return make_spec()


@pytest.fixture
def corridor_env(corridor_spec):
    return FactoryFloorEnv(corridor_spec)


@pytest.fixture
def two_robot_spec():
    """The shipped two-robot map: 6x4, four piles of two."""
    return make_spec(
        width=6,
        height=4,
        horizon=10,
        move_success=0.9,
        robot_ids=(1, 2),
        robot_starts=((0, 3), (3, 3)),
        fixed_tasks=((1, 1, 2), (2, 1, 2), (1, 4, 2), (2, 4, 2)),
    )


@pytest.fixture
def micro_params():
    """Planner settings small enough for sub-second episodes."""
    return MctsParams(exploration=0.5, iterations=40, horizon=10)


@pytest.fixture
def micro_hyper():
    return TrainingHyperparams(batch_size=16, epochs=1, learning_rate=1e-3)

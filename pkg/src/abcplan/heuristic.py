"""Hand-coded task-chasing policy used as the generation-0 teammate model.

Each robot scores every cell that still holds tasks, ranks the candidates,
and heads for the k-th best where k is its social rank among co-located
robots. The policy is a pure function of (state, agent), which makes it a
valid deterministic teammate model inside a planner's simulator.
"""
from __future__ import annotations

import math
import random

from .core import PolicyHandle
from .factory_floor import ACT, DOWN, DomainSpec, GridState, LEFT, RIGHT, UP


def social_rank(state: GridState, agent: int, spec: DomainSpec) -> int:
    """1 + number of co-located robots with a smaller id (1-based rank)."""
    mine = state.positions[agent]
    my_id = spec.robot_ids[agent]
    ids = spec.robot_ids
    k = 1
    for j, pos in enumerate(state.positions):
        if pos == mine and ids[j] < my_id:
            k += 1
    return k


def destination_value(state: GridState, cell: tuple[int, int], agent: int, spec: DomainSpec) -> float:
    """Attractiveness of a cell: task count over Manhattan distance.

    Returns -inf for an empty cell (not a destination) and +inf when the
    robot already stands on a cell with tasks.
    """
    r, c = cell
    count = state.tasks[r * spec.width + c]
    if count == 0:
        return -math.inf
    r0, c0 = state.positions[agent]
    dist = abs(r - r0) + abs(c - c0)
    if dist == 0:
        return math.inf
    return count / dist


def heuristic_action(state: GridState, agent: int, spec: DomainSpec) -> int:
    """Pick the agent's action: ACT on the target cell, else step toward it.

    Candidate cells (those with at least one task) are ranked by value,
    ties broken row-major; the robot takes the ((k-1) mod m)+1-th best for
    social rank k among m candidates. Movement follows a shortest Manhattan
    path, resolving the axis with the larger displacement first and breaking
    ties vertically. With no tasks anywhere the robot just ACTs in place.
    """
    r0, c0 = state.positions[agent]
    width = spec.width
    tasks = state.tasks
    ranked = []
    for r in range(spec.height):
        base = r * width
        for c in range(width):
            count = tasks[base + c]
            if count:
                dist = abs(r - r0) + abs(c - c0)
                value = math.inf if dist == 0 else count / dist
                ranked.append((-value, (r, c)))
    if not ranked:
        return ACT
    ranked.sort()
    k = social_rank(state, agent, spec)
    target = ranked[(k - 1) % len(ranked)][1]
    tr, tc = target
    if tr == r0 and tc == c0:
        return ACT
    dr = tr - r0
    dc = tc - c0
    if dc == 0 or (dr != 0 and abs(dr) >= abs(dc)):
        return DOWN if dr > 0 else UP
    return RIGHT if dc > 0 else LEFT


class HeuristicPolicy(PolicyHandle):
    """Memoizing handle around heuristic_action for one agent.

    The action ignores the time step, so the cache key drops it; the cache is
    transparent (pure recomputation) and is not pickled.
    """

    kind = "heuristic"

    def __init__(self, spec: DomainSpec, agent: int):
        self.spec = spec
        self.agent = agent
        self._cache: dict = {}

    def act(self, state: GridState, rng: random.Random | None = None) -> int:
        key = (state.tasks, state.positions)
        cache = self._cache
        action = cache.get(key)
        if action is None:
            action = heuristic_action(state, self.agent, self.spec)
            cache[key] = action
        return action

    def __getstate__(self):
        return {"spec": self.spec, "agent": self.agent}

    def __setstate__(self, d):
        self.spec = d["spec"]
        self.agent = d["agent"]
        self._cache = {}

"""Shared multi-agent MDP contracts: policies, episodes, seeding, return statistics.

Environments are fully cooperative: every agent observes the full state and
all agents receive one shared reward per step. States are immutable hashable
values carrying the current time step as attribute ``t``; an episode always
lasts exactly ``horizon`` steps.
"""
from __future__ import annotations

import hashlib
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

JointAction = tuple[int, ...]

Z95 = 1.96

_MASK64 = (1 << 64) - 1


class ConfigurationError(ValueError):
    """Raised when a run is assembled from inconsistent pieces."""


def _mix64(x: int) -> int:
    # SplitMix64 finalizer: consecutive integers map to decorrelated values.
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *path: int | str) -> int:
    """Derive an independent substream seed from a master seed and a key path.

    The same (master, path) pair always yields the same value; distinct paths
    yield decorrelated streams. String path parts are hashed with BLAKE2b so
    the derivation is stable across processes and platforms.
    """
    s = _mix64(master & _MASK64)
    for part in path:
        if isinstance(part, str):
            part = int.from_bytes(
                hashlib.blake2b(part.encode(), digest_size=8).digest(), "little"
            )
        s = _mix64(s ^ _mix64(part & _MASK64))
    return s


class PolicyHandle:
    """One agent's action rule. Deterministic given (state, rng state).

    ``kind`` names the rule family; subclasses carry their own configuration.
    Handles that never consult the rng (heuristic, cloned-model, fixed-table)
    simply ignore the argument.
    """

    kind: str = "abstract"

    def act(self, state, rng: random.Random) -> int:
        raise NotImplementedError


class FixedTablePolicy(PolicyHandle):
    """Explicit state -> action lookup, for small enumerable domains."""

    kind = "fixed-table"

    def __init__(self, table: dict):
        self.table = dict(table)

    def act(self, state, rng: random.Random | None = None) -> int:
        return self.table[state]


@runtime_checkable
class Environment(Protocol):
    """Duck-typed simulator contract used by the episode runner and planner."""

    n_agents: int
    n_actions: int
    horizon: int
    discount: float

    def initial_state(self): ...

    def step_detail(self, state, actions: JointAction, rng: random.Random):
        """Advance one step. Returns (next_state, reward, per_agent_completions)."""
        ...


@dataclass(frozen=True)
class TrajectoryStep:
    state: object  # state at which the actions were selected
    actions: JointAction
    reward: float


@dataclass(frozen=True)
class Trajectory:
    initial_state: object
    steps: tuple[TrajectoryStep, ...]
    total_return: float
    discount: float = 1.0


@dataclass(frozen=True)
class ReturnSummary:
    n_episodes: int
    mean: float
    sample_sd: float
    ci95_low: float
    ci95_high: float


def summarize_returns(returns: Sequence[float]) -> ReturnSummary:
    """Mean, sample standard deviation and a normal-approximation 95% interval.

    The sd uses the n-1 denominator; with a single episode (or none to speak
    of) the sd and the interval half-width are defined as zero.
    """
    n = len(returns)
    if n == 0:
        raise ValueError("cannot summarize zero episodes")
    mean = sum(returns) / n
    if n >= 2:
        var = sum((x - mean) ** 2 for x in returns) / (n - 1)
        sd = math.sqrt(var)
        half = Z95 * sd / math.sqrt(n)
    else:
        sd = 0.0
        half = 0.0
    return ReturnSummary(n, mean, sd, mean - half, mean + half)


def run_episode(env: Environment, policies: Sequence[PolicyHandle], seed: int) -> Trajectory:
    """Play one full episode and record every (state, joint action, reward).

    The seed fixes all stochasticity: the environment and each agent's policy
    get decorrelated substreams derived from it, so distinct agents' planners
    may run concurrently without sharing rng state.
    """
    n = env.n_agents
    if len(policies) != n:
        raise ConfigurationError(
            f"got {len(policies)} policies for {n} agents"
        )
    env_rng = random.Random(derive_seed(seed, "env"))
    agent_rngs = [random.Random(derive_seed(seed, "agent", k)) for k in range(n)]
    state = env.initial_state()
    initial = state
    steps = []
    total = 0.0
    disc = 1.0
    gamma = env.discount
    for _ in range(env.horizon):
        actions = tuple(policies[k].act(state, agent_rngs[k]) for k in range(n))
        nxt, reward, _ = env.step_detail(state, actions, env_rng)
        steps.append(TrajectoryStep(state, actions, reward))
        total += disc * reward
        disc *= gamma
        state = nxt
    return Trajectory(initial, tuple(steps), total, gamma)


def _episode_batch(env, policies, seed, indices):
    return [(i, run_episode(env, policies, seed + i)) for i in indices]


def collect_trajectories(
    env: Environment,
    policies: Sequence[PolicyHandle],
    n_episodes: int,
    seed: int,
    n_jobs: int = 1,
) -> list[Trajectory]:
    """Run n_episodes episodes; episode i uses seed+i.

    Episodes are independent, so with n_jobs > 1 they are farmed out to worker
    processes in contiguous chunks; results are identical for any n_jobs.
    """
    if n_episodes < 1:
        raise ConfigurationError("n_episodes must be >= 1")
    if n_jobs <= 1 or n_episodes == 1:
        return [run_episode(env, policies, seed + i) for i in range(n_episodes)]
    n_jobs = min(n_jobs, n_episodes)
    chunks = [list(range(j, n_episodes, n_jobs)) for j in range(n_jobs)]
    out: list[Trajectory | None] = [None] * n_episodes
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [
            pool.submit(_episode_batch, env, policies, seed, chunk)
            for chunk in chunks
        ]
        for fut in futures:
            for i, traj in fut.result():
                out[i] = traj
    return out  # type: ignore[return-value]


def evaluate_policy(
    env: Environment,
    policies: Sequence[PolicyHandle],
    n_episodes: int,
    seed: int,
    n_jobs: int = 1,
) -> ReturnSummary:
    """Estimate the joint policy's expected return from n_episodes rollouts."""
    trajectories = collect_trajectories(env, policies, n_episodes, seed, n_jobs)
    return summarize_returns([t.total_return for t in trajectories])

"""Per-agent UCT planner with sparse outcome sampling.

The planning agent folds its teammates into the simulator: at every simulated
step the teammate models pick their actions, so the tree only branches over
the planner's own five moves. Chance outcomes under an action node are capped
at sparse_limit distinct children; once the cap is reached the simulator is
never invoked again at that node and outcomes are redrawn in proportion to
the occurrence counts recorded so far.
"""
from __future__ import annotations

import math
import random
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

from .core import Environment, PolicyHandle


@dataclass(frozen=True)
class MctsParams:
    """Search configuration.

    exploration is the base constant C of the schedule c(t) = C * (H - t):
    deeper in the episode less return remains, so exploration shrinks with
    the remaining steps. diy_bonus is added to simulated rewards for every
    task the planning agent's own robot completes (simulation only; reported
    episode rewards are never inflated).
    """

    exploration: float
    iterations: int
    horizon: int
    sparse_limit: int = 20
    diy_bonus: float = 0.7

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.sparse_limit < 1:
            raise ValueError("sparse_limit must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.exploration < 0:
            raise ValueError("exploration must be >= 0")


def uct_score(q: float, parent_visits: int, node_visits: int, c: float) -> float:
    """Upper-confidence score; unvisited nodes score +inf."""
    if node_visits == 0:
        return math.inf
    return q + c * math.sqrt(math.log(parent_visits) / node_visits)


class Node:
    """One state node: per-action visit counts, value sums, sampled children.

    children[a] maps (next_state, reward) outcomes to child nodes; counts[a]
    tracks how often each outcome was sampled while below the sparse cap.
    """

    __slots__ = ("state", "visits", "n", "w", "children", "counts", "_frozen")

    def __init__(self, state, n_actions: int):
        self.state = state
        self.visits = 0
        self.n = [0] * n_actions
        self.w = [0.0] * n_actions
        self.children: list[dict | None] | None = None
        self.counts: list[dict | None] | None = None
        self._frozen: list | None = None

    def q_values(self) -> list[float]:
        """Mean return per action; nan where an action was never tried."""
        return [w / n if n else math.nan for w, n in zip(self.w, self.n)]


def sample_outcome(node: Node, action: int, simulate, limit: int, rng: random.Random):
    """Sparse outcome draw for (node, action).

    Below the cap of `limit` distinct children, `simulate()` runs and the
    returned (next_state, reward) outcome's occurrence count is recorded (new
    outcomes become children). At the cap the simulator is never invoked
    again: an existing child is redrawn with probability proportional to its
    occurrence count, and the counts are frozen from that point on.

    Returns (child, reward, created). The search loop inlines this logic;
    tests hold the two in lockstep.
    """
    n_actions = len(node.n)
    if node.children is None:
        node.children = [None] * n_actions
        node.counts = [None] * n_actions
        node._frozen = [None] * n_actions
    children = node.children[action]
    if children is None:
        children = node.children[action] = {}
        node.counts[action] = {}
    if len(children) < limit:
        nxt, reward = simulate()
        key = (nxt, reward)
        counts = node.counts[action]
        child = children.get(key)
        if child is None:
            child = Node(nxt, n_actions)
            children[key] = child
            counts[key] = 1
            return child, reward, True
        counts[key] += 1
        return child, reward, False
    frozen = node._frozen[action]
    if frozen is None:
        counts = node.counts[action]
        cum = []
        total = 0
        kids = []
        rewards = []
        for key, cnt in counts.items():
            total += cnt
            cum.append(total)
            kids.append(children[key])
            rewards.append(key[1])
        frozen = node._frozen[action] = (cum, kids, rewards, total)
    cum, kids, rewards, total = frozen
    i = bisect_right(cum, rng.randrange(total))
    return kids[i], rewards[i], False


class MctsPlanner:
    """Reusable search driver for one (environment, agent) pair."""

    def __init__(
        self,
        env: Environment,
        agent: int,
        teammate_models: Sequence[PolicyHandle | None],
        rollout_policy: PolicyHandle,
        params: MctsParams,
    ):
        if len(teammate_models) != env.n_agents:
            raise ValueError("teammate_models must have one slot per agent")
        for k in range(env.n_agents):
            if k != agent and teammate_models[k] is None:
                raise ValueError(f"missing teammate model for agent {k}")
        self.env = env
        self.agent = agent
        self.models = list(teammate_models)
        self.rollout_policy = rollout_policy
        self.params = params

    def search(self, root_state, rng: random.Random, trace: list | None = None) -> Node:
        """Run the configured number of iterations; returns the root node.

        When trace is a list, (root_action, return) pairs are appended per
        iteration, which lets tests audit backpropagation bookkeeping.
        """
        env = self.env
        p = self.params
        agent = self.agent
        models = self.models
        rollout = self.rollout_policy
        n_actions = env.n_actions
        n_agents = env.n_agents
        others = [k for k in range(n_agents) if k != agent]
        gamma = env.discount
        horizon = p.horizon
        limit = p.sparse_limit
        bonus = p.diy_bonus
        c_base = p.exploration
        log = math.log
        sqrt = math.sqrt
        step_detail = env.step_detail

        if root_state.t >= horizon:
            raise ValueError(f"cannot plan at t={root_state.t} (horizon {horizon})")

        root = Node(root_state, n_actions)
        acts = [0] * n_agents
        for _ in range(p.iterations):
            node = root
            path_nodes = []
            path_actions = []
            path_rewards = []
            g = 0.0
            while True:
                state = node.state
                t = state.t
                if t >= horizon:
                    break
                # selection: untried actions first (index order), then UCT
                n_arr = node.n
                action = -1
                for i in range(n_actions):
                    if not n_arr[i]:
                        action = i
                        break
                if action < 0:
                    c = c_base * (horizon - t)
                    log_n = log(node.visits)
                    w_arr = node.w
                    best = -math.inf
                    for i in range(n_actions):
                        ni = n_arr[i]
                        score = w_arr[i] / ni + c * sqrt(log_n / ni)
                        if score > best:
                            best = score
                            action = i
                # sparse outcome sampling
                if node.children is None:
                    node.children = [None] * n_actions
                    node.counts = [None] * n_actions
                    node._frozen = [None] * n_actions
                children = node.children[action]
                if children is None:
                    children = node.children[action] = {}
                    node.counts[action] = {}
                created = False
                if len(children) < limit:
                    for k in others:
                        acts[k] = models[k].act(state, rng)
                    acts[agent] = action
                    nxt, reward, removed = step_detail(state, tuple(acts), rng)
                    reward += bonus * removed[agent]
                    key = (nxt, reward)
                    child = children.get(key)
                    counts = node.counts[action]
                    if child is None:
                        child = Node(nxt, n_actions)
                        children[key] = child
                        counts[key] = 1
                        created = True
                    else:
                        counts[key] += 1
                else:
                    frozen = node._frozen[action]
                    if frozen is None:
                        counts = node.counts[action]
                        cum = []
                        total = 0
                        kids = []
                        rewards = []
                        for key, cnt in counts.items():
                            total += cnt
                            cum.append(total)
                            kids.append(children[key])
                            rewards.append(key[1])
                        frozen = node._frozen[action] = (cum, kids, rewards, total)
                    cum, kids, rewards, total = frozen
                    i = bisect_right(cum, rng.randrange(total))
                    child = kids[i]
                    reward = rewards[i]
                path_nodes.append(node)
                path_actions.append(action)
                path_rewards.append(reward)
                node = child
                if created:
                    g = _rollout(step_detail, node.state, agent, rollout, models,
                                 others, acts, horizon, gamma, bonus, rng)
                    break
            # backpropagation
            node.visits += 1
            for i in range(len(path_nodes) - 1, -1, -1):
                g = path_rewards[i] + gamma * g
                parent = path_nodes[i]
                a = path_actions[i]
                parent.w[a] += g
                parent.n[a] += 1
                parent.visits += 1
            if trace is not None and path_actions:
                trace.append((path_actions[0], g))
        return root

    def plan(self, root_state, rng: random.Random) -> int:
        """Search, then return the root action with the best mean return.

        Ties go to the lowest action index; actions never tried rank last.
        """
        root = self.search(root_state, rng)
        best = -math.inf
        best_action = 0
        for a in range(self.env.n_actions):
            n = root.n[a]
            if n and root.w[a] / n > best:
                best = root.w[a] / n
                best_action = a
        return best_action


def _rollout(step_detail, state, agent, rollout_policy, models, others, acts,
             horizon, gamma, bonus, rng):
    # Play out to the horizon: own actions from the rollout policy, teammates
    # from their models; the planner's own completions earn the diy bonus.
    g = 0.0
    disc = 1.0
    while state.t < horizon:
        for k in others:
            acts[k] = models[k].act(state, rng)
        acts[agent] = rollout_policy.act(state, rng)
        state, reward, removed = step_detail(state, tuple(acts), rng)
        g += disc * (reward + bonus * removed[agent])
        disc *= gamma
    return g


def rollout_return(
    env: Environment,
    state,
    agent: int,
    rollout_policy: PolicyHandle,
    teammate_models: Sequence[PolicyHandle | None],
    params: MctsParams,
    rng: random.Random,
) -> float:
    """Return of one simulated playout from state to the horizon."""
    others = [k for k in range(env.n_agents) if k != agent]
    acts = [0] * env.n_agents
    return _rollout(env.step_detail, state, agent, rollout_policy, list(teammate_models),
                    others, acts, params.horizon, env.discount, params.diy_bonus, rng)


def plan_action(
    env: Environment,
    root_state,
    agent: int,
    teammate_models: Sequence[PolicyHandle | None],
    rollout_policy: PolicyHandle,
    params: MctsParams,
    rng: random.Random,
) -> int:
    """One-shot planning call (builds a fresh tree and discards it)."""
    planner = MctsPlanner(env, agent, teammate_models, rollout_policy, params)
    return planner.plan(root_state, rng)


class MctsPolicy(PolicyHandle):
    """PolicyHandle adapter so a planner can act inside run_episode."""

    kind = "mcts"

    def __init__(self, env, agent, teammate_models, rollout_policy, params):
        self.planner = MctsPlanner(env, agent, teammate_models, rollout_policy, params)

    def act(self, state, rng: random.Random) -> int:
        return self.planner.plan(state, rng)

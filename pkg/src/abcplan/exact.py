"""Exact finite-horizon solver for small enumerable cooperative MDPs.

Everything here is tabular and time-indexed: a policy is one action per
(agent, time step, state), values are computed by backward induction, and a
best response re-plans one agent's component against the others held fixed.
Used to verify the sampling planner and the improvement properties of
best-response sweeps on instances small enough to enumerate.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .factory_floor import ACT, DomainSpec, GridState, N_ACTIONS, initial_state, resolve_actions

_ROW_TOL = 1e-12
MAX_TABLE_ENTRIES = 1_000_000
MAX_SWEEPS = 10_000


class CapacityError(ValueError):
    """The instance is too large to enumerate."""


class SweepDivergenceError(RuntimeError):
    """Best-response sweeps failed to reach a fixed point (diagnostic guard)."""


@dataclass
class EnumerableMmdp:
    """Explicit cooperative MDP over hashable states.

    transitions[s][ja] lists (next_state_index, probability) pairs for joint
    action index ja; rewards[s, ja] is the expected immediate shared reward.
    Joint action indices enumerate per-agent actions with the last agent
    varying fastest.
    """

    states: list
    action_counts: tuple[int, ...]
    transitions: list
    rewards: np.ndarray
    horizon: int
    discount: float = 1.0
    _index: dict = field(init=False, repr=False)
    _strides: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        n_states = len(self.states)
        n_joint = 1
        for a in self.action_counts:
            if a < 1:
                raise ValueError("each agent needs at least one action")
            n_joint *= a
        if n_states * n_joint > MAX_TABLE_ENTRIES:
            raise CapacityError(
                f"{n_states} states x {n_joint} joint actions exceeds "
                f"{MAX_TABLE_ENTRIES} table entries"
            )
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        strides = [1] * len(self.action_counts)
        for k in range(len(self.action_counts) - 2, -1, -1):
            strides[k] = strides[k + 1] * self.action_counts[k + 1]
        self._strides = tuple(strides)
        self._index = {s: i for i, s in enumerate(self.states)}
        if len(self._index) != n_states:
            raise ValueError("duplicate states")
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.rewards.shape != (n_states, n_joint):
            raise ValueError(f"rewards must have shape ({n_states}, {n_joint})")
        if len(self.transitions) != n_states:
            raise ValueError("transitions must have one row list per state")
        for s in range(n_states):
            if len(self.transitions[s]) != n_joint:
                raise ValueError(f"state {s}: expected {n_joint} transition rows")
            for ja in range(n_joint):
                row = self.transitions[s][ja]
                total = 0.0
                for nxt, p in row:
                    if not 0 <= nxt < n_states:
                        raise ValueError(f"state {s} ja {ja}: bad successor {nxt}")
                    if p < 0:
                        raise ValueError(f"state {s} ja {ja}: negative probability")
                    total += p
                if abs(total - 1.0) > _ROW_TOL:
                    raise ValueError(
                        f"state {s} ja {ja}: probabilities sum to {total!r}, not 1"
                    )

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_agents(self) -> int:
        return len(self.action_counts)

    @property
    def n_joint_actions(self) -> int:
        return self._strides[0] * self.action_counts[0]

    def joint_index(self, actions) -> int:
        ja = 0
        for a, stride in zip(actions, self._strides):
            ja += a * stride
        return ja

    def joint_actions(self, index: int) -> tuple[int, ...]:
        out = []
        for count, stride in zip(self.action_counts, self._strides):
            out.append((index // stride) % count)
        return tuple(out)

    def state_index(self, state) -> int:
        return self._index[state]


@dataclass(frozen=True)
class TabularJointPolicy:
    """actions[agent, t, state] = that agent's action index."""

    actions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))
        if self.actions.ndim != 3:
            raise ValueError("actions must be (n_agents, horizon, n_states)")

    def action(self, agent: int, t: int, state: int) -> int:
        return int(self.actions[agent, t, state])

    def with_component(self, agent: int, component: np.ndarray) -> "TabularJointPolicy":
        new = self.actions.copy()
        new[agent] = component
        return TabularJointPolicy(new)

    def __eq__(self, other):
        return isinstance(other, TabularJointPolicy) and np.array_equal(
            self.actions, other.actions
        )

    def __hash__(self):  # frozen dataclass wants it; arrays are not hashable
        return hash(self.actions.tobytes())


def evaluate_joint(mmdp: EnumerableMmdp, policy: TabularJointPolicy) -> np.ndarray:
    """Values V[t, s] of following the joint policy from (s, t); V[H] = 0."""
    H = mmdp.horizon
    S = mmdp.n_states
    V = np.zeros((H + 1, S))
    gamma = mmdp.discount
    rewards = mmdp.rewards
    transitions = mmdp.transitions
    acts = policy.actions
    for t in range(H - 1, -1, -1):
        nxt = V[t + 1]
        for s in range(S):
            ja = mmdp.joint_index(acts[:, t, s])
            v = rewards[s, ja]
            for sp, p in transitions[s][ja]:
                v += gamma * p * nxt[sp]
            V[t, s] = v
    return V


def exact_q_values(mmdp: EnumerableMmdp, policy: TabularJointPolicy, agent: int) -> np.ndarray:
    """Q[t, s, a] for `agent` when the others follow `policy`.

    The other agents' actions are read from the joint policy (the agent's own
    component is ignored) and the agent plays optimally from t+1 onward, so
    max_a Q[t, s, a] is the agent's best-response value at (s, t).
    """
    H = mmdp.horizon
    S = mmdp.n_states
    A = mmdp.action_counts[agent]
    stride = mmdp._strides[agent]
    gamma = mmdp.discount
    rewards = mmdp.rewards
    transitions = mmdp.transitions
    acts = policy.actions
    n_agents = mmdp.n_agents
    Q = np.zeros((H, S, A))
    V = np.zeros(S)
    for t in range(H - 1, -1, -1):
        V_next = V
        V = np.zeros(S)
        for s in range(S):
            base = 0
            for k in range(n_agents):
                if k != agent:
                    base += int(acts[k, t, s]) * mmdp._strides[k]
            best = -math.inf
            for a in range(A):
                ja = base + a * stride
                q = rewards[s, ja]
                for sp, p in transitions[s][ja]:
                    q += gamma * p * V_next[sp]
                Q[t, s, a] = q
                if q > best:
                    best = q
            V[s] = best
    return Q


def exact_best_response(mmdp: EnumerableMmdp, policy: TabularJointPolicy, agent: int) -> TabularJointPolicy:
    """Replace one agent's component with its exact best response.

    Ties pick the lowest action index, so the result is deterministic.
    """
    Q = exact_q_values(mmdp, policy, agent)
    component = np.argmax(Q, axis=2)  # (H, S); argmax takes the first maximum
    return policy.with_component(agent, component)


def is_nash(mmdp: EnumerableMmdp, policy: TabularJointPolicy, tol: float = 1e-9):
    """Check value-stability under unilateral best responses.

    Returns (True, None) when no agent can improve the value at any (state,
    time); otherwise (False, (agent, t, state_index, improving_action)).
    """
    V = evaluate_joint(mmdp, policy)
    for agent in range(mmdp.n_agents):
        Q = exact_q_values(mmdp, policy, agent)
        best = Q.max(axis=2)
        gaps = best - V[:-1]
        worst = int(np.argmax(gaps))
        t, s = divmod(worst, mmdp.n_states)
        if gaps[t, s] > tol:
            return False, (agent, t, s, int(np.argmax(Q[t, s])))
    return True, None


def joint_response_sweep(
    mmdp: EnumerableMmdp,
    policy: TabularJointPolicy,
    order: tuple[int, ...] | None = None,
    tol: float = 1e-12,
):
    """Apply best responses agent-by-agent until a full sweep leaves all
    state values unchanged. Returns (fixed_point_policy, sweep_count).

    order is a permutation of the agents (identity by default). Values are
    non-decreasing at every application, so termination is guaranteed for
    finite instances; MAX_SWEEPS is a diagnostic guard.
    """
    n = mmdp.n_agents
    if order is None:
        order = tuple(range(n))
    if sorted(order) != list(range(n)):
        raise ValueError(f"order must be a permutation of 0..{n - 1}")
    V = evaluate_joint(mmdp, policy)
    for sweep in range(1, MAX_SWEEPS + 1):
        for agent in order:
            policy = exact_best_response(mmdp, policy, agent)
        V_new = evaluate_joint(mmdp, policy)
        if np.max(np.abs(V_new - V)) <= tol:
            return policy, sweep
        V = V_new
    raise SweepDivergenceError(f"no fixed point after {MAX_SWEEPS} sweeps")


def solve_joint_optimal(mmdp: EnumerableMmdp):
    """Centralized optimum by backward induction over joint actions.

    Returns (TabularJointPolicy, V) with V of shape (H+1, n_states).
    """
    H = mmdp.horizon
    S = mmdp.n_states
    gamma = mmdp.discount
    V = np.zeros((H + 1, S))
    joint = np.zeros((H, S), dtype=np.int64)
    for t in range(H - 1, -1, -1):
        nxt = V[t + 1]
        for s in range(S):
            best = -math.inf
            best_ja = 0
            for ja in range(mmdp.n_joint_actions):
                q = mmdp.rewards[s, ja]
                for sp, p in mmdp.transitions[s][ja]:
                    q += gamma * p * nxt[sp]
                if q > best:
                    best = q
                    best_ja = ja
            V[t, s] = best
            joint[t, s] = best_ja
    actions = np.zeros((mmdp.n_agents, H, S), dtype=np.int64)
    for t in range(H):
        for s in range(S):
            for k, a in enumerate(mmdp.joint_actions(int(joint[t, s]))):
                actions[k, t, s] = a
    return TabularJointPolicy(actions), V


def random_mmdp(
    seed: int,
    n_states: int = 5,
    action_counts: tuple[int, ...] = (2, 2),
    horizon: int = 3,
    discount: float = 1.0,
) -> EnumerableMmdp:
    """Dense random instance: flat-Dirichlet transition rows, U[0,1] rewards."""
    rng = np.random.default_rng(seed)
    n_joint = 1
    for a in action_counts:
        n_joint *= a
    transitions = []
    for _ in range(n_states):
        rows = []
        for _ in range(n_joint):
            probs = rng.dirichlet(np.ones(n_states))
            probs = probs / probs.sum()  # exact renormalization for row checks
            rows.append(list(enumerate(probs.tolist())))
        transitions.append(rows)
    rewards = rng.random((n_states, n_joint))
    return EnumerableMmdp(
        states=list(range(n_states)),
        action_counts=tuple(action_counts),
        transitions=transitions,
        rewards=rewards,
        horizon=horizon,
        discount=discount,
    )


def random_policy(mmdp: EnumerableMmdp, seed: int) -> TabularJointPolicy:
    rng = np.random.default_rng(seed)
    actions = np.stack(
        [
            rng.integers(0, count, size=(mmdp.horizon, mmdp.n_states))
            for count in mmdp.action_counts
        ]
    )
    return TabularJointPolicy(actions)


# ---------------------------------------------------------------------------
# Grid domain compiler

_COMPILER_LIMITS = dict(max_cells=9, max_agents=2, max_count=1)


def mmdp_from_domain(spec: DomainSpec) -> EnumerableMmdp:
    """Enumerate a small fixed-task grid domain into an explicit MDP.

    Supported: grids up to 9 cells, at most 2 robots, task counts at most 1
    per cell, and no spawning (task sets only shrink, so states are position
    tuples crossed with subsets of the initial task cells). Enumerable states
    are (positions, tasks) pairs; time lives in the solver, not the state.
    """
    if spec.spawn_events:
        raise CapacityError("spawning domains cannot be enumerated")
    if spec.n_cells > _COMPILER_LIMITS["max_cells"]:
        raise CapacityError(f"{spec.n_cells} cells exceed {_COMPILER_LIMITS['max_cells']}")
    if spec.n_agents > _COMPILER_LIMITS["max_agents"]:
        raise CapacityError(f"{spec.n_agents} robots exceed {_COMPILER_LIMITS['max_agents']}")
    start = initial_state(spec)
    if any(c > _COMPILER_LIMITS["max_count"] for c in start.tasks):
        raise CapacityError("task counts above 1 per cell cannot be enumerated")

    cells = [(r, c) for r in range(spec.height) for c in range(spec.width)]
    task_cells = [i for i, count in enumerate(start.tasks) if count]
    n_cells = spec.n_cells

    states = []
    for positions in itertools.product(cells, repeat=spec.n_agents):
        for mask in range(1 << len(task_cells)):
            tasks = [0] * n_cells
            for bit, cell_index in enumerate(task_cells):
                if mask >> bit & 1:
                    tasks[cell_index] = 1
            states.append((positions, tuple(tasks)))
    index = {s: i for i, s in enumerate(states)}

    n = spec.n_agents
    n_joint = N_ACTIONS**n
    if len(states) * n_joint > MAX_TABLE_ENTRIES:
        raise CapacityError("enumerated instance exceeds the table entry cap")

    transitions = []
    rewards = np.zeros((len(states), n_joint))
    action_lists = list(itertools.product(range(N_ACTIONS), repeat=n))
    for s, (positions, tasks) in enumerate(states):
        rows = []
        for ja, actions in enumerate(action_lists):
            probs = []
            for k in range(n):
                p = spec.act_success if actions[k] == ACT else spec.move_success
                probs.append(p)
            outcome_probs: dict[int, float] = {}
            expected_reward = 0.0
            for successes in itertools.product((True, False), repeat=n):
                p = 1.0
                for k in range(n):
                    p *= probs[k] if successes[k] else 1.0 - probs[k]
                if p == 0.0:
                    continue
                new_tasks, new_pos, reward, _ = resolve_actions(
                    tasks, positions, actions, successes, spec
                )
                sp = index[(new_pos, new_tasks)]
                outcome_probs[sp] = outcome_probs.get(sp, 0.0) + p
                expected_reward += p * reward
            rows.append(sorted(outcome_probs.items()))
            rewards[s, ja] = expected_reward
        transitions.append(rows)

    mmdp = EnumerableMmdp(
        states=states,
        action_counts=(N_ACTIONS,) * n,
        transitions=transitions,
        rewards=rewards,
        horizon=spec.horizon,
        discount=spec.discount,
    )
    return mmdp


def grid_state_index(mmdp: EnumerableMmdp, state: GridState) -> int:
    """Index of a GridState inside a compiled domain (time stripped)."""
    return mmdp.state_index((state.positions, state.tasks))


def tabular_from_handles(mmdp: EnumerableMmdp, spec: DomainSpec, handles) -> TabularJointPolicy:
    """Tabulate deterministic PolicyHandles over a compiled grid domain."""
    H = mmdp.horizon
    S = mmdp.n_states
    actions = np.zeros((len(handles), H, S), dtype=np.int64)
    for s, (positions, tasks) in enumerate(mmdp.states):
        for t in range(H):
            gs = GridState(tasks, positions, t)
            for k, handle in enumerate(handles):
                actions[k, t, s] = handle.act(gs, None)
    return TabularJointPolicy(actions)

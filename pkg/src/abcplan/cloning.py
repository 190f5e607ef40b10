"""Behavioral cloning of logged agent behavior.

Trajectories become supervised (state, action) datasets per agent; a policy
network trained on one imitates that agent and can stand in for it inside a
teammate-aware planner.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PolicyHandle, Trajectory, derive_seed
from .factory_floor import DomainSpec, GridState, encode_state
from .network import (
    NetworkArch,
    PolicyModel,
    forward_batch,
    init_adam,
    init_weights,
    policy_logits,
    training_step,
)


@dataclass(frozen=True)
class TrainingHyperparams:
    """Supervised training settings for one cloning run."""

    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 1e-3
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class CloningDataset:
    """Flattened (encoded state, chosen action) records for one agent."""

    agent: int
    generation: int
    inputs: np.ndarray
    labels: np.ndarray
    episodes: np.ndarray
    steps: np.ndarray
    source_episode_count: int

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def arch_for_domain(spec: DomainSpec) -> NetworkArch:
    """Network shape matching the domain's encoded-state tensor."""
    return NetworkArch(
        in_channels=spec.n_agents + 2, height=spec.height, width=spec.width
    )


def build_dataset(
    trajectories,
    agent: int,
    spec: DomainSpec,
    generation: int = 0,
) -> CloningDataset:
    """Extract one agent's decisions from episodes.

    Every step contributes one record: the state the agent observed before
    acting (encoded as the network input tensor) and the action it took.
    """
    trajectories = list(trajectories)
    if not (0 <= agent < spec.n_agents):
        raise ValueError(f"agent {agent} out of range for {spec.n_agents} agents")
    inputs = []
    labels = []
    episodes = []
    steps = []
    for e, traj in enumerate(trajectories):
        for t, step in enumerate(traj.steps):
            inputs.append(encode_state(step.state, spec))
            labels.append(step.actions[agent])
            episodes.append(e)
            steps.append(t)
    if not inputs:
        raise ValueError("no steps in the provided trajectories")
    return CloningDataset(
        agent=agent,
        generation=generation,
        inputs=np.stack(inputs),
        labels=np.asarray(labels, dtype=np.int64),
        episodes=np.asarray(episodes, dtype=np.int64),
        steps=np.asarray(steps, dtype=np.int64),
        source_episode_count=len(trajectories),
    )


def train_model(
    dataset: CloningDataset,
    arch: NetworkArch,
    init_seed: int,
    hyper: TrainingHyperparams,
) -> PolicyModel:
    """Fit a fresh network to the dataset by mini-batch cross entropy.

    Weights start from init_seed; each epoch visits every record once in an
    order drawn deterministically from the hyperparameter shuffle seed, so
    identical inputs always yield identical weights. epochs=0 returns the
    untouched initialization.
    """
    model = init_weights(arch, init_seed)
    if hyper.epochs == 0:
        return model
    opt = init_adam(model, learning_rate=hyper.learning_rate)
    n = len(dataset)
    inputs = dataset.inputs
    labels = dataset.labels
    for epoch in range(hyper.epochs):
        order = np.random.default_rng(
            derive_seed(hyper.shuffle_seed, "epoch", epoch)
        ).permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            model, opt, _ = training_step(model, opt, (inputs[idx], labels[idx]))
    return model


def accuracy(model: PolicyModel, dataset: CloningDataset, chunk: int = 1024) -> float:
    """Fraction of records where the network's top action matches the label."""
    n = len(dataset)
    hits = 0
    for start in range(0, n, chunk):
        probs = forward_batch(model, dataset.inputs[start : start + chunk])
        hits += int(
            (probs.argmax(axis=1) == dataset.labels[start : start + chunk]).sum()
        )
    return hits / n


def cloned_policy_action(model: PolicyModel, state: GridState, spec: DomainSpec) -> int:
    """Deterministic action: highest network score, ties to the lowest index."""
    arch = model.arch
    expected = (spec.n_agents + 2, spec.height, spec.width)
    got = (arch.in_channels, arch.height, arch.width)
    if got != expected:
        raise ValueError(f"model expects input shape {got}, domain encodes to {expected}")
    return int(np.argmax(policy_logits(model, encode_state(state, spec))))


class ClonedPolicy(PolicyHandle):
    """Policy handle that replays a trained network's argmax action.

    Deterministic, so repeated states hit a memo table instead of the
    network; the table is dropped on pickling.
    """

    kind = "cloned-model"

    def __init__(self, model: PolicyModel, spec: DomainSpec):
        self.model = model
        self.spec = spec
        self._cache: dict[GridState, int] = {}

    def act(self, state: GridState, rng) -> int:
        cached = self._cache.get(state)
        if cached is not None:
            return cached
        action = cloned_policy_action(self.model, state, self.spec)
        self._cache[state] = action
        return action

    def __getstate__(self):
        return {"model": self.model, "spec": self.spec}

    def __setstate__(self, state):
        self.model = state["model"]
        self.spec = state["spec"]
        self._cache = {}

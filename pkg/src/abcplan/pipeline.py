"""Generation loop: simulate, clone everyone, upgrade one agent at a time.

Each generation plays a batch of episodes with the current per-agent
planners, fits a policy network to every agent's logged behavior, and then
swaps the freshly trained models into exactly one agent's planner (teammate
models plus its own rollout model). The batch doubles as that generation's
evaluation sample. Alternating single-agent updates are what make the
improvement argument go through, and the tests hold the pipeline to it.
"""
from __future__ import annotations

import dataclasses
import os
import tempfile
from dataclasses import dataclass

from .cloning import (
    ClonedPolicy,
    TrainingHyperparams,
    arch_for_domain,
    build_dataset,
    train_model,
)
from .core import (
    PolicyHandle,
    ReturnSummary,
    collect_trajectories,
    derive_seed,
    summarize_returns,
)
from .factory_floor import DomainSpec, FactoryFloorEnv
from .heuristic import HeuristicPolicy
from .mcts import MctsParams, MctsPolicy
from .network import save_model


@dataclass(frozen=True)
class AgentPolicyConfig:
    """One agent's planning setup: models of the others, a rollout policy,
    and search parameters."""

    teammate_models: dict[int, PolicyHandle]
    rollout_model: PolicyHandle
    params: MctsParams


@dataclass(frozen=True)
class PolicyRegistry:
    """The joint policy at one generation: an AgentPolicyConfig per agent."""

    entries: tuple[AgentPolicyConfig, ...]
    generation: int

    @property
    def n_agents(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class GenerationRecord:
    """Evaluation summary and artifact paths for one generation."""

    generation: int
    updated_agent: int | None
    summary: ReturnSummary
    model_paths: tuple[str, ...] = ()
    dataset_paths: tuple[str, ...] = ()


def next_update_agent(g: int, n: int) -> int:
    """Which agent (1-based) swaps in new models at generation g.

    Round-robin: over any n consecutive generations every agent is chosen
    exactly once.
    """
    if g < 1:
        raise ValueError(f"generation index must be >= 1, got {g}")
    if n < 1:
        raise ValueError(f"agent count must be >= 1, got {n}")
    return (g % n) + 1


def initial_registry(spec: DomainSpec, params: MctsParams) -> PolicyRegistry:
    """Generation-0 registry: every planner assumes heuristic teammates and
    uses the heuristic for rollouts."""
    if params.horizon != spec.horizon:
        raise ValueError(
            f"search horizon {params.horizon} != domain horizon {spec.horizon}"
        )
    n = spec.n_agents
    heuristics = [HeuristicPolicy(spec, k) for k in range(n)]
    entries = tuple(
        AgentPolicyConfig(
            teammate_models={k: heuristics[k] for k in range(n) if k != i},
            rollout_model=heuristics[i],
            params=params,
        )
        for i in range(n)
    )
    return PolicyRegistry(entries=entries, generation=0)


def registry_policies(registry: PolicyRegistry, env: FactoryFloorEnv) -> list[MctsPolicy]:
    """Materialize one search-based policy per agent from registry entries."""
    n = registry.n_agents
    policies = []
    for i, entry in enumerate(registry.entries):
        models = [None if k == i else entry.teammate_models[k] for k in range(n)]
        policies.append(MctsPolicy(env, i, models, entry.rollout_model, entry.params))
    return policies


def _write_text(path: str, text: str) -> None:
    """Write atomically: a reader never sees a partial file."""
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def _write_episode_files(
    gen_dir: str, generation: int, trajectories, phase_seed: int
) -> None:
    rows = ["generation,episode,step,agent,action,reward,seed"]
    totals = ["generation,episode,seed,total_return"]
    for e, traj in enumerate(trajectories):
        seed = phase_seed + e
        for t, step in enumerate(traj.steps):
            for k, action in enumerate(step.actions):
                rows.append(
                    f"{generation},{e},{t},{k + 1},{action},{_fmt(step.reward)},{seed}"
                )
        totals.append(f"{generation},{e},{seed},{_fmt(traj.total_return)}")
    _write_text(os.path.join(gen_dir, "episodes.csv"), "\n".join(rows) + "\n")
    _write_text(os.path.join(gen_dir, "episode_totals.csv"), "\n".join(totals) + "\n")


def _write_dataset_csv(path: str, dataset, spec: DomainSpec) -> None:
    n_values = (spec.n_agents + 2) * spec.height * spec.width
    header = "generation,agent,episode,step,action," + ",".join(
        f"v{j}" for j in range(n_values)
    )
    rows = [header]
    flat_inputs = dataset.inputs.reshape(len(dataset), -1)
    for r in range(len(dataset)):
        values = ",".join(repr(float(v)) for v in flat_inputs[r])
        rows.append(
            f"{dataset.generation},{dataset.agent + 1},{dataset.episodes[r]},"
            f"{dataset.steps[r]},{dataset.labels[r]},{values}"
        )
    _write_text(path, "\n".join(rows) + "\n")


def _collect_phase(registry, env, spec, n_episodes, seed, out_dir, n_jobs):
    """Play one generation's episode batch and log it. Returns
    (trajectories, summary, phase_seed)."""
    phase = registry.generation
    phase_seed = derive_seed(seed, "phase", phase)
    policies = registry_policies(registry, env)
    trajectories = collect_trajectories(
        env, policies, n_episodes, phase_seed, n_jobs=n_jobs
    )
    summary = summarize_returns([t.total_return for t in trajectories])
    if out_dir is not None:
        gen_dir = os.path.join(out_dir, f"gen{phase}")
        os.makedirs(gen_dir, exist_ok=True)
        _write_episode_files(gen_dir, phase, trajectories, phase_seed)
    return trajectories, summary, phase_seed


def _record_for(phase: int, n: int, summary, model_paths=(), dataset_paths=()):
    updated = next_update_agent(phase, n) if phase >= 1 else None
    return GenerationRecord(
        generation=phase,
        updated_agent=updated,
        summary=summary,
        model_paths=tuple(model_paths),
        dataset_paths=tuple(dataset_paths),
    )


def _run_phase(registry, g, spec, env, n_episodes, hyper, seed, out_dir, earlier, n_jobs):
    """One full generation step. Returns (new_registry, record, trajectories).

    The record describes generation g-1: the episodes its registry played
    and the models trained from them.
    """
    if g != registry.generation + 1:
        raise ValueError(
            f"registry is at generation {registry.generation}, cannot run step {g}"
        )
    n = registry.n_agents
    phase = g - 1
    trajectories, summary, _ = _collect_phase(
        registry, env, spec, n_episodes, seed, out_dir, n_jobs
    )
    training_set = list(earlier) + list(trajectories) if earlier else trajectories

    arch = arch_for_domain(spec)
    gen_dir = os.path.join(out_dir, f"gen{phase}") if out_dir is not None else None
    models = []
    model_paths = []
    dataset_paths = []
    for i in range(n):
        dataset = build_dataset(training_set, i, spec, generation=phase)
        hp = dataclasses.replace(
            hyper, shuffle_seed=derive_seed(seed, "train", phase, i, "shuffle")
        )
        model = train_model(
            dataset, arch, derive_seed(seed, "train", phase, i, "init"), hp
        )
        model = dataclasses.replace(model, generation=phase, agent_id=i + 1)
        models.append(model)
        if gen_dir is not None:
            dpath = os.path.join(gen_dir, f"dataset_agent{i + 1}.csv")
            _write_dataset_csv(dpath, dataset, spec)
            dataset_paths.append(dpath)
            mpath = os.path.join(gen_dir, f"model_agent{i + 1}.abcnn")
            save_model(model, mpath)
            model_paths.append(mpath)

    j = next_update_agent(g, n)
    upd = j - 1
    new_entry = AgentPolicyConfig(
        teammate_models={
            k: ClonedPolicy(models[k], spec) for k in range(n) if k != upd
        },
        rollout_model=ClonedPolicy(models[upd], spec),
        params=registry.entries[upd].params,
    )
    entries = list(registry.entries)
    entries[upd] = new_entry
    new_registry = PolicyRegistry(entries=tuple(entries), generation=g)
    record = _record_for(phase, n, summary, model_paths, dataset_paths)
    return new_registry, record, trajectories


def run_generation(
    registry: PolicyRegistry,
    g: int,
    spec: DomainSpec,
    n_episodes: int,
    hyper: TrainingHyperparams,
    seed: int,
    *,
    out_dir: str | None = None,
    n_jobs: int = 1,
) -> tuple[PolicyRegistry, GenerationRecord]:
    """Advance the registry from generation g-1 to g.

    Plays n_episodes with the incoming registry, trains a model of every
    agent from those episodes, and swaps the new models into the single
    agent chosen by next_update_agent(g, n); everyone else keeps what they
    had. Per-phase and per-training random streams are derived from the run
    seed, so the hyperparameter shuffle seed is superseded here.
    """
    env = FactoryFloorEnv(spec)
    new_registry, record, _ = _run_phase(
        registry, g, spec, env, n_episodes, hyper, seed, out_dir, None, n_jobs
    )
    return new_registry, record


def iterate_pipeline(
    spec: DomainSpec,
    n_generations: int,
    n_episodes: int,
    params: MctsParams,
    hyper: TrainingHyperparams,
    seed: int,
    *,
    out_dir: str | None = None,
    n_jobs: int = 1,
    train_on_history: bool = False,
):
    """Yield (registry, record) per generation, oldest first.

    The registry in each pair is the one that played that record's
    episodes. The last pair is an evaluation-only pass over the final
    registry (nothing is trained from it), so n_generations + 1 pairs come
    out in total.
    """
    if n_generations < 0:
        raise ValueError("n_generations must be >= 0")
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = FactoryFloorEnv(spec)
    registry = initial_registry(spec, params)
    history: list = []
    for g in range(1, n_generations + 1):
        earlier = history if train_on_history and history else None
        new_registry, record, trajectories = _run_phase(
            registry, g, spec, env, n_episodes, hyper, seed, out_dir, earlier, n_jobs
        )
        yield registry, record
        if train_on_history:
            history.extend(trajectories)
        registry = new_registry
    _, summary, _ = _collect_phase(
        registry, env, spec, n_episodes, seed, out_dir, n_jobs
    )
    yield registry, _record_for(n_generations, registry.n_agents, summary)


def run_pipeline(
    spec: DomainSpec,
    n_generations: int,
    n_episodes: int,
    params: MctsParams,
    hyper: TrainingHyperparams,
    seed: int,
    *,
    out_dir: str | None = None,
    n_jobs: int = 1,
    train_on_history: bool = False,
) -> list[GenerationRecord]:
    """Run the whole improvement loop and return one record per generation.

    Record 0 is the baseline (planners with heuristic teammate models);
    records 1..n_generations each follow one more single-agent model swap.
    """
    return [
        record
        for _, record in iterate_pipeline(
            spec,
            n_generations,
            n_episodes,
            params,
            hyper,
            seed,
            out_dir=out_dir,
            n_jobs=n_jobs,
            train_on_history=train_on_history,
        )
    ]

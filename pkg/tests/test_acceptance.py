"""End-to-end acceptance gates.

One test per shipped claim. Each prints a single verdict line so the full
checklist can be read off a plain pytest run. The two experiment-scale tests
replay the fast preset through the real command line and take minutes; the
rest are seconds-scale.
"""
import csv
import glob
import os
import random
import time
from collections import Counter
from pathlib import Path

import abcplan.cli as cli
from abcplan.checks import (
    check_best_response_improvement,
    check_gradients,
    check_planner_convergence,
    check_sweep_convergence,
)
from abcplan.cloning import (
    TrainingHyperparams,
    accuracy,
    arch_for_domain,
    build_dataset,
    train_model,
)
from abcplan.core import collect_trajectories
from abcplan.factory_floor import DomainSpec, FactoryFloorEnv, load_domain_config
from abcplan.heuristic import HeuristicPolicy
from abcplan.mcts import MctsParams, MctsPlanner, Node, sample_outcome
from abcplan.pipeline import iterate_pipeline, next_update_agent

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# Pinned seeds for the two experiment-scale runs. The claims are about the
# learning trend, not about any particular random stream, but the gates must
# be reproducible, so one seed per experiment is fixed here and the observed
# curve for it is recorded in the README.
TWO_ROBOT_SEED = 42
FOUR_ROBOT_SEED = 7


def verdict(num: int, label: str, ok: bool, detail: str) -> bool:
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:02d}] {label}: {status} - {detail}")
    return ok


def summary_means(out_dir: str) -> dict[int, float]:
    with open(os.path.join(out_dir, "summary.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {int(r["generation"]): float(r["mean"]) for r in rows}


def test_01_two_robot_improvement(tmp_path):
    out = str(tmp_path / "run")
    started = time.perf_counter()
    code = cli.dispatch(
        ["run", "--config", str(CONFIGS / "two_robots.ini"), "--fast",
         "--episodes", "100", "--seed", str(TWO_ROBOT_SEED), "--out", out]
    )
    elapsed = time.perf_counter() - started
    means = summary_means(out)
    gain = means[1] - means[0]
    ok = code == 0 and gain >= 1.5 and means[5] >= 7.0 and elapsed <= 1200
    detail = (
        f"gen0 {means[0]:.3f} -> gen1 {means[1]:.3f} (gain {gain:.3f}, need >= 1.5), "
        f"gen5 {means[5]:.3f} (need >= 7.0), {elapsed:.0f}s (need <= 1200s)"
    )
    assert verdict(1, "two-robot mean return improvement", ok, detail)


def test_02_four_robot_trend(tmp_path):
    out = str(tmp_path / "run")
    started = time.perf_counter()
    code = cli.dispatch(
        ["run", "--config", str(CONFIGS / "four_robots_fixed.ini"), "--fast",
         "--generations", "2", "--seed", str(FOUR_ROBOT_SEED), "--out", out]
    )
    elapsed = time.perf_counter() - started
    means = summary_means(out)
    ok = code == 0 and means[0] < means[1] < means[2]
    detail = (
        f"means {means[0]:.3f} < {means[1]:.3f} < {means[2]:.3f} "
        f"strictly increasing, {elapsed:.0f}s"
    )
    assert verdict(2, "four-robot mean return trend", ok, detail)


def test_03_best_response_never_hurts():
    started = time.perf_counter()
    result = check_best_response_improvement(n_instances=100)
    elapsed = time.perf_counter() - started
    ok = result.passed and elapsed <= 120
    detail = f"{result.detail}, {elapsed:.1f}s (need <= 120s)"
    assert verdict(3, "best response never lowers any state value", ok, detail)


def test_04_sweeps_reach_equilibrium():
    result = check_sweep_convergence(n_instances=100)
    assert verdict(4, "best-response sweeps reach an equilibrium", result.passed,
                   result.detail)


def test_05_planner_converges_to_exact_values():
    result = check_planner_convergence(n_runs=100, iterations=50_000, tolerance=0.05)
    assert verdict(5, "sampled root values match exact values", result.passed,
                   result.detail)


def test_06_gradients_match_finite_differences():
    result = check_gradients(n_pairs=20, tolerance=1e-4)
    assert verdict(6, "analytic gradients match finite differences", result.passed,
                   result.detail)


def test_07_cloning_fidelity():
    spec = load_domain_config(str(CONFIGS / "two_robots.ini"))
    env = FactoryFloorEnv(spec)
    policies = [HeuristicPolicy(spec, i) for i in range(spec.n_agents)]
    trajectories = collect_trajectories(env, policies, 320, seed=101)
    dataset = build_dataset(trajectories, 0, spec)
    started = time.perf_counter()
    model = train_model(
        dataset, arch_for_domain(spec), 55, TrainingHyperparams(epochs=30)
    )
    score = accuracy(model, dataset)
    elapsed = time.perf_counter() - started
    ok = len(dataset) == 3200 and score >= 0.95 and elapsed <= 60
    detail = (
        f"{len(dataset)} records (need 3200), accuracy {score:.4f} (need >= 0.95), "
        f"train {elapsed:.1f}s (need <= 60s)"
    )
    assert verdict(7, "behavioral cloning reproduces the heuristic", ok, detail)


def _walk(node):
    yield node
    if node.children:
        for per_action in node.children:
            if per_action:
                for child in per_action.values():
                    yield from _walk(child)


def test_08_sparse_outcome_cap():
    # A real search on a spawning domain: the branching under every action
    # stays at or below the cap even though the true outcome space is huge.
    spec = load_domain_config(str(CONFIGS / "four_robots_dyn2.ini"))
    env = FactoryFloorEnv(spec)
    teammates = [None] + [HeuristicPolicy(spec, i) for i in range(1, spec.n_agents)]
    params = MctsParams(
        exploration=1.0, iterations=4000, horizon=spec.horizon, sparse_limit=20
    )
    planner = MctsPlanner(env, 0, teammates, HeuristicPolicy(spec, 0), params)
    root = planner.search(env.initial_state(), random.Random(99))
    widths = [
        len(per_action)
        for node in _walk(root)
        if node.children
        for per_action in node.children
        if per_action
    ]
    cap_ok = max(widths) <= 20 and 20 in widths

    # Scripted node at the cap: 10,000 redraws follow the recorded counts.
    node = Node("root", 5)
    feed = [("A", 1.0)] * 5 + [(f"B{i}", 0.0) for i in range(19)]
    it = iter(feed)
    rng = random.Random(4242)
    for _ in range(len(feed)):
        sample_outcome(node, 2, lambda: next(it), 20, rng)

    def dead_simulator():
        raise AssertionError("simulator invoked at the cap")

    draws = Counter()
    for _ in range(10_000):
        child, _, created = sample_outcome(node, 2, dead_simulator, 20, rng)
        assert not created
        draws[id(child)] += 1
    total = sum(node.counts[2].values())
    worst = 0.0
    for key, count in node.counts[2].items():
        expected = count / total
        observed = draws[id(node.children[2][key])] / 10_000
        worst = max(worst, abs(observed - expected))
    freq_ok = worst <= 0.02
    detail = (
        f"search max branching {max(widths)} (cap 20, reached), "
        f"redraw frequency error {worst:.4f} (need <= 0.02)"
    )
    assert verdict(8, "sparse outcome cap and redraw frequencies", cap_ok and freq_ok,
                   detail)


def test_09_byte_identical_reruns(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        code = cli.dispatch(
            ["run", "--config", str(CONFIGS / "two_robots.ini"), "--out", out,
             "--generations", "1", "--episodes", "4", "--uct-iters", "200",
             "--epochs", "2", "--seed", "13"]
        )
        assert code == 0
        outs.append(out)
    a, b = outs
    models = sorted(
        os.path.relpath(p, a) for p in glob.glob(os.path.join(a, "gen*", "*.abcnn"))
    )
    mismatched = []
    for name in ["summary.csv"] + models:
        with open(os.path.join(a, name), "rb") as fh:
            left = fh.read()
        with open(os.path.join(b, name), "rb") as fh:
            right = fh.read()
        if left != right:
            mismatched.append(name)
    ok = bool(models) and not mismatched
    detail = (
        f"summary.csv and {len(models)} model files byte-identical across reruns"
        if ok else f"mismatched files: {mismatched or 'no model files found'}"
    )
    assert verdict(9, "identical seed and config reproduce bit-exact outputs", ok,
                   detail)


def test_10_single_update_discipline():
    spec = DomainSpec(
        width=4, height=3, horizon=4, move_success=0.9, act_success=1.0,
        robot_ids=(1, 2, 3), robot_starts=((0, 0), (2, 3), (1, 1)),
        fixed_tasks=((1, 2, 2), (2, 1, 1), (0, 3, 1)),
        spawn_cells=(), spawn_probability=0.0, spawn_events=0,
    )
    params = MctsParams(exploration=0.5, iterations=25, horizon=spec.horizon)
    hyper = TrainingHyperparams(batch_size=16, epochs=1)
    registries = [
        registry
        for registry, _ in iterate_pipeline(spec, 3, 2, params, hyper, seed=5)
    ]
    swaps = []
    ok = True
    for g in range(1, len(registries)):
        prev, cur = registries[g - 1], registries[g]
        changed = [
            i for i in range(spec.n_agents)
            if cur.entries[i] is not prev.entries[i]
        ]
        swaps.append(changed)
        if changed != [next_update_agent(g, spec.n_agents) - 1]:
            ok = False
    detail = (
        f"{len(registries) - 1} generation steps, per-step changed agents "
        f"{[[i + 1 for i in c] for c in swaps]}"
    )
    assert verdict(10, "exactly one agent updates per generation", ok, detail)

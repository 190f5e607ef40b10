"""Command-line harness: run experiments, verify claims, summarize results.

Three subcommands share one executable:

  abc run        -- full generation loop on a domain config, results to CSV
  abc oracle     -- exact-solver and numerics verification suites
  abc summarize  -- recompute summary tables from stored episode totals

Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure
(including failed verification suites). Data goes to files, progress and
diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import dataclass

from .checks import SUITES, run_suites
from .cloning import TrainingHyperparams
from .core import ConfigurationError, summarize_returns
from .factory_floor import DomainSpec, load_domain_config
from .mcts import MctsParams
from .pipeline import GenerationRecord, iterate_pipeline, next_update_agent

_RUN_DEFAULTS = {
    "generations": 5,
    "episodes": 320,
    "uct_iters": 20_000,
    "exploration": 0.5,
    "sparse_limit": 20,
    "diy_bonus": 0.7,
    "seed": 0,
    "threads": 0,  # 0 = use available parallelism
    "epochs": 30,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "train_on_history": False,
}
_FAST_PRESET = {"uct_iters": 2000, "episodes": 50}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one `abc run` invocation."""

    config_path: str
    generations: int
    episodes: int
    uct_iters: int
    exploration: float
    sparse_limit: int
    diy_bonus: float
    seed: int
    out_dir: str
    threads: int
    epochs: int
    batch_size: int
    learning_rate: float
    train_on_history: bool

    def __post_init__(self):
        for name, lowest in (
            ("generations", 0), ("episodes", 1), ("uct_iters", 1),
            ("sparse_limit", 1), ("threads", 0), ("epochs", 0), ("batch_size", 1),
        ):
            if getattr(self, name) < lowest:
                raise ConfigurationError(f"{name} must be >= {lowest}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 on usage errors, per our contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="abc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="<run|oracle|summarize>")

    run = sub.add_parser("run", parents=[], help="execute the generation loop")
    run.add_argument("--config", required=True, help="domain config (.ini)")
    run.add_argument("--generations", type=int, default=None)
    run.add_argument("--episodes", type=int, default=None,
                     help="episodes simulated per generation")
    run.add_argument("--uct-iters", type=int, default=None, dest="uct_iters")
    run.add_argument("--exploration", type=float, default=None,
                     help="UCT exploration constant")
    run.add_argument("--sparse-limit", type=int, default=None, dest="sparse_limit",
                     help="max sampled outcomes per action node")
    run.add_argument("--diy-bonus", type=float, default=None, dest="diy_bonus",
                     help="extra credit for the planner's own completions")
    run.add_argument("--seed", type=int, default=None, help="master seed")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--threads", type=int, default=None,
                     help="episode workers (wall clock only, never results)")
    run.add_argument("--fast", action="store_true",
                     help="desk-scale preset: 2000 UCT iterations, 50 episodes")
    run.add_argument("--epochs", type=int, default=None)
    run.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    run.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    run.add_argument("--train-on-history", action="store_const", const=True,
                     default=None, dest="train_on_history",
                     help="train each generation on all episodes so far")

    oracle = sub.add_parser("oracle", help="run verification suites")
    oracle.add_argument("--suite", default="all",
                        choices=sorted(SUITES) + ["all"])
    oracle.add_argument("--seed", type=int, default=7)

    summarize = sub.add_parser("summarize", help="rebuild summaries from episode totals")
    summarize.add_argument("--run", required=True, dest="run_dir",
                           help="results directory of a previous run")
    return parser


# ---------------------------------------------------------------------------
# run


_RUN_KEY_TYPES = {
    "generations": int,
    "episodes": int,
    "uct_iters": int,
    "exploration": float,
    "sparse_limit": int,
    "diy_bonus": float,
    "seed": int,
    "threads": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "train_on_history": None,  # parsed as a boolean word
}


def _parse_bool(value: str) -> bool:
    word = value.strip().lower()
    if word in ("true", "yes", "1"):
        return True
    if word in ("false", "no", "0"):
        return False
    raise ValueError(value)


def read_run_section(path) -> dict:
    """Typed key/value pairs from a config's [run] section, if any."""
    overrides = {}
    section = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                continue
            if section != "run":
                continue
            key, eq, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not eq or key not in _RUN_KEY_TYPES:
                raise ConfigurationError(
                    f"{path}:{line_no}: unknown [run] entry {line!r}"
                )
            caster = _RUN_KEY_TYPES[key] or _parse_bool
            try:
                overrides[key] = caster(value)
            except ValueError:
                raise ConfigurationError(
                    f"{path}:{line_no}: bad value for {key!r}: {value!r}"
                ) from None
    return overrides


def resolve_run_config(args) -> RunConfig:
    """Merge flags, the --fast preset, the config's [run] section, and
    builtin defaults, in that precedence order."""
    if not os.path.isfile(args.config):
        raise ConfigurationError(f"config not found: {args.config}")
    section = read_run_section(args.config)

    def pick(name):
        explicit = getattr(args, name, None)
        if explicit is not None:
            return explicit
        if args.fast and name in _FAST_PRESET:
            return _FAST_PRESET[name]
        if name in section:
            return section[name]
        return _RUN_DEFAULTS[name]

    values = {name: pick(name) for name in _RUN_DEFAULTS}
    out_dir = args.out
    if out_dir is None:
        stem = os.path.splitext(os.path.basename(args.config))[0]
        run_id = (
            f"{stem}-g{values['generations']}-e{values['episodes']}"
            f"-i{values['uct_iters']}-s{values['seed']}"
        )
        out_dir = os.path.join(os.environ.get("ABC_RESULTS_DIR", "results"), run_id)
    return RunConfig(config_path=args.config, out_dir=out_dir, **values)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_results(records, out_dir) -> None:
    """Emit summary.csv and plot_data.csv; remove partial files on failure."""
    os.makedirs(out_dir, exist_ok=True)
    summary_path = os.path.join(out_dir, "summary.csv")
    plot_path = os.path.join(out_dir, "plot_data.csv")
    try:
        summary_rows = []
        plot_rows = []
        for record in records:
            s = record.summary
            updated = "" if record.updated_agent is None else str(record.updated_agent)
            summary_rows.append(
                [record.generation, updated, s.n_episodes, _fmt(s.mean),
                 _fmt(s.sample_sd), _fmt(s.ci95_low), _fmt(s.ci95_high)]
            )
            plot_rows.append(
                [record.generation, _fmt(s.mean), _fmt(s.ci95_low), _fmt(s.ci95_high)]
            )
        _write_rows(
            summary_path,
            ["generation", "updated_agent", "n_episodes", "mean", "sd",
             "ci95_low", "ci95_high"],
            summary_rows,
        )
        _write_rows(plot_path, ["generation", "mean", "ci95_low", "ci95_high"], plot_rows)
    except OSError as exc:
        for path in (summary_path, plot_path):
            try:
                os.unlink(path)
            except OSError:
                pass
        raise RuntimeError(f"failed writing results to {out_dir}: {exc}") from exc


def write_resolved_config(run: RunConfig, spec: DomainSpec, out_dir) -> None:
    """Echo the full configuration so the run can be repeated bit-exactly."""
    lines = ["[grid]"]
    lines.append(f"width = {spec.width}")
    lines.append(f"height = {spec.height}")
    lines.append(f"horizon = {spec.horizon}")
    lines.append(f"move_success = {_fmt(spec.move_success)}")
    lines.append(f"act_success = {_fmt(spec.act_success)}")
    lines.append("")
    lines.append("[robots]")
    for rid, (r, c) in zip(spec.robot_ids, spec.robot_starts):
        lines.append(f"{rid},{r},{c}")
    lines.append("")
    lines.append("[tasks]")
    for r, c, count in spec.fixed_tasks:
        lines.append(f"{r},{c},{count}")
    lines.append("")
    lines.append("[spawns]")
    lines.append(f"events = {spec.spawn_events}, {_fmt(spec.spawn_probability)}")
    for r, c in spec.spawn_cells:
        lines.append(f"{r},{c}")
    lines.append("")
    lines.append("[run]")
    for key in _RUN_DEFAULTS:
        value = getattr(run, key)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {_fmt(value)}")
    path = os.path.join(out_dir, "config_resolved.ini")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_run(args) -> int:
    run = resolve_run_config(args)
    try:
        spec = load_domain_config(run.config_path)
        params = MctsParams(
            exploration=run.exploration,
            iterations=run.uct_iters,
            horizon=spec.horizon,
            sparse_limit=run.sparse_limit,
            diy_bonus=run.diy_bonus,
        )
        hyper = TrainingHyperparams(
            batch_size=run.batch_size,
            epochs=run.epochs,
            learning_rate=run.learning_rate,
        )
    except ConfigurationError:
        raise
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    threads = run.threads if run.threads > 0 else (os.cpu_count() or 1)
    os.makedirs(run.out_dir, exist_ok=True)
    write_resolved_config(run, spec, run.out_dir)
    print(f"writing results to {run.out_dir}", file=sys.stderr)

    records: list[GenerationRecord] = []
    started = time.perf_counter()
    for _, record in iterate_pipeline(
        spec,
        run.generations,
        run.episodes,
        params,
        hyper,
        run.seed,
        out_dir=run.out_dir,
        n_jobs=threads,
        train_on_history=run.train_on_history,
    ):
        records.append(record)
        s = record.summary
        print(
            f"generation {record.generation}: mean {s.mean:.3f} "
            f"[{s.ci95_low:.3f}, {s.ci95_high:.3f}] over {s.n_episodes} episodes "
            f"({time.perf_counter() - started:.0f}s)",
            file=sys.stderr,
        )
    write_results(records, run.out_dir)
    return 0


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    results = run_suites(names, args.seed)
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{result.name}: {status} - {result.detail}")
    return 0 if all(r.passed for r in results) else 2


# ---------------------------------------------------------------------------
# summarize


def _read_episode_totals(path) -> list[float]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "total_return" not in reader.fieldnames:
            raise ConfigurationError(f"{path}: missing total_return column")
        return [float(row["total_return"]) for row in reader]


def _robot_count(run_dir) -> int | None:
    path = os.path.join(run_dir, "config_resolved.ini")
    if not os.path.isfile(path):
        return None
    try:
        spec = load_domain_config(path)
    except (ValueError, OSError):
        return None
    return spec.n_agents


def cmd_summarize(args) -> int:
    run_dir = args.run_dir
    if not os.path.isdir(run_dir):
        raise ConfigurationError(f"not a results directory: {run_dir}")
    generations = []
    for name in os.listdir(run_dir):
        if name.startswith("gen") and name[3:].isdigit():
            totals = os.path.join(run_dir, name, "episode_totals.csv")
            if os.path.isfile(totals):
                generations.append((int(name[3:]), totals))
    if not generations:
        raise ConfigurationError(f"no generation data under {run_dir}")
    generations.sort()
    n_agents = _robot_count(run_dir)

    records = []
    for generation, totals_path in generations:
        summary = summarize_returns(_read_episode_totals(totals_path))
        if generation == 0 or n_agents is None:
            updated = None
        else:
            updated = next_update_agent(generation, n_agents)
        records.append(GenerationRecord(generation, updated, summary))
    write_results(records, run_dir)
    for record in records:
        s = record.summary
        updated = "-" if record.updated_agent is None else str(record.updated_agent)
        print(
            f"generation {record.generation} (updated agent {updated}): "
            f"mean {s.mean:.3f} sd {s.sample_sd:.3f} "
            f"ci95 [{s.ci95_low:.3f}, {s.ci95_high:.3f}] n={s.n_episodes}"
        )
    return 0


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    handlers = {"run": cmd_run, "oracle": cmd_oracle, "summarize": cmd_summarize}
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"abc {args.command}: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"abc {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Grid task-allocation domain: robots move on a grid and clear task piles.

Cells hold non-negative task counts. Each step every robot simultaneously
attempts one of five actions; moves off the grid are no-ops, a successful ACT
removes one task from the robot's cell, and the shared reward is the number
of tasks removed that step. Optionally a fixed number of spawn events then
each add one task to a random marked cell with a shared probability.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

UP, DOWN, LEFT, RIGHT, ACT = range(5)
N_ACTIONS = 5
ACTION_NAMES = ("UP", "DOWN", "LEFT", "RIGHT", "ACT")

_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


class ParseError(ValueError):
    """Domain config rejected; the message names the offending line."""


class EpisodeOverError(RuntimeError):
    """A step was attempted at or past the horizon."""


class GridState(NamedTuple):
    """Immutable snapshot: task counts (row-major), robot cells, time step."""

    tasks: tuple[int, ...]
    positions: tuple[tuple[int, int], ...]
    t: int


@dataclass(frozen=True)
class DomainSpec:
    """Static description of one domain instance."""

    width: int
    height: int
    horizon: int
    move_success: float
    act_success: float
    robot_ids: tuple[int, ...]
    robot_starts: tuple[tuple[int, int], ...]
    fixed_tasks: tuple[tuple[int, int, int], ...] = ()
    spawn_cells: tuple[tuple[int, int], ...] = ()
    spawn_probability: float = 0.0
    spawn_events: int = 0
    discount: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("move_success", "act_success", "spawn_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if not self.robot_starts:
            raise ValueError("at least one robot is required")
        if len(self.robot_ids) != len(self.robot_starts):
            raise ValueError("robot_ids and robot_starts lengths differ")
        if len(set(self.robot_ids)) != len(self.robot_ids):
            raise ValueError("robot ids must be unique")
        for r, c in self.robot_starts:
            self._check_cell(r, c, "robot start")
        for r, c, cnt in self.fixed_tasks:
            self._check_cell(r, c, "task cell")
            if cnt < 0:
                raise ValueError(f"task count must be >= 0, got {cnt}")
        for r, c in self.spawn_cells:
            self._check_cell(r, c, "spawn cell")
        if self.spawn_events < 0:
            raise ValueError("spawn_events must be >= 0")
        if self.spawn_events > 0 and not self.spawn_cells:
            raise ValueError("spawn_events > 0 requires spawn cells")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must be in [0, 1]")

    def _check_cell(self, r: int, c: int, what: str):
        if not (0 <= r < self.height and 0 <= c < self.width):
            raise ValueError(f"{what} ({r},{c}) outside {self.height}x{self.width} grid")

    @property
    def n_agents(self) -> int:
        return len(self.robot_starts)

    @property
    def n_cells(self) -> int:
        return self.width * self.height


def initial_state(spec: DomainSpec) -> GridState:
    tasks = [0] * spec.n_cells
    for r, c, cnt in spec.fixed_tasks:
        tasks[r * spec.width + c] += cnt
    return GridState(tuple(tasks), tuple(spec.robot_starts), 0)


def resolve_actions(
    tasks: tuple[int, ...],
    positions: tuple[tuple[int, int], ...],
    actions: Sequence[int],
    successes: Sequence[bool],
    spec: DomainSpec,
):
    """Deterministic step resolution for a given per-robot success pattern.

    Robots are processed in index order, which settles ACT contention: when
    several co-located robots ACT on a cell, each removal sees the counts left
    by lower-indexed robots. Returns (tasks, positions, reward, removed).
    """
    w = spec.width
    h = spec.height
    task_list = None
    new_pos = list(positions)
    removed = [0] * len(positions)
    reward = 0
    for k, a in enumerate(actions):
        if not successes[k]:
            continue
        r, c = positions[k]
        if a == ACT:
            i = r * w + c
            cnt = tasks[i] if task_list is None else task_list[i]
            if cnt:
                if task_list is None:
                    task_list = list(tasks)
                task_list[i] = cnt - 1
                removed[k] = 1
                reward += 1
        else:
            dr, dc = _MOVES[a]
            nr = r + dr
            nc = c + dc
            if 0 <= nr < h and 0 <= nc < w:
                new_pos[k] = (nr, nc)
    new_tasks = tasks if task_list is None else tuple(task_list)
    return new_tasks, tuple(new_pos), float(reward), tuple(removed)


def _transition(state: GridState, actions, spec: DomainSpec, rng: random.Random):
    # Fused fast path of resolve_actions with one success draw per robot,
    # in robot index order. Kept in lockstep with resolve_actions by tests.
    w = spec.width
    h = spec.height
    move_p = spec.move_success
    act_p = spec.act_success
    tasks = state.tasks
    positions = state.positions
    task_list = None
    new_pos = list(positions)
    removed = [0] * len(positions)
    reward = 0
    for k, a in enumerate(actions):
        if a == ACT:
            if rng.random() < act_p:
                r, c = positions[k]
                i = r * w + c
                cnt = tasks[i] if task_list is None else task_list[i]
                if cnt:
                    if task_list is None:
                        task_list = list(tasks)
                    task_list[i] = cnt - 1
                    removed[k] = 1
                    reward += 1
        elif rng.random() < move_p:
            r, c = positions[k]
            dr, dc = _MOVES[a]
            nr = r + dr
            nc = c + dc
            if 0 <= nr < h and 0 <= nc < w:
                new_pos[k] = (nr, nc)
    new_tasks = tasks if task_list is None else tuple(task_list)
    return new_tasks, tuple(new_pos), float(reward), tuple(removed)


def _spawn(tasks: tuple[int, ...], spec: DomainSpec, rng: random.Random) -> tuple[int, ...]:
    task_list = None
    cells = spec.spawn_cells
    w = spec.width
    p = spec.spawn_probability
    for _ in range(spec.spawn_events):
        if rng.random() < p:
            r, c = cells[rng.randrange(len(cells))]
            if task_list is None:
                task_list = list(tasks)
            task_list[r * w + c] += 1
    return tasks if task_list is None else tuple(task_list)


def step(state: GridState, joint_action, spec: DomainSpec, rng: random.Random):
    """Apply one joint action. Returns (next_state, reward).

    Spawning is separate (see spawn_tasks); the environment adapter composes
    the two so both stay individually testable.
    """
    if state.t >= spec.horizon:
        raise EpisodeOverError(f"episode over at t={state.t} (horizon {spec.horizon})")
    if len(joint_action) != spec.n_agents:
        raise ValueError(f"joint action length {len(joint_action)} != {spec.n_agents} agents")
    tasks, positions, reward, _ = _transition(state, joint_action, spec, rng)
    return GridState(tasks, positions, state.t + 1), reward


def spawn_tasks(state: GridState, spec: DomainSpec, rng: random.Random) -> GridState:
    """Run the per-step spawn events: each adds one task to a random marked
    cell with the configured probability. Time is not advanced."""
    return GridState(_spawn(state.tasks, spec, rng), state.positions, state.t)


def encode_state(state: GridState, spec: DomainSpec) -> np.ndarray:
    """Encode a state as a (n_agents + 2, height, width) float tensor.

    Channel 0 holds task counts, channel 1 is filled with t/horizon, and
    channel 2+i one-hot encodes robot i's cell.
    """
    enc = np.zeros((spec.n_agents + 2, spec.height, spec.width))
    enc[0] = np.asarray(state.tasks, dtype=float).reshape(spec.height, spec.width)
    enc[1] = state.t / spec.horizon
    for i, (r, c) in enumerate(state.positions):
        enc[2 + i, r, c] = 1.0
    return enc


class FactoryFloorEnv:
    """Environment adapter over a DomainSpec (see core.Environment)."""

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        self.n_agents = spec.n_agents
        self.n_actions = N_ACTIONS
        self.horizon = spec.horizon
        self.discount = spec.discount

    def initial_state(self) -> GridState:
        return initial_state(self.spec)

    def step_detail(self, state: GridState, actions, rng: random.Random):
        if state.t >= self.horizon:
            raise EpisodeOverError(f"episode over at t={state.t} (horizon {self.horizon})")
        spec = self.spec
        tasks, positions, reward, removed = _transition(state, actions, spec, rng)
        if spec.spawn_events:
            tasks = _spawn(tasks, spec, rng)
        return GridState(tasks, positions, state.t + 1), reward, removed

    def __repr__(self):
        s = self.spec
        return f"FactoryFloorEnv({s.height}x{s.width}, {s.n_agents} robots, H={s.horizon})"


# ---------------------------------------------------------------------------
# Config parsing
#
# Format: '#' starts a comment, sections in brackets.
#   [grid]    key=value pairs: width, height, horizon, move_success,
#             act_success, optional discount (default 1).
#   [robots]  one "id,row,col" line per robot (file order = agent order).
#   [tasks]   "row,col,count" lines; duplicate cells accumulate.
#   [spawns]  first line "events=K,P", then "row,col" lines marking cells.
# A [run] section is tolerated and skipped so a resolved run echo can be fed
# back in as a domain config.

_GRID_KEYS = {
    "width": int,
    "height": int,
    "horizon": int,
    "move_success": float,
    "act_success": float,
    "discount": float,
}
_REQUIRED_GRID = ("width", "height", "horizon", "move_success", "act_success")
_SECTIONS = ("grid", "robots", "tasks", "spawns")


def _fail(line_no: int, msg: str):
    raise ParseError(f"line {line_no}: {msg}")


def _int_fields(body: str, n: int, line_no: int, what: str) -> tuple[int, ...]:
    parts = [p.strip() for p in body.split(",")]
    if len(parts) != n:
        _fail(line_no, f"expected {n} comma-separated values for {what}, got {len(parts)}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        _fail(line_no, f"non-integer value in {what!r} entry: {body!r}")


def parse_domain_config(text: str) -> DomainSpec:
    """Parse a domain config. Raises ParseError naming the offending line."""
    grid: dict[str, float] = {}
    grid_lines: dict[str, int] = {}
    robots: list[tuple[tuple[int, int, int], int]] = []
    tasks: list[tuple[tuple[int, int, int], int]] = []
    spawn_cells: list[tuple[tuple[int, int], int]] = []
    events: tuple[int, float] | None = None
    events_line = 0
    seen: dict[str, int] = {}
    section = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name == "run":
                section = "run"
                continue
            if name not in _SECTIONS:
                _fail(line_no, f"unknown section [{name}]")
            if name in seen:
                _fail(line_no, f"duplicate section [{name}] (first at line {seen[name]})")
            seen[name] = line_no
            section = name
            continue
        if section is None:
            _fail(line_no, "content before any section header")
        if section == "run":
            continue
        if section == "grid":
            if "=" not in line:
                _fail(line_no, "expected key=value in [grid]")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _GRID_KEYS:
                _fail(line_no, f"unknown [grid] key {key!r}")
            if key in grid:
                _fail(line_no, f"duplicate [grid] key {key!r}")
            try:
                grid[key] = _GRID_KEYS[key](value)
            except ValueError:
                _fail(line_no, f"bad value for {key!r}: {value!r}")
            grid_lines[key] = line_no
        elif section == "robots":
            robots.append((_int_fields(line, 3, line_no, "robot"), line_no))
        elif section == "tasks":
            tasks.append((_int_fields(line, 3, line_no, "task"), line_no))
        elif section == "spawns":
            if events is None:
                if not line.startswith("events"):
                    _fail(line_no, "first [spawns] entry must be events=K,P")
                _, _, value = line.partition("=")
                parts = [p.strip() for p in value.split(",")]
                if len(parts) != 2:
                    _fail(line_no, "events takes two values: count,probability")
                try:
                    events = (int(parts[0]), float(parts[1]))
                except ValueError:
                    _fail(line_no, f"bad events entry: {value!r}")
                events_line = line_no
            else:
                cell = _int_fields(line, 2, line_no, "spawn cell")
                spawn_cells.append(((cell[0], cell[1]), line_no))

    for name in _SECTIONS:
        if name not in seen:
            raise ParseError(f"missing section [{name}]")
    for key in _REQUIRED_GRID:
        if key not in grid:
            raise ParseError(f"missing [grid] key {key!r}")
    width = int(grid["width"])
    height = int(grid["height"])
    if width < 1 or height < 1:
        _fail(grid_lines["width" if width < 1 else "height"], "grid dimensions must be positive")
    if int(grid["horizon"]) < 1:
        _fail(grid_lines["horizon"], "horizon must be >= 1")
    for key in ("move_success", "act_success"):
        if not 0.0 <= grid[key] <= 1.0:
            _fail(grid_lines[key], f"{key} must be in [0, 1]")
    if not robots:
        raise ParseError(f"[robots] section is empty (line {seen['robots']})")

    ids = []
    starts = []
    for (rid, r, c), line_no in robots:
        if rid in ids:
            _fail(line_no, f"duplicate robot id {rid}")
        if not (0 <= r < height and 0 <= c < width):
            _fail(line_no, f"robot cell ({r},{c}) outside {height}x{width} grid")
        ids.append(rid)
        starts.append((r, c))

    task_acc: dict[tuple[int, int], int] = {}
    for (r, c, cnt), line_no in tasks:
        if not (0 <= r < height and 0 <= c < width):
            _fail(line_no, f"task cell ({r},{c}) outside {height}x{width} grid")
        if cnt < 0:
            _fail(line_no, f"task count must be >= 0, got {cnt}")
        task_acc[(r, c)] = task_acc.get((r, c), 0) + cnt

    if events is None:
        raise ParseError(f"[spawns] section needs an events=K,P line (line {seen['spawns']})")
    n_events, prob = events
    if n_events < 0:
        _fail(events_line, "event count must be >= 0")
    if not 0.0 <= prob <= 1.0:
        _fail(events_line, "spawn probability must be in [0, 1]")
    cells = []
    for (r, c), line_no in spawn_cells:
        if not (0 <= r < height and 0 <= c < width):
            _fail(line_no, f"spawn cell ({r},{c}) outside {height}x{width} grid")
        cells.append((r, c))
    if n_events > 0 and not cells:
        _fail(events_line, "events > 0 but no spawn cells listed")

    return DomainSpec(
        width=width,
        height=height,
        horizon=int(grid["horizon"]),
        move_success=float(grid["move_success"]),
        act_success=float(grid["act_success"]),
        robot_ids=tuple(ids),
        robot_starts=tuple(starts),
        fixed_tasks=tuple((r, c, cnt) for (r, c), cnt in sorted(task_acc.items())),
        spawn_cells=tuple(cells),
        spawn_probability=prob,
        spawn_events=n_events,
        discount=float(grid.get("discount", 1.0)),
    )


def load_domain_config(path) -> DomainSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_domain_config(fh.read())

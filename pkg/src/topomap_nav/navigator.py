"""Closed-loop navigation over the dynamic topological map.

Each iteration takes the next landmark on the current shortest path and hands
its generated observation to the local controller as a subgoal. A success confirms the edge and advances the believed position. A failure
sends the agent back toward the previous landmark, deletes the directed edge
and replans. Every controller step counts against the episode budget.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import ParameterError
from .local_controller import ControllerParams, greedy_action, reach_probability
from .maze_world import (
    DEFAULT_DEPTH,
    Action,
    Cell,
    OccupancyGrid,
    neighbors4,
    render_panorama,
    step,
)
from .topo_graph import TopoGraph


class ReachMode(str, enum.Enum):
    ORACLE = "oracle"
    PRED = "pred"


class GeneratorMode(str, enum.Enum):
    CVAE = "cvae"
    ORACLE = "oracle"


class GraphSession(str, enum.Enum):
    PERSISTENT = "persistent"
    FRESH = "fresh"


@dataclass
class NavConfig:
    budget: int = 100
    k_max: int = 10
    reach_mode: ReachMode = ReachMode.ORACLE
    pred_threshold: float = 0.5
    generator_mode: GeneratorMode = GeneratorMode.CVAE
    graph_session: GraphSession = GraphSession.PERSISTENT
    depth: int = DEFAULT_DEPTH
    palette_seed: int | None = 0

    def __post_init__(self):
        if self.budget <= 0 or self.k_max <= 0:
            raise ParameterError("budget and k_max must be positive")
        if not 0.0 < self.pred_threshold < 1.0:
            raise ParameterError("pred_threshold must be in (0, 1)")
        self.reach_mode = ReachMode(self.reach_mode)
        self.generator_mode = GeneratorMode(self.generator_mode)
        self.graph_session = GraphSession(self.graph_session)


class Controller(Protocol):
    """What the navigator needs from a local controller.

    ``cell`` and ``goal_cell`` are simulator ground truth; learned controllers
    ignore them, scripted test doubles use them. Returning ``None`` idles one step.
    """

    def act(self, o: np.ndarray, o_goal: np.ndarray, cell: Cell, goal_cell: Cell) -> Action | None: ...

    def reach_prob(self, o: np.ndarray, o_goal: np.ndarray, cell: Cell, goal_cell: Cell) -> float: ...


class LandmarkGenerator(Protocol):
    def landmark_observation(self, cell: Cell, patch) -> np.ndarray: ...


class DQNController:
    """Greedy policy of a trained goal-conditioned DQN."""

    def __init__(self, params: ControllerParams):
        self.params = params

    def act(self, o, o_goal, cell=None, goal_cell=None) -> Action:
        return greedy_action(self.params, o, o_goal)

    def reach_prob(self, o, o_goal, cell=None, goal_cell=None) -> float:
        return reach_probability(self.params, o, o_goal)


class ScriptedController:
    """Perfect executor that always fails attempts across edges in ``fail_set``.

    An attempt starts when ``act`` sees a new goal cell; it is judged by the
    directed pair (cell the attempt started from, goal cell). Failing attempts
    idle in place. The reach signal it reports is exact.
    """

    def __init__(self, grid: OccupancyGrid, fail_set=()):
        self.grid = grid
        self.fail_set = {(Cell(*i), Cell(*j)) for i, j in fail_set}
        self._attempt: tuple[Cell, Cell] | None = None
        self.attempts: list[tuple[Cell, Cell]] = []

    def begin(self, start: Cell, goal: Cell) -> None:
        self._attempt = (Cell(*start), Cell(*goal))
        if start != goal:
            self.attempts.append(self._attempt)

    def act(self, o, o_goal, cell, goal_cell) -> Action | None:
        if self._attempt is None or self._attempt[1] != goal_cell:
            self.begin(cell, goal_cell)
        if self._attempt in self.fail_set:
            return None
        return _first_move_towards(self.grid, Cell(*cell), Cell(*goal_cell))

    def reach_prob(self, o, o_goal, cell, goal_cell) -> float:
        return 1.0 if cell == goal_cell else 0.0


def scripted_failure_controller(grid: OccupancyGrid, fail_set=()) -> ScriptedController:
    return ScriptedController(grid, fail_set)


def _first_move_towards(grid: OccupancyGrid, s: Cell, goal: Cell) -> Action | None:
    if s == goal:
        return None
    parent = {s: None}
    frontier = [s]
    while frontier:
        nxt = []
        for c in frontier:
            for a, nb in neighbors4(c):
                if nb in parent or not grid.is_free(nb):
                    continue
                parent[nb] = (c, a)
                if nb == goal:
                    while parent[nb][0] != s:
                        nb = parent[nb][0]
                    return parent[nb][1]
                nxt.append(nb)
        frontier = nxt
    return None


class ObservationCache:
    """Memoised true panoramas of a grid."""

    def __init__(self, grid: OccupancyGrid, depth: int = DEFAULT_DEPTH, palette_seed: int | None = 0):
        self.grid = grid
        self.depth = depth
        self.palette_seed = palette_seed
        self._obs: dict[Cell, np.ndarray] = {}

    def __call__(self, cell: Cell) -> np.ndarray:
        cell = Cell(*cell)
        if cell not in self._obs:
            self._obs[cell] = render_panorama(self.grid, cell, self.depth, self.palette_seed)
        return self._obs[cell]


@dataclass
class EpisodeResult:
    success: bool
    steps_used: int
    landmarks_attempted: int = 0
    landmarks_reached: int = 0
    edges_deleted: list[tuple[Cell, Cell]] = field(default_factory=list)
    trajectory: list[Cell] = field(default_factory=list)
    unreachable: bool = False
    belief_divergences: int = 0
    charges: list[int] = field(default_factory=list)


class TraceWriter:
    """Collects navigation events; ``to_jsonl`` gives one JSON object per line."""

    def __init__(self):
        self.events: list[dict] = []

    def __call__(self, kind: str, **data):
        ev = {"event": kind}
        for k, v in data.items():
            if isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, list):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            ev[k] = v
        self.events.append(ev)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.events)


def execute_subgoal(
    grid: OccupancyGrid,
    controller: Controller,
    s_current: Cell,
    o_goal: np.ndarray,
    goal_cell: Cell,
    cfg: NavConfig,
    observe=None,
    max_steps: int | None = None,
    trace=None,
) -> tuple[bool, int, Cell, list[Cell]]:
    """Run the controller toward ``o_goal`` for at most ``k_max`` steps.

    Oracle mode stops as soon as the true cell equals ``goal_cell``; Pred mode
    stops at the first step whose reach probability clears the threshold.
    Returns ``(reached, k, final_cell, visited_cells)``.
    """
    observe = observe or ObservationCache(grid, cfg.depth, cfg.palette_seed)
    limit = cfg.k_max if max_steps is None else min(cfg.k_max, max_steps)
    s = Cell(*s_current)
    goal_cell = Cell(*goal_cell)
    if isinstance(controller, ScriptedController):
        controller.begin(s, goal_cell)
    if cfg.reach_mode is ReachMode.ORACLE and s == goal_cell:
        return True, 0, s, []
    visited = []
    for k in range(1, limit + 1):
        a = controller.act(observe(s), o_goal, s, goal_cell)
        if a is not None:
            s = step(grid, s, a)
        visited.append(s)
        if trace is not None:
            trace("step", cell=tuple(s), action=None if a is None else int(a))
        if cfg.reach_mode is ReachMode.ORACLE:
            if s == goal_cell:
                return True, k, s, visited
        elif controller.reach_prob(observe(s), o_goal, s, goal_cell) >= cfg.pred_threshold:
            return True, k, s, visited
    return False, limit, s, visited


def navigate(
    grid: OccupancyGrid,
    graph: TopoGraph,
    generator: LandmarkGenerator,
    controller: Controller,
    s0: Cell,
    sg: Cell,
    cfg: NavConfig = NavConfig(),
    observe=None,
    trace=None,
) -> tuple[EpisodeResult, TopoGraph]:
    """Navigate from ``s0`` to ``sg`` within ``cfg.budget`` steps, updating ``graph`` in place.

    The returned graph is the same object, mutated. Subgoal attempts are cut
    short when the budget runs out, so ``steps_used <= budget``.
    """
    s0, sg = Cell(*s0), Cell(*sg)
    for c in (s0, sg):
        if not grid.is_free(c):
            raise ParameterError(f"{tuple(c)} is not a free cell of the true maze")
    observe = observe or ObservationCache(grid, cfg.depth, cfg.palette_seed)
    emit = trace or (lambda *a, **k: None)
    res = EpisodeResult(False, 0, trajectory=[s0])
    believed, true = s0, s0
    if s0 == sg:
        res.success = True
        return res, graph
    if s0 not in graph.nodes or sg not in graph.nodes:
        res.unreachable = True
        emit("plan", start=tuple(s0), goal=tuple(sg), path=None)
        return res, graph

    t = 0
    first = True
    while t < cfg.budget and believed != sg:
        if believed not in graph.nodes:
            res.unreachable = True
            break
        path = graph.plan(believed, sg)
        emit("plan" if first else "replan", start=tuple(believed), goal=tuple(sg), path=None if path is None else [tuple(c) for c in path])
        first = False
        if path is None:
            res.unreachable = True
            break
        landmark = path[0]
        o = generator.landmark_observation(landmark, graph.nodes[landmark])
        emit("subgoal", start=tuple(believed), landmark=tuple(landmark))
        res.landmarks_attempted += 1
        reached, k, true, visited = execute_subgoal(grid, controller, true, o, landmark, cfg, observe, cfg.budget - t, trace)
        t += k
        res.charges.append(k)
        res.trajectory += visited
        if reached:
            emit("reach", landmark=tuple(landmark), cell=tuple(true), steps=k)
            graph.mark_traversed(believed, landmark)
            res.landmarks_reached += 1
            if true != landmark:
                res.belief_divergences += 1
            believed = landmark
            continue

        previous = believed
        k_back = 0
        if t < cfg.budget:
            o_prev = generator.landmark_observation(previous, graph.nodes[previous])
            back, k_back, true, visited = execute_subgoal(grid, controller, true, o_prev, previous, cfg, observe, cfg.budget - t, trace)
            t += k_back
            res.charges.append(k_back)
            res.trajectory += visited
        graph.remove_edge(previous, landmark)
        res.edges_deleted.append((previous, landmark))
        emit("delete", edge=[tuple(previous), tuple(landmark)], steps=k, return_steps=k_back)
        if cfg.reach_mode is ReachMode.ORACLE:
            believed = true
        else:
            believed = previous
            if true != previous:
                res.belief_divergences += 1

    res.steps_used = t
    res.success = true == sg and t <= cfg.budget
    return res, graph

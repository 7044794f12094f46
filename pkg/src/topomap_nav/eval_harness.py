"""Distance-bucketed success-rate evaluation for every method, including corruption sweeps."""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParameterError
from .landmark_generator import CVAE, CVAEGenerator, CVAEHyper, OracleGenerator, collect_dataset, train_cvae
from .local_controller import ControllerHyper, ControllerParams, train_controller
from .maze_world import (
    Action,
    Cell,
    CorruptionMode,
    CorruptionSpec,
    OccupancyGrid,
    bfs_distances_from,
    corrupt_map,
    derive_rough_map,
    step,
)
from .navigator import (
    DQNController,
    GeneratorMode,
    GraphSession,
    NavConfig,
    ObservationCache,
    ReachMode,
    execute_subgoal,
    navigate,
)
from .topo_graph import init_graph

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    RANDOM = "Random"
    FLAT_GC = "FlatGC"
    OURS_ORACLE = "OursOracle"
    OURS_PRED = "OursPred"
    OURS_2D_MAP = "Ours2DMap"
    OURS_NO_MAP = "OursNoMap"


DEFAULT_DISTANCES = (1, 5, 10, 15, 20)


@dataclass
class TaskSet:
    maze_id: str
    tasks: list[tuple[Cell, Cell, int]]
    seed: int
    dropped: list[int] = field(default_factory=list)

    @property
    def distances(self) -> list[int]:
        return sorted({d for _, _, d in self.tasks})


def sample_tasks(grid: OccupancyGrid, distances, n_per_distance: int = 25, seed: int = 0, maze_id: str = "") -> TaskSet:
    """Uniform start-goal pairs per distance bucket; buckets the maze cannot realise are dropped.

    Drawing uniformly from the pairs at each exact distance is equivalent to
    rejection-sampling uniform pairs into the bucket.
    """
    distances = list(distances)
    if not distances:
        raise ParameterError("no distances requested")
    free = grid.free_cells()
    if not free:
        raise ParameterError("maze has no free cells")
    by_d: dict[int, list[tuple[Cell, Cell]]] = {d: [] for d in distances}
    for a in free:
        for b, d in bfs_distances_from(grid, a).items():
            if d in by_d:
                by_d[d].append((a, b))
    rng = np.random.default_rng(seed)
    tasks, dropped = [], []
    for d in distances:
        pairs = by_d[d]
        if not pairs:
            log.warning("maze %s has no pairs at distance %d; bucket dropped", maze_id, d)
            dropped.append(d)
            continue
        for i in rng.integers(len(pairs), size=n_per_distance):
            tasks.append((pairs[i][0], pairs[i][1], d))
    return TaskSet(maze_id, tasks, seed, dropped)


@dataclass
class SuccessTable:
    method: str
    maze_id: str
    maze_size: int
    train_seed: int
    eval_seed: int
    counts: dict[int, tuple[int, int]]  # distance -> (n_success, n_total)

    @property
    def rates(self) -> dict[int, float]:
        return {d: s / n for d, (s, n) in sorted(self.counts.items())}

    def mean_rate(self, keep=lambda d: True) -> float:
        r = [v for d, v in self.rates.items() if keep(d)]
        return float(np.mean(r)) if r else float("nan")


@dataclass
class AggregateTable:
    method: str
    distances: list[int]
    mean: list[float]
    stderr: list[float]
    n_tables: int


def aggregate(tables: list[SuccessTable]) -> AggregateTable:
    """Per-bucket mean and standard error (sample stdev / sqrt(k)) across tables."""
    if not tables:
        raise ParameterError("nothing to aggregate")
    buckets = sorted(tables[0].counts)
    if any(sorted(t.counts) != buckets for t in tables):
        raise ParameterError("tables have different distance buckets")
    means, errs = [], []
    for d in buckets:
        rates = sorted(t.rates[d] for t in tables)
        means.append(float(math.fsum(rates) / len(rates)))
        errs.append(statistics.stdev(rates) / math.sqrt(len(rates)) if len(rates) > 1 else 0.0)
    return AggregateTable(tables[0].method, buckets, means, errs, len(tables))


@dataclass
class Models:
    """Trained components for one run seed."""

    controller: ControllerParams | None = None
    cvae: CVAE | None = None
    flat: ControllerParams | None = None
    train_seed: int = 0
    train_maze_ids: list[str] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    method: Method
    nav: NavConfig = field(default_factory=NavConfig)
    corruption: CorruptionSpec | None = None
    distances: tuple[int, ...] = DEFAULT_DISTANCES
    n_per_distance: int = 25
    run_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        self.method = Method(self.method)


def _check_models(method: Method, models: Models, nav: NavConfig) -> None:
    needs_ctrl = method in (Method.OURS_ORACLE, Method.OURS_PRED, Method.OURS_2D_MAP, Method.OURS_NO_MAP)
    if needs_ctrl and models.controller is None:
        raise ConfigurationError(f"{method.value} needs a trained local controller")
    if method is Method.OURS_PRED and (models.controller.variant != "pred"):
        raise ConfigurationError("OursPred needs a pred-variant controller")
    if method is Method.FLAT_GC and models.flat is None:
        raise ConfigurationError("FlatGC needs a flat goal-conditioned controller")
    if method in (Method.OURS_ORACLE, Method.OURS_PRED, Method.OURS_2D_MAP):
        if nav.generator_mode is GeneratorMode.CVAE and models.cvae is None:
            raise ConfigurationError(f"{method.value} with the CVAE generator needs a trained CVAE")


def make_generator(models: Models, rough: OccupancyGrid, nav: NavConfig):
    if nav.generator_mode is GeneratorMode.ORACLE:
        return OracleGenerator(rough, nav.depth, nav.palette_seed)
    return CVAEGenerator(models.cvae)


def _visits_goal(trajectory, goal) -> bool:
    return any(c == goal for c in trajectory)


def _drive(grid, policy, s0, sg, budget, observe) -> bool:
    o_goal = observe(sg)
    s = s0
    if s == sg:
        return True
    for _ in range(budget):
        a = policy(observe(s), o_goal, s, sg)
        if a is not None:
            s = step(grid, s, a)
        if s == sg:
            return True
    return False


def _open_loop(grid, rough, generator, controller, s0, sg, nav, observe) -> bool:
    """Follow the initial plan once, never replanning; a failed hop moves on to the next landmark."""
    if s0 == sg:
        return True
    graph = init_graph(rough)
    if s0 not in graph.nodes or sg not in graph.nodes:
        return False
    path = graph.plan(s0, sg)
    if path is None:
        return False
    cfg = NavConfig(nav.budget, nav.k_max, ReachMode.ORACLE, nav.pred_threshold, nav.generator_mode, nav.graph_session, nav.depth, nav.palette_seed)
    s, t = s0, 0
    for landmark in path:
        if t >= nav.budget:
            break
        o = generator.landmark_observation(landmark, graph.nodes[landmark])
        _, k, s, visited = execute_subgoal(grid, controller, s, o, landmark, cfg, observe, nav.budget - t)
        t += k
        if _visits_goal(visited, sg):
            return True
    return False


def run_method(
    method: Method | str,
    grid: OccupancyGrid,
    taskset: TaskSet,
    models: Models,
    nav: NavConfig = NavConfig(),
    rough: OccupancyGrid | None = None,
    eval_seed: int = 0,
    label: str | None = None,
    controller=None,
) -> SuccessTable:
    """Evaluate one method on every task of ``taskset``.

    ``rough`` is the map handed to the map-based methods (defaults to the true
    layout). With a persistent graph session one graph is shared by all tasks
    in order; otherwise each task starts from a fresh graph. ``controller``
    replaces the trained local controller (e.g. a scripted test double).
    """
    method = Method(method)
    if controller is None:
        _check_models(method, models, nav)
    elif method in (Method.OURS_ORACLE, Method.OURS_PRED, Method.OURS_2D_MAP) and nav.generator_mode is GeneratorMode.CVAE and models.cvae is None:
        raise ConfigurationError(f"{method.value} with the CVAE generator needs a trained CVAE")
    rough = derive_rough_map(grid) if rough is None else rough
    observe = ObservationCache(grid, nav.depth, nav.palette_seed)
    rng = np.random.default_rng(eval_seed)
    counts: dict[int, list[int]] = {}
    graph = init_graph(rough)
    generator = make_generator(models, rough, nav) if method in (Method.OURS_ORACLE, Method.OURS_PRED, Method.OURS_2D_MAP) else None
    if controller is None and models.controller is not None:
        controller = DQNController(models.controller)

    for s0, sg, d in taskset.tasks:
        if method is Method.RANDOM:
            ok = _drive(grid, lambda o, g, c, gc: Action(int(rng.integers(4))), s0, sg, nav.budget, observe)
        elif method is Method.FLAT_GC:
            flat = DQNController(models.flat)
            ok = _drive(grid, flat.act, s0, sg, nav.budget, observe)
        elif method is Method.OURS_NO_MAP:
            ok = _drive(grid, controller.act, s0, sg, nav.budget, observe)
        elif method is Method.OURS_2D_MAP:
            ok = _open_loop(grid, rough, generator, controller, s0, sg, nav, observe)
        else:
            cfg = NavConfig(
                nav.budget,
                nav.k_max,
                ReachMode.PRED if method is Method.OURS_PRED else ReachMode.ORACLE,
                nav.pred_threshold,
                nav.generator_mode,
                nav.graph_session,
                nav.depth,
                nav.palette_seed,
            )
            g = graph if nav.graph_session is GraphSession.PERSISTENT else init_graph(rough)
            result, _ = navigate(grid, g, generator, controller, s0, sg, cfg, observe)
            ok = result.success
        c = counts.setdefault(d, [0, 0])
        c[0] += int(ok)
        c[1] += 1
    return SuccessTable(
        label or method.value,
        taskset.maze_id,
        grid.n,
        models.train_seed,
        eval_seed,
        {d: (s, n) for d, (s, n) in sorted(counts.items())},
    )


def corruption_sweep(
    grid: OccupancyGrid,
    taskset: TaskSet,
    models: Models,
    proportions=(0.0, 0.1, 0.3, 0.5),
    modes=(CorruptionMode.MIXED,),
    nav: NavConfig = NavConfig(),
    method: Method = Method.OURS_ORACLE,
    corruption_seed: int = 0,
    eval_seed: int = 0,
    flip_prob: float = 0.5,
    controller=None,
) -> dict[tuple[float, CorruptionMode], SuccessTable]:
    """Evaluate fixed models on corrupted rough maps; the graph is rebuilt from each map."""
    out = {}
    for mode in modes:
        mode = CorruptionMode(mode)
        for prop in proportions:
            rough = corrupt_map(derive_rough_map(grid), CorruptionSpec(prop, mode, flip_prob, corruption_seed))
            label = f"{Method(method).value}[{mode.value}={prop:.2f}]"
            out[(prop, mode)] = run_method(method, grid, taskset, models, nav, rough, eval_seed, label, controller)
    return out


def assert_disjoint(train_ids, eval_ids) -> None:
    overlap = set(train_ids) & set(eval_ids)
    if overlap:
        raise ConfigurationError(f"evaluation mazes overlap training mazes: {sorted(overlap)}")


def maze_id(size: int, seed: int) -> str:
    return f"maze{size}_s{seed}"


def unseen_evaluation(
    models: Models,
    sizes,
    maze_seeds,
    methods=(Method.OURS_ORACLE,),
    nav: NavConfig = NavConfig(),
    distances=DEFAULT_DISTANCES,
    n_per_distance: int = 25,
    seed: int = 0,
    controller=None,
) -> list[SuccessTable]:
    """Evaluate fixed models on generated mazes that were not trained on (e.g. larger sizes).

    Models are only read, never updated. Raises ConfigurationError if an
    evaluation maze id appears in ``models.train_maze_ids``.
    """
    from .maze_world import generate_maze

    ids = [(n, s, maze_id(n, s)) for n in sizes for s in maze_seeds]
    assert_disjoint(models.train_maze_ids, [i for _, _, i in ids])
    tables = []
    for n, s, mid in ids:
        grid = generate_maze(s, n)
        ts = sample_tasks(grid, distances, n_per_distance, seed, mid)
        for m in methods:
            m = Method(m)
            cfg = replace(nav, reach_mode=ReachMode.PRED if m is Method.OURS_PRED else ReachMode.ORACLE)
            tables.append(run_method(m, grid, ts, models, cfg, None, seed, None, controller))
    return tables


@dataclass
class TrainSettings:
    cvae: CVAEHyper = field(default_factory=CVAEHyper)
    # pred variant: its Q head serves every method, its reach head serves OursPred
    controller: ControllerHyper = field(default_factory=lambda: ControllerHyper(variant="pred"))
    flat_steps: int | None = None  # defaults to controller.steps
    n_samples: int = 5000
    train_flat: bool = True


def train_components(
    mazes: list[OccupancyGrid],
    seed: int,
    settings: TrainSettings = TrainSettings(),
    maze_ids: list[str] | None = None,
) -> Models:
    """Train CVAE, local controller and (optionally) the flat baseline for one run seed."""
    chyper = settings.controller
    ds = collect_dataset(mazes, settings.n_samples, chyper.depth, chyper.palette_seed, seed)
    cvae, _ = train_cvae(ds, CVAEHyper(**{**settings.cvae.__dict__, "seed": seed}))
    ctrl, _ = train_controller(mazes, CVAEGenerator(cvae), chyper, seed)
    flat = None
    if settings.train_flat:
        fh = ControllerHyper(**{
            **chyper.__dict__,
            "task": "flat",
            "horizon": 100,
            "relabel": 0.0,
            "variant": "oracle",
            "steps": settings.flat_steps or chyper.steps,
        })
        flat, _ = train_controller(mazes, None, fh, seed + 500)
    return Models(ctrl, cvae, flat, seed, list(maze_ids or []))


CSV_FIELDS = ["method", "maze_id", "maze_size", "train_seed", "eval_seed", "distance", "n_tasks", "n_success", "rate"]


def _table_order(t: SuccessTable):
    return (t.method, t.maze_id, t.train_seed, t.eval_seed)


def write_results(tables: list[SuccessTable], path, title: str = "Success rate by distance", figure: bool = True) -> dict[str, Path]:
    """Write ``<path>.csv``, ``<path>.plot.json`` and (optionally) ``<path>.png``."""
    base = Path(path)
    if base.suffix == ".csv":
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for t in sorted(tables, key=_table_order):
            for d, (s, n) in sorted(t.counts.items()):
                w.writerow([t.method, t.maze_id, t.maze_size, t.train_seed, t.eval_seed, d, n, s, repr(s / n)])
    plot = plot_description(tables, title)
    plot_path = base.with_suffix(".plot.json")
    plot_path.write_text(json.dumps(plot, indent=2, sort_keys=True) + "\n")
    out = {"csv": csv_path, "plot": plot_path}
    if figure:
        from .plotting import plot_success_curves

        out["png"] = plot_success_curves(plot, base.with_suffix(".png"))
    return out


def plot_description(tables: list[SuccessTable], title: str) -> dict:
    by_method: dict[str, list[SuccessTable]] = {}
    for t in sorted(tables, key=_table_order):
        by_method.setdefault(t.method, []).append(t)
    series = []
    for method in sorted(by_method):
        agg = aggregate(by_method[method])
        series.append({"label": method, "x": agg.distances, "y": agg.mean, "yerr": agg.stderr})
    return {"title": title, "series": series}


def read_results(path) -> list[SuccessTable]:
    tables: dict[tuple, SuccessTable] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], row["maze_id"], int(row["train_seed"]), int(row["eval_seed"]))
            t = tables.get(key)
            if t is None:
                t = tables[key] = SuccessTable(key[0], key[1], int(row["maze_size"]), key[2], key[3], {})
            t.counts[int(row["distance"])] = (int(row["n_success"]), int(row["n_tasks"]))
    return list(tables.values())

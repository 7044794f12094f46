"""Command-line entry point: ``topomap-nav <subcommand> [--flags]``.

Usage errors exit with status 1 and runtime errors with status 2. Every
subcommand writes ``<output>.manifest.json`` next to its main output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, NumericError, ParameterError, StateError, TrainingError
from .eval_harness import (
    DEFAULT_DISTANCES,
    Method,
    Models,
    corruption_sweep,
    maze_id,
    run_method,
    sample_tasks,
    write_results,
)
from .landmark_generator import (
    CVAEGenerator,
    CVAEHyper,
    GeneratorDataset,
    OracleGenerator,
    collect_dataset,
    load_cvae,
    save_cvae,
    train_cvae,
)
from .local_controller import ControllerHyper, load_controller, save_controller, train_controller
from .maze_world import (
    Cell,
    CorruptionMode,
    CorruptionSpec,
    bfs_distances_from,
    corrupt_map,
    derive_rough_map,
    generate_maze,
    load_map,
    render_panorama,
    save_map,
)
from .navigator import DQNController, NavConfig, TraceWriter, navigate
from .topo_graph import TopoGraph, init_graph

log = logging.getLogger("topomap_nav")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


# ---------------------------------------------------------------- helpers


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out, args: argparse.Namespace, inputs=(), outputs=()) -> Path:
    """Record the config and the input/output hashes behind ``out``."""
    out = Path(out)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "tool": "topomap-nav",
        "version": __version__,
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).is_file()},
        "outputs": {str(p): _sha256(p) for p in outputs if Path(p).is_file()},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = out.parent / (out.name + ".manifest.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _cell(text: str) -> Cell:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y, got {text!r}") from None
    return Cell(x, y)


def _palette(text: str):
    return None if text.lower() == "none" else int(text)


def _maps(args) -> list[tuple[str, Path]]:
    if args.map:
        paths = [Path(args.map)]
    elif args.maps_dir:
        paths = sorted(Path(args.maps_dir).glob("*.map"))
        if not paths:
            raise ParameterError(f"no .map files in {args.maps_dir}")
    else:
        raise UsageError("one of --map or --maps-dir is required")
    return [(p.stem, p) for p in paths]


def _train_seed(ckpt) -> int:
    m = Path(str(ckpt) + ".manifest.json")
    if m.is_file():
        seed = json.loads(m.read_text()).get("seed")
        if isinstance(seed, int):
            return seed
    return 0


def _nav(args, **over) -> NavConfig:
    kw = dict(
        budget=args.budget,
        k_max=args.kmax,
        generator_mode=args.generator,
        graph_session=args.graph,
        depth=args.depth,
        palette_seed=args.palette_seed,
    )
    kw.update(over)
    return NavConfig(**kw)


def _load_models(args) -> Models:
    ctrl = load_controller(args.controller)
    cvae = load_cvae(args.gen) if getattr(args, "gen", None) else None
    flat = load_controller(args.flat_controller) if getattr(args, "flat_controller", None) else None
    return Models(ctrl, cvae, flat, _train_seed(args.controller))


# ---------------------------------------------------------------- subcommands


def cmd_gen_maze(args):
    grid = generate_maze(args.seed, args.size)
    save_map(grid, args.out)
    write_manifest(args.out, args, outputs=[args.out])


def cmd_corrupt_map(args):
    rough = derive_rough_map(load_map(args.map))
    out = corrupt_map(rough, CorruptionSpec(args.proportion, args.mode, 0.5, args.seed))
    save_map(out, args.out)
    write_manifest(args.out, args, inputs=[args.map], outputs=[args.out])


def cmd_collect_data(args):
    named = _maps(args)
    grids = [load_map(p) for _, p in named]
    ds = collect_dataset(grids, args.samples, args.depth, args.palette_seed, args.seed)
    ds.save_jsonl(args.out)
    write_manifest(args.out, args, inputs=[p for _, p in named], outputs=[args.out])


def cmd_train_gen(args):
    ds = GeneratorDataset.load_jsonl(args.data)
    hyper = CVAEHyper(epochs=args.epochs, batch=args.batch, lr=args.lr, seed=args.seed)
    model, trace = train_cvae(ds, hyper)
    save_cvae(model, args.out)
    log.info("final loss %.4f", trace[-1])
    write_manifest(args.out, args, inputs=[args.data], outputs=[args.out])


def cmd_train_ctrl(args):
    named = _maps(args)
    grids = [load_map(p) for _, p in named]
    flat = args.flat
    hyper = ControllerHyper(
        steps=args.steps,
        lr=args.lr,
        batch=args.batch,
        relabel=0.0 if flat else args.relabel,
        variant="oracle" if flat else args.variant,
        task="flat" if flat else "local",
        horizon=args.budget if flat else ControllerHyper.horizon,
        depth=args.depth,
        palette_seed=args.palette_seed,
    )
    generator = CVAEGenerator(load_cvae(args.gen)) if args.gen and not flat else None
    params, trace = train_controller(grids, generator, hyper, args.seed)
    save_controller(params, args.out)
    curve = trace.success_curve(100)
    log.info("training success (last window) %.3f", curve[-1] if curve else float("nan"))
    write_manifest(args.out, args, inputs=[p for _, p in named] + [args.gen], outputs=[args.out])


def _eval_session(job):
    """One (maze, run) session; module-level so worker processes can run it."""
    name, path, run, args, methods, models, sweep = job
    grid = load_map(path)
    seed = args.seed + run
    ts = sample_tasks(grid, args.distances, args.tasks_per_distance, seed, name)
    tables = []
    if sweep:
        fam = corruption_sweep(grid, ts, models, args.proportion, [args.mode], _nav(args), Method.OURS_ORACLE, seed, seed)
        tables += [fam[k] for k in sorted(fam, key=lambda k: (k[1].value, k[0]))]
        return tables
    rough = None
    label_suffix = ""
    if args.proportion and args.proportion[0] > 0:
        rough = corrupt_map(derive_rough_map(grid), CorruptionSpec(args.proportion[0], args.mode, 0.5, seed))
        label_suffix = f"[{CorruptionMode(args.mode).value}={args.proportion[0]:.2f}]"
    for m in methods:
        nav = _nav(args, reach_mode="pred" if m is Method.OURS_PRED else "oracle")
        tables.append(run_method(m, grid, ts, models, nav, rough, seed, m.value + label_suffix))
    return tables


def _run_sessions(args, sweep: bool):
    named = _maps(args)
    models = _load_models(args)
    methods = [Method(m) for m in args.methods] if not sweep else []
    jobs = [(name, path, run, args, methods, models, sweep) for name, path in named for run in range(args.runs)]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            chunks = list(pool.map(_eval_session, jobs))
    else:
        chunks = [_eval_session(j) for j in jobs]
    tables = [t for c in chunks for t in c]
    title = "Success vs corruption" if sweep else "Success rate by distance"
    files = write_results(tables, args.out, title, figure=not args.no_figure)
    inputs = [p for _, p in named] + [args.controller, getattr(args, "gen", None), getattr(args, "flat_controller", None)]
    write_manifest(files["csv"], args, inputs=inputs, outputs=list(files.values()))


def cmd_eval(args):
    _run_sessions(args, sweep=False)


def cmd_sweep_corruption(args):
    if not args.proportion:
        args.proportion = [0.0, 0.1, 0.3, 0.5]
    _run_sessions(args, sweep=True)


def cmd_viz_graph(args):
    grid = load_map(args.map)
    graph = TopoGraph.load(Path(args.topo).read_text(), derive_rough_map(grid)) if args.topo else init_graph(derive_rough_map(grid))
    out = Path(args.out)
    if out.suffix == ".svg":
        out.write_text(graph.visualize_svg(grid))
    elif out.suffix == ".txt":
        out.write_text(graph.visualize_ascii(grid))
    else:
        from .plotting import plot_graph

        plot_graph(graph, grid, out)
    write_manifest(out, args, inputs=[args.map, args.topo], outputs=[out])


def cmd_viz_episode(args):
    grid = load_map(args.map)
    rough = load_map(args.rough) if args.rough else derive_rough_map(grid)
    rng = np.random.default_rng(args.seed)
    if args.start and args.goal:
        s0, sg = args.start, args.goal
    else:
        d = args.distances[0]
        pairs = [(a, b) for a in grid.free_cells() for b, dd in bfs_distances_from(grid, a).items() if dd == d]
        if not pairs:
            raise ParameterError(f"maze has no pairs at distance {d}")
        s0, sg = pairs[rng.integers(len(pairs))]
    ctrl = load_controller(args.controller)
    nav = _nav(args, reach_mode=args.variant)
    if nav.generator_mode.value == "oracle":
        generator = OracleGenerator(rough, args.depth, args.palette_seed)
    else:
        if not args.gen:
            raise ConfigurationError("--generator cvae needs --gen")
        generator = CVAEGenerator(load_cvae(args.gen))
    trace = TraceWriter()
    res, graph = navigate(grid, init_graph(rough), generator, DQNController(ctrl), s0, sg, nav, trace=trace)
    out = Path(args.out)
    from .plotting import plot_episode

    plot_episode(grid, res.trajectory, out, s0, sg, res.edges_deleted)
    trace_path = out.with_suffix(".trace.jsonl")
    trace_path.write_text(trace.to_jsonl())
    summary = out.with_suffix(".json")
    summary.write_text(
        json.dumps(
            {
                "start": list(s0),
                "goal": list(sg),
                "success": res.success,
                "steps_used": res.steps_used,
                "landmarks_attempted": res.landmarks_attempted,
                "landmarks_reached": res.landmarks_reached,
                "edges_deleted": [[list(i), list(j)] for i, j in res.edges_deleted],
                "unreachable": res.unreachable,
            },
            indent=2,
        )
        + "\n"
    )
    print(f"success={res.success} steps={res.steps_used} deleted={len(res.edges_deleted)}")
    write_manifest(out, args, inputs=[args.map, args.rough, args.controller, args.gen], outputs=[out, trace_path, summary])


def cmd_render_obs(args):
    grid = load_map(args.map)
    if not grid.is_free(args.cell):
        raise ParameterError(f"{tuple(args.cell)} is not a free cell")
    obs = render_panorama(grid, args.cell, args.depth, args.palette_seed)
    out = Path(args.out)
    outputs = [out]
    if out.suffix == ".png":
        from .plotting import plot_observation

        plot_observation(obs, out)
        side = out.with_suffix(".json")
        side.write_text(json.dumps({"cell": list(args.cell), "obs": obs.tolist()}) + "\n")
        outputs.append(side)
    else:
        out.write_text(json.dumps({"cell": list(args.cell), "obs": obs.tolist()}) + "\n")
    write_manifest(out, args, inputs=[args.map], outputs=outputs)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="topomap-nav", description="Navigation with rough maps and dynamic topological graphs.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    def common(sp, seed=True, out=True):
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if out:
            sp.add_argument("--out", required=True)

    def maps(sp):
        sp.add_argument("--map")
        sp.add_argument("--maps-dir")

    def render(sp):
        sp.add_argument("--depth", type=int, default=3)
        sp.add_argument("--palette-seed", type=_palette, default=0)

    def nav(sp):
        sp.add_argument("--budget", type=int, default=100)
        sp.add_argument("--kmax", type=int, default=10)
        sp.add_argument("--generator", choices=["cvae", "oracle"], default="cvae")
        sp.add_argument("--graph", choices=["persistent", "fresh"], default="persistent")

    sp = sub.add_parser("gen-maze", help="generate a maze map file")
    sp.add_argument("--size", type=int, required=True)
    common(sp)
    sp.set_defaults(func=cmd_gen_maze)

    sp = sub.add_parser("corrupt-map", help="flip cells of a map to make a rough map")
    sp.add_argument("--map", required=True)
    sp.add_argument("--proportion", type=float, required=True)
    sp.add_argument("--mode", choices=[m.value for m in CorruptionMode], default="mixed")
    common(sp)
    sp.set_defaults(func=cmd_corrupt_map)

    sp = sub.add_parser("collect-data", help="random-walk dataset for the generator")
    maps(sp)
    sp.add_argument("--samples", type=int, default=5000)
    render(sp)
    common(sp)
    sp.set_defaults(func=cmd_collect_data)

    sp = sub.add_parser("train-gen", help="train the conditional VAE")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--lr", type=float, default=1e-3)
    common(sp)
    sp.set_defaults(func=cmd_train_gen)

    sp = sub.add_parser("train-ctrl", help="train the goal-conditioned controller")
    maps(sp)
    sp.add_argument("--gen")
    sp.add_argument("--steps", type=int, default=200_000)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--batch", type=int, default=128)
    sp.add_argument("--relabel", type=float, default=0.5)
    sp.add_argument("--variant", choices=["oracle", "pred"], default="pred")
    sp.add_argument("--flat", action="store_true", help="train the flat baseline (arbitrary goals, horizon = --budget)")
    sp.add_argument("--budget", type=int, default=100)
    render(sp)
    common(sp)
    sp.set_defaults(func=cmd_train_ctrl)

    for name, func, helptext in (
        ("eval", cmd_eval, "success rates per distance bucket"),
        ("sweep-corruption", cmd_sweep_corruption, "success under rough-map corruption"),
    ):
        sp = sub.add_parser(name, help=helptext)
        maps(sp)
        sp.add_argument("--controller", required=True)
        sp.add_argument("--gen")
        sp.add_argument("--flat-controller")
        if name == "eval":
            sp.add_argument("--methods", type=lambda s: s.split(","), default=["OursOracle"])
        sp.add_argument("--distances", type=_int_list, default=list(DEFAULT_DISTANCES))
        sp.add_argument("--tasks-per-distance", type=int, default=25)
        sp.add_argument("--runs", type=int, default=5)
        sp.add_argument("--proportion", type=_float_list, default=None)
        sp.add_argument("--mode", choices=[m.value for m in CorruptionMode], default="mixed")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--no-figure", action="store_true")
        nav(sp)
        render(sp)
        common(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("viz-graph", help="draw a topological graph")
    sp.add_argument("--map", required=True)
    sp.add_argument("--topo", help="saved graph file; default is the fresh graph of --map")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_viz_graph)

    sp = sub.add_parser("viz-episode", help="run and draw one navigation episode")
    sp.add_argument("--map", required=True)
    sp.add_argument("--rough")
    sp.add_argument("--controller", required=True)
    sp.add_argument("--gen")
    sp.add_argument("--variant", choices=["oracle", "pred"], default="oracle")
    sp.add_argument("--start", type=_cell)
    sp.add_argument("--goal", type=_cell)
    sp.add_argument("--distances", type=_int_list, default=[10])
    nav(sp)
    render(sp)
    common(sp)
    sp.set_defaults(func=cmd_viz_episode)

    sp = sub.add_parser("render-obs", help="render the panoramic observation at a cell")
    sp.add_argument("--map", required=True)
    sp.add_argument("--cell", type=_cell, required=True)
    render(sp)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_render_obs)
    return p


def _validate(args, parser):
    if args.command == "eval" and args.methods:
        valid = {m.value for m in Method}
        bad = [m for m in args.methods if m not in valid]
        if bad:
            parser.error(f"--methods: unknown method(s) {bad}; choose from {sorted(valid)}")
    if args.command in ("eval", "sweep-corruption"):
        if args.runs < 1 or args.workers < 1 or args.tasks_per_distance < 1:
            parser.error("--runs, --workers and --tasks-per-distance must be positive")
        if not args.distances:
            parser.error("--distances must list at least one distance")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(args, parser)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"topomap-nav {args.command}: error: {exc}\n")
        return 1
    except (ParameterError, ConfigurationError, StateError, NumericError, TrainingError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"topomap-nav {args.command}: {type(exc).__name__}: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

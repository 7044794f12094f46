import csv
import json
import subprocess
import sys

import pytest

from topomap_nav.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def pipeline(d, seed=3):
    """gen -> collect -> train-gen -> train-ctrl -> eval, at toy scale."""
    assert run("gen-maze", "--size", 9, "--seed", seed, "--out", d / "m.map") == 0
    assert run("collect-data", "--map", d / "m.map", "--samples", 200, "--seed", seed, "--out", d / "d.jsonl") == 0
    assert run("train-gen", "--data", d / "d.jsonl", "--epochs", 2, "--seed", seed, "--out", d / "gen.json") == 0
    assert run("train-ctrl", "--map", d / "m.map", "--gen", d / "gen.json", "--steps", 1500, "--batch", 32, "--seed", seed, "--out", d / "ctrl.json") == 0
    assert run(
        "eval", "--map", d / "m.map", "--controller", d / "ctrl.json", "--gen", d / "gen.json",
        "--methods", "OursOracle,OursPred,Ours2DMap,OursNoMap,Random", "--distances", "1,5",
        "--tasks-per-distance", 3, "--runs", 2, "--seed", seed, "--out", d / "res" / "eval",
    ) == 0


def test_gen_maze_deterministic(tmp_path):
    assert run("gen-maze", "--size", 13, "--seed", 1, "--out", tmp_path / "a.map") == 0
    assert run("gen-maze", "--size", 13, "--seed", 1, "--out", tmp_path / "b.map") == 0
    assert (tmp_path / "a.map").read_bytes() == (tmp_path / "b.map").read_bytes()
    man = json.loads((tmp_path / "a.map.manifest.json").read_text())
    assert man["command"] == "gen-maze" and man["seed"] == 1 and "a.map" in next(iter(man["outputs"]))


def test_missing_required_flag(tmp_path, capsys):
    assert run("eval", "--map", "x.map", "--out", tmp_path / "r") == 1
    assert "--controller" in capsys.readouterr().err


def test_unknown_flag_and_command(capsys):
    assert run("gen-maze", "--size", 5, "--out", "x", "--bogus") == 1
    assert run("nonsense") == 1
    assert run("eval", "--controller", "c", "--out", "o", "--methods", "HER") == 1
    assert "HER" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    assert run("gen-maze", "--size", 8, "--seed", 0, "--out", tmp_path / "m.map") == 2
    assert run("eval", "--controller", tmp_path / "nope.json", "--map", tmp_path / "nope.map", "--out", tmp_path / "r") == 2
    assert run("eval", "--controller", "c.json", "--out", tmp_path / "r") == 1


def test_pipeline_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    pipeline(a)
    pipeline(b)
    for name in ("m.map", "d.jsonl", "gen.json", "ctrl.json", "res/eval.csv", "res/eval.plot.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = list(csv.DictReader(open(a / "res" / "eval.csv")))
    assert len(rows) == 5 * 2 * 2
    assert (a / "res" / "eval.png").exists() and (a / "res" / "eval.csv.manifest.json").exists()
    man = json.loads((a / "res" / "eval.csv.manifest.json").read_text())
    assert any(k.endswith("ctrl.json") for k in man["inputs"])


def test_other_subcommands(tmp_path):
    d = tmp_path
    pipeline(d, seed=5)
    assert run("corrupt-map", "--map", d / "m.map", "--proportion", 0.3, "--mode", "mixed", "--seed", 1, "--out", d / "r.map") == 0
    assert run(
        "sweep-corruption", "--map", d / "m.map", "--controller", d / "ctrl.json", "--gen", d / "gen.json",
        "--distances", "1,5", "--tasks-per-distance", 2, "--proportion", "0,0.5", "--out", d / "sw", "--no-figure",
    ) == 0
    labels = {r["method"] for r in csv.DictReader(open(d / "sw.csv"))}
    assert labels == {"OursOracle[mixed=0.00]", "OursOracle[mixed=0.50]"}
    assert run("viz-graph", "--map", d / "r.map", "--out", d / "g.svg") == 0
    assert run("viz-graph", "--map", d / "r.map", "--out", d / "g.png") == 0
    assert run("viz-episode", "--map", d / "m.map", "--rough", d / "r.map", "--controller", d / "ctrl.json", "--generator", "oracle", "--distances", 5, "--out", d / "ep.png") == 0
    events = [json.loads(x)["event"] for x in (d / "ep.trace.jsonl").read_text().splitlines()]
    assert events[0] == "plan"
    assert run("render-obs", "--map", d / "m.map", "--cell", "1,1", "--out", d / "o.json") == 0
    assert len(json.loads((d / "o.json").read_text())["obs"]) == 40
    assert run("render-obs", "--map", d / "m.map", "--cell", "1,1", "--out", d / "o.png") == 0
    for f in ("r.map", "sw.csv", "g.svg", "g.png", "ep.png", "o.json", "o.png"):
        assert (d / (f + ".manifest.json")).exists(), f


def test_entry_point_module(tmp_path):
    out = subprocess.run([sys.executable, "-m", "topomap_nav.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()


def test_output_directories_are_created(tmp_path):
    out = tmp_path / "deep" / "er" / "m.map"
    assert run("gen-maze", "--size", 7, "--seed", 0, "--out", out) == 0
    assert out.is_file()

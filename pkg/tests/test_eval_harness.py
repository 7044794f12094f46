import csv
import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from topomap_nav.errors import ConfigurationError, ParameterError
from topomap_nav.eval_harness import (
    CSV_FIELDS,
    ExperimentConfig,
    Method,
    Models,
    SuccessTable,
    aggregate,
    assert_disjoint,
    corruption_sweep,
    maze_id,
    read_results,
    run_method,
    sample_tasks,
    write_results,
)
from topomap_nav.maze_world import Action, CorruptionMode, bfs_distance, generate_maze, neighbors4
from topomap_nav.navigator import NavConfig, ScriptedController

ORACLE_NAV = NavConfig(generator_mode="oracle")


def table(rates, method="M", seed=0, n=4):
    return SuccessTable(method, "m", 13, seed, seed, {d: (round(r * n), n) for d, r in rates.items()})


class TestSampleTasks:
    def test_distance_zero(self, maze13):
        ts = sample_tasks(maze13, [0], 10, seed=1)
        assert len(ts.tasks) == 10 and all(a == b for a, b, _ in ts.tasks)

    def test_verified_and_counted(self, maze13):
        ts = sample_tasks(maze13, [1, 5, 10, 15, 20], 25, seed=3)
        assert len(ts.tasks) == 125
        for a, b, d in ts.tasks:
            assert bfs_distance(maze13, a, b) == d

    def test_infeasible_bucket_dropped(self, maze13, caplog):
        with caplog.at_level(logging.WARNING):
            ts = sample_tasks(maze13, [5, 59], 5, seed=0)
        assert ts.dropped == [59] and ts.distances == [5]
        assert "distance 59" in caplog.text

    def test_deterministic(self, maze13):
        assert sample_tasks(maze13, [5, 10], 7, seed=9).tasks == sample_tasks(maze13, [5, 10], 7, seed=9).tasks
        assert sample_tasks(maze13, [5, 10], 7, seed=9).tasks != sample_tasks(maze13, [5, 10], 7, seed=10).tasks

    def test_errors(self, maze13):
        with pytest.raises(ParameterError):
            sample_tasks(maze13, [], 5)


class TestAggregate:
    def test_single(self):
        agg = aggregate([table({1: 0.75, 5: 0.5})])
        assert agg.mean == [0.75, 0.5] and agg.stderr == [0.0, 0.0]

    def test_two_seeds(self):
        agg = aggregate([table({1: 0.8}, n=5), table({1: 1.0}, n=5)])
        assert agg.mean[0] == pytest.approx(0.9)
        assert agg.stderr[0] == pytest.approx(0.1)

    @given(st.permutations(range(4)))
    def test_order_invariant(self, perm):
        ts = [table({1: r, 5: 1 - r}, seed=i) for i, r in enumerate([0.0, 0.25, 0.5, 1.0])]
        a = aggregate(ts)
        b = aggregate([ts[i] for i in perm])
        assert a.mean == b.mean and a.stderr == b.stderr

    def test_mismatch(self):
        with pytest.raises(ParameterError):
            aggregate([table({1: 1.0}), table({5: 1.0})])


class TestRunMethod:
    def test_missing_models(self, maze13):
        ts = sample_tasks(maze13, [1], 2)
        for m in (Method.OURS_ORACLE, Method.OURS_NO_MAP, Method.FLAT_GC):
            with pytest.raises(ConfigurationError):
                run_method(m, maze13, ts, Models())

    def test_perfect_components_succeed_everywhere(self, maze13):
        ts = sample_tasks(maze13, [1, 5, 10, 15, 20], 10, seed=0)
        for m in (Method.OURS_ORACLE, Method.OURS_2D_MAP):
            t = run_method(m, maze13, ts, Models(), ORACLE_NAV, controller=ScriptedController(maze13))
            assert all(r == 1.0 for r in t.rates.values())

    def test_random_matches_hitting_probability(self, maze13):
        ts = sample_tasks(maze13, [1], 200, seed=4)
        got = run_method(Method.RANDOM, maze13, ts, Models(), eval_seed=0).rates[1]
        # exact probability that a uniform random walk visits the goal within 100 steps
        expected = []
        for a, b, _ in ts.tasks:
            p = {a: 1.0}
            hit = 0.0
            for _ in range(100):
                nxt = {}
                for c, w in p.items():
                    for act in Action:
                        dx, dy = act.delta
                        d = (c[0] + dx, c[1] + dy)
                        d = d if maze13.is_free(d) else c
                        nxt[d] = nxt.get(d, 0.0) + w / 4
                hit += nxt.pop(b, 0.0)
                p = nxt
            expected.append(hit)
        mu = float(np.mean(expected))
        sigma = np.sqrt(np.sum(np.array(expected) * (1 - np.array(expected)))) / len(expected)
        assert abs(got - mu) < 3 * sigma + 1e-9
        assert mu > 0.85

    def test_deterministic(self, maze13):
        ts = sample_tasks(maze13, [1, 5], 10, seed=2)
        a = run_method(Method.RANDOM, maze13, ts, Models(), eval_seed=5)
        b = run_method(Method.RANDOM, maze13, ts, Models(), eval_seed=5)
        assert a.counts == b.counts

    def test_no_map_scripted_is_perfect(self, maze13):
        ts = sample_tasks(maze13, [5, 10], 5, seed=2)
        t = run_method(Method.OURS_NO_MAP, maze13, ts, Models(), controller=ScriptedController(maze13))
        assert all(r == 1.0 for r in t.rates.values())


class TestSweep:
    def test_zero_matches_uncorrupted(self, maze13):
        ts = sample_tasks(maze13, [5, 10], 6, seed=1)
        ctrl = ScriptedController(maze13, [((1, 1), (1, 2))])
        base = run_method(Method.OURS_ORACLE, maze13, ts, Models(), ORACLE_NAV, eval_seed=3, controller=ctrl)
        fam = corruption_sweep(maze13, ts, Models(), (0.0,), nav=ORACLE_NAV, eval_seed=3, controller=ScriptedController(maze13, [((1, 1), (1, 2))]))
        assert fam[(0.0, CorruptionMode.MIXED)].counts == base.counts
        assert fam[(0.0, CorruptionMode.MIXED)].method == "OursOracle[mixed=0.00]"

    def test_all_corridors_walled(self, maze13):
        ts = sample_tasks(maze13, [1, 5], 5, seed=1)
        fam = corruption_sweep(maze13, ts, Models(), (1.0,), ("c2w",), ORACLE_NAV, flip_prob=1.0, controller=ScriptedController(maze13))
        assert all(r == 0.0 for r in fam[(1.0, CorruptionMode.CORRIDOR_TO_WALL)].rates.values())


class TestResults:
    def tables(self):
        return [
            SuccessTable(m, "maze13_s2", 13, s, s, {1: (s + 1, 4), 5: (1, 4)})
            for m in ("OursOracle", "Random")
            for s in range(3)
        ]

    def test_round_trip(self, tmp_path):
        ts = self.tables()
        files = write_results(ts, tmp_path / "res", figure=False)
        back = read_results(files["csv"])
        key = lambda t: (t.method, t.train_seed)
        assert sorted(back, key=key) == sorted(ts, key=key)

    def test_row_count_and_header(self, tmp_path):
        files = write_results(self.tables(), tmp_path / "res.csv", figure=False)
        rows = list(csv.reader(open(files["csv"])))
        assert rows[0] == CSV_FIELDS
        assert len(rows) - 1 == 2 * 2 * 3

    def test_plot_description_and_figure(self, tmp_path):
        files = write_results(self.tables(), tmp_path / "res")
        doc = json.loads(files["plot"].read_text())
        assert [s["label"] for s in doc["series"]] == ["OursOracle", "Random"]
        assert doc["series"][0]["x"] == [1, 5]
        assert files["png"].read_bytes()[:4] == b"\x89PNG"

    def test_deterministic_bytes(self, tmp_path):
        a = write_results(self.tables(), tmp_path / "a", figure=False)
        b = write_results(self.tables()[::-1], tmp_path / "b", figure=False)
        assert a["csv"].read_bytes() == b["csv"].read_bytes()
        assert a["plot"].read_bytes() == b["plot"].read_bytes()

    def test_unwritable(self, tmp_path):
        (tmp_path / "f").write_text("")
        with pytest.raises(OSError):
            write_results(self.tables(), tmp_path / "f" / "res", figure=False)


def test_disjointness():
    assert_disjoint([maze_id(13, 0)], [maze_id(13, 1)])
    with pytest.raises(ConfigurationError):
        assert_disjoint([maze_id(13, 0), maze_id(13, 1)], [maze_id(13, 1)])


def test_experiment_config_coerces_method():
    assert ExperimentConfig("FlatGC").method is Method.FLAT_GC
    with pytest.raises(ValueError):
        ExperimentConfig("HER")


def test_unseen_evaluation_keeps_models_and_checks_split(maze13):
    from topomap_nav.eval_harness import unseen_evaluation
    from topomap_nav.local_controller import init_controller

    ctrl = init_controller(40, hidden=8, seed=0)
    before = [q.copy() for q in ctrl.online_params()]
    models = Models(controller=ctrl, train_maze_ids=[maze_id(15, 0)])
    tables = unseen_evaluation(models, [17, 19], [1], [Method.OURS_NO_MAP], distances=[1, 5], n_per_distance=3)
    assert [t.maze_id for t in tables] == ["maze17_s1", "maze19_s1"]
    assert all(np.array_equal(a, b) for a, b in zip(before, ctrl.online_params()))
    with pytest.raises(ConfigurationError):
        unseen_evaluation(models, [15], [0], [Method.OURS_NO_MAP])
    scripted = unseen_evaluation(Models(), [17], [2], [Method.OURS_ORACLE], ORACLE_NAV, [1, 10], 4, controller=ScriptedController(generate_maze(2, 17)))
    assert all(r == 1.0 for r in scripted[0].rates.values())

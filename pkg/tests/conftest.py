import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from topomap_nav.maze_world import OccupancyGrid, generate_maze

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def grid_from_rows(*rows: str) -> OccupancyGrid:
    return OccupancyGrid(np.array([[1 if ch == "#" else 0 for ch in r] for r in rows], dtype=np.uint8))


@pytest.fixture
def corridor():
    """Straight east-west corridor of 5 free cells, (1,1) .. (5,1)."""
    return grid_from_rows(
        "#######",
        "#.....#",
        "#######",
        "#######",
        "#######",
        "#######",
        "#######",
    )


@pytest.fixture
def open5():
    return grid_from_rows("#####", "#...#", "#...#", "#...#", "#####")


@pytest.fixture(scope="session")
def maze13():
    return generate_maze(2, 13)


# acceptance criteria verdicts, filled in by test_acceptance.py: id -> (passed, detail)
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split("-")[1])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")

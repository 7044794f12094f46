"""Grid maze world with a panoramic ray renderer; rough maps are derived here too.

Cells are addressed as ``(x, y)`` with ``x`` the column and ``y`` the row;
grids store ``cells[y, x]`` with 1 = wall and 0 = free.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, StateError

WALL = 1
FREE = 0
N_COLORS = 4
FEATURES_PER_DIRECTION = 1 + N_COLORS
DEFAULT_DEPTH = 3


class Cell(NamedTuple):
    x: int
    y: int


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3

    @property
    def delta(self) -> tuple[int, int]:
        return _ACTION_DELTAS[self]


_ACTION_DELTAS = {
    Action.UP: (0, -1),
    Action.DOWN: (0, 1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
}


class Direction(enum.IntEnum):
    """The 8 viewing directions, in one-hot order."""

    N = 0
    NE = 1
    E = 2
    SE = 3
    S = 4
    SW = 5
    W = 6
    NW = 7

    @property
    def delta(self) -> tuple[int, int]:
        return _DIRECTION_DELTAS[self]


_DIRECTION_DELTAS = {
    Direction.N: (0, -1),
    Direction.NE: (1, -1),
    Direction.E: (1, 0),
    Direction.SE: (1, 1),
    Direction.S: (0, 1),
    Direction.SW: (-1, 1),
    Direction.W: (-1, 0),
    Direction.NW: (-1, -1),
}


def neighbors4(cell: Cell) -> list[tuple[Action, Cell]]:
    """4-neighbours in canonical action order (Up, Down, Left, Right)."""
    x, y = cell
    return [(a, Cell(x + dx, y + dy)) for a, (dx, dy) in _ACTION_DELTAS.items()]


@dataclass(eq=False)
class OccupancyGrid:
    """Square binary occupancy grid. Also used as the rough 2-D map."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
            raise ParameterError(f"grid must be square, got shape {cells.shape}")
        if not np.isin(cells, (0, 1)).all():
            raise ParameterError("grid cells must be 0 or 1")
        self.cells = cells.astype(np.uint8, copy=True)

    @property
    def n(self) -> int:
        return int(self.cells.shape[0])

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash(self.cells.tobytes())

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.n and 0 <= cell[1] < self.n

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and self.cells[cell[1], cell[0]] == FREE

    def free_cells(self) -> list[Cell]:
        ys, xs = np.nonzero(self.cells == FREE)
        return sorted((Cell(int(x), int(y)) for x, y in zip(xs, ys)), key=lambda c: (c[1], c[0]))

    def copy(self) -> OccupancyGrid:
        return OccupancyGrid(self.cells.copy())

    def to_text(self) -> str:
        rows = ["".join("#" if v else "." for v in row) for row in self.cells]
        return f"MAP v1 {self.n}\n" + "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> OccupancyGrid:
        lines = text.split("\n")
        header = lines[0].split()
        if len(header) != 3 or header[:2] != ["MAP", "v1"]:
            raise ParameterError(f"bad map header: {lines[0]!r}")
        n = int(header[2])
        rows = lines[1 : 1 + n]
        if len(rows) != n or any(len(r) != n or set(r) - {"#", "."} for r in rows):
            raise ParameterError("map body does not match header size")
        if lines[1 + n :] != [""]:
            raise ParameterError("map file must end with exactly one newline")
        return cls(np.array([[1 if ch == "#" else 0 for ch in r] for r in rows], dtype=np.uint8))


def save_map(grid: OccupancyGrid, path) -> None:
    Path(path).write_text(grid.to_text())


def load_map(path) -> OccupancyGrid:
    return OccupancyGrid.from_text(Path(path).read_text())


def is_connected(grid: OccupancyGrid) -> bool:
    free = grid.free_cells()
    if not free:
        return False
    seen = {free[0]}
    queue = deque([free[0]])
    while queue:
        c = queue.popleft()
        for _, nb in neighbors4(c):
            if nb not in seen and grid.is_free(nb):
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(free)


def check_maze(grid: OccupancyGrid) -> None:
    """Raise ParameterError unless ``grid`` satisfies the true-maze invariants."""
    c = grid.cells
    if not (c[0].all() and c[-1].all() and c[:, 0].all() and c[:, -1].all()):
        raise ParameterError("border cells must all be walls")
    if not is_connected(grid):
        raise ParameterError("free cells are not 4-connected")


def generate_maze(seed: int, n: int, loop_prob: float = 0.1) -> OccupancyGrid:
    """Recursive-backtracker maze on odd cells, then open extra walls to add loops."""
    if not isinstance(n, (int, np.integer)) or n < 5 or n % 2 == 0:
        raise ParameterError(f"maze size must be an odd integer >= 5, got {n!r}")
    rng = np.random.default_rng(seed)
    cells = np.ones((n, n), dtype=np.uint8)
    start = (1, 1)
    cells[1, 1] = FREE
    stack = [start]
    steps = ((0, -2), (0, 2), (-2, 0), (2, 0))
    while stack:
        x, y = stack[-1]
        options = [
            (x + dx, y + dy)
            for dx, dy in steps
            if 0 < x + dx < n - 1 and 0 < y + dy < n - 1 and cells[y + dy, x + dx] == WALL
        ]
        if not options:
            stack.pop()
            continue
        nx, ny = options[rng.integers(len(options))]
        cells[(y + ny) // 2, (x + nx) // 2] = FREE
        cells[ny, nx] = FREE
        stack.append((nx, ny))

    # Walls sitting between two odd cells; opening one joins two corridors.
    for y in range(1, n - 1):
        for x in range(1, n - 1):
            if cells[y, x] == WALL and (x % 2) != (y % 2) and rng.random() < loop_prob:
                cells[y, x] = FREE
    return OccupancyGrid(cells)


def step(grid: OccupancyGrid, s: Cell, a: Action) -> Cell:
    if not grid.is_free(s):
        raise StateError(f"agent at {tuple(s)} is not on a free cell")
    dx, dy = Action(a).delta
    nxt = Cell(s[0] + dx, s[1] + dy)
    return nxt if grid.is_free(nxt) else Cell(*s)


def _mix(v: int) -> int:
    # splitmix64 finaliser
    v &= 0xFFFFFFFFFFFFFFFF
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return v ^ (v >> 31)


def wall_color(palette_seed: int | None, cell: Cell) -> int:
    """Colour index of a wall cell; ``palette_seed=None`` means untextured (colour 0)."""
    if palette_seed is None:
        return 0
    h = _mix(_mix(int(palette_seed) + 0x9E3779B97F4A7C15) ^ (int(cell[0]) * 0x10001 + int(cell[1])))
    return int(h % N_COLORS)


def render_direction(
    grid: OccupancyGrid,
    s: Cell,
    d: Direction,
    depth: int = DEFAULT_DEPTH,
    palette_seed: int | None = 0,
) -> np.ndarray:
    """Cast a ray from ``s`` along ``d``; returns ``[hit_dist/depth, onehot colour]``."""
    if not grid.is_free(s):
        raise StateError(f"cannot render from wall cell {tuple(s)}")
    if depth < 1:
        raise ParameterError("depth must be >= 1")
    out = np.zeros(FEATURES_PER_DIRECTION)
    out[0] = 1.0
    dx, dy = Direction(d).delta
    for k in range(1, depth + 1):
        c = Cell(s[0] + k * dx, s[1] + k * dy)
        if not grid.in_bounds(c) or grid.cells[c[1], c[0]] == WALL:
            out[0] = k / depth
            out[1 + wall_color(palette_seed, c)] = 1.0
            break
    return out


def render_panorama(
    grid: OccupancyGrid,
    s: Cell,
    depth: int = DEFAULT_DEPTH,
    palette_seed: int | None = 0,
) -> np.ndarray:
    """Concatenated per-direction slices in canonical direction order, shape (8*F,)."""
    return np.concatenate([render_direction(grid, s, d, depth, palette_seed) for d in Direction])


def panorama_table(
    grid: OccupancyGrid, depth: int = DEFAULT_DEPTH, palette_seed: int | None = 0
) -> dict[Cell, np.ndarray]:
    """Panorama of every free cell. Rendering is deterministic, so callers cache this."""
    return {c: render_panorama(grid, c, depth, palette_seed) for c in grid.free_cells()}


def derive_rough_map(grid: OccupancyGrid) -> OccupancyGrid:
    return grid.copy()


class CorruptionMode(str, enum.Enum):
    WALL_TO_CORRIDOR = "w2c"
    CORRIDOR_TO_WALL = "c2w"
    MIXED = "mixed"


@dataclass(frozen=True)
class CorruptionSpec:
    proportion: float
    mode: CorruptionMode = CorruptionMode.MIXED
    flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.proportion <= 1.0:
            raise ParameterError(f"proportion must be in [0, 1], got {self.proportion}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ParameterError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        object.__setattr__(self, "mode", CorruptionMode(self.mode))


def corrupt_map(rough: OccupancyGrid, spec: CorruptionSpec) -> OccupancyGrid:
    """Flip a random sample of interior cells; border cells are never touched."""
    cells = rough.cells.copy()
    n = rough.n
    interior = np.zeros_like(cells, dtype=bool)
    interior[1 : n - 1, 1 : n - 1] = True
    if spec.mode is CorruptionMode.WALL_TO_CORRIDOR:
        mask = interior & (cells == WALL)
    elif spec.mode is CorruptionMode.CORRIDOR_TO_WALL:
        mask = interior & (cells == FREE)
    else:
        mask = interior
    ys, xs = np.nonzero(mask)
    k = int(np.floor(spec.proportion * len(ys)))
    rng = np.random.default_rng(spec.seed)
    picked = rng.choice(len(ys), size=k, replace=False) if k else np.empty(0, dtype=int)
    flips = rng.random(k) < spec.flip_prob
    for idx in picked[flips]:
        cells[ys[idx], xs[idx]] ^= 1
    return OccupancyGrid(cells)


def extract_patch(rough: OccupancyGrid, s: Cell) -> np.ndarray:
    """3x3 crop centred on ``s``; anything outside the map reads as wall."""
    if not rough.in_bounds(s):
        raise ParameterError(f"cell {tuple(s)} outside map")
    padded = np.pad(rough.cells, 1, constant_values=WALL)
    x, y = s
    return padded[y : y + 3, x : x + 3].copy()


def bfs_distances_from(grid: OccupancyGrid, a: Cell) -> dict[Cell, int]:
    """Shortest 4-connected distance from ``a`` to every reachable free cell."""
    dist = {Cell(*a): 0}
    queue = deque([Cell(*a)])
    while queue:
        c = queue.popleft()
        for _, nb in neighbors4(c):
            if nb not in dist and grid.is_free(nb):
                dist[nb] = dist[c] + 1
                queue.append(nb)
    return dist


def bfs_distance(grid: OccupancyGrid, a: Cell, b: Cell) -> int | None:
    """Shortest-path length between free cells, or ``None`` when disconnected."""
    for c in (a, b):
        if not grid.is_free(c):
            raise ParameterError(f"cell {tuple(c)} is not free")
    return bfs_distances_from(grid, a).get(Cell(*b))

"""Dynamic topological map over feasible 3x3 map patches.

Nodes are free cells of the rough map; directed edges join 4-adjacent nodes and
start out optimistically ``ASSUMED``. The navigator confirms edges it crosses
and deletes edges where the local controller fails. Each direction is tracked
separately since the controller need not behave symmetrically.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import ParameterError, StateError
from .maze_world import Cell, OccupancyGrid, extract_patch, neighbors4

log = logging.getLogger(__name__)


class EdgeStatus(str, enum.Enum):
    ASSUMED = "Assumed"
    CONFIRMED = "Confirmed"
    DELETED = "Deleted"


class AlreadyAtGoal(ParameterError):
    """``next_landmark`` was asked for a landmark while already at the goal."""


@dataclass
class TopoGraph:
    """Change ``edges`` only through the methods below (or call ``invalidate``):
    shortest-path trees are cached per start node."""

    nodes: dict[Cell, np.ndarray] = field(default_factory=dict)
    edges: dict[tuple[Cell, Cell], EdgeStatus] = field(default_factory=dict)
    _trees: dict = field(default_factory=dict, repr=False, compare=False)

    def copy(self) -> TopoGraph:
        return TopoGraph(dict(self.nodes), dict(self.edges))

    def invalidate(self) -> None:
        self._trees.clear()

    def status(self, i: Cell, j: Cell) -> EdgeStatus | None:
        return self.edges.get((Cell(*i), Cell(*j)))

    def live_successors(self, c: Cell) -> list[Cell]:
        """Non-deleted out-neighbours in canonical order (Up, Down, Left, Right)."""
        out = []
        for _, nb in neighbors4(c):
            st = self.edges.get((c, nb))
            if st is not None and st is not EdgeStatus.DELETED:
                out.append(nb)
        return out

    def _check_node(self, c: Cell) -> Cell:
        c = Cell(*c)
        if c not in self.nodes:
            raise ParameterError(f"{tuple(c)} is not a graph node")
        return c

    def plan(self, s: Cell, goal: Cell) -> list[Cell] | None:
        """Shortest path ``s -> goal`` (start excluded, goal included), or None.

        Unit-weight Dijkstra, run as a breadth-first search; expanding
        neighbours in canonical order makes ties deterministic.
        """
        s, goal = self._check_node(s), self._check_node(goal)
        if s == goal:
            return []
        parent = self._tree(s)
        if goal not in parent:
            return None
        path = [goal]
        while path[-1] != s:
            path.append(parent[path[-1]])
        path.pop()
        return path[::-1]

    def _tree(self, s: Cell) -> dict[Cell, Cell]:
        tree = self._trees.get(s)
        if tree is None:
            if len(self._trees) >= 4096:
                self._trees.clear()
            tree = {s: s}
            queue = deque([s])
            while queue:
                c = queue.popleft()
                for nb in self.live_successors(c):
                    if nb not in tree:
                        tree[nb] = c
                        queue.append(nb)
            self._trees[s] = tree
        return tree

    def next_landmark(self, s: Cell, goal: Cell) -> tuple[Cell, np.ndarray] | None:
        path = self.plan(s, goal)
        if path is None:
            return None
        if not path:
            raise AlreadyAtGoal(f"already at goal {tuple(goal)}")
        return path[0], self.nodes[path[0]]

    def remove_edge(self, i: Cell, j: Cell) -> bool:
        """Delete the directed edge ``i -> j``; the reverse edge is left alone.

        Returns False (and logs a warning) when the edge does not exist.
        """
        key = (Cell(*i), Cell(*j))
        if key not in self.edges:
            log.warning("remove_edge: no edge %s -> %s", tuple(i), tuple(j))
            return False
        if self.edges[key] is not EdgeStatus.DELETED:
            self.edges[key] = EdgeStatus.DELETED
            self._trees.clear()
        return True

    def mark_traversed(self, i: Cell, j: Cell) -> None:
        key = (Cell(*i), Cell(*j))
        st = self.edges.get(key)
        if st is None:
            raise ParameterError(f"no edge {tuple(i)} -> {tuple(j)}")
        if st is EdgeStatus.DELETED:
            raise StateError(f"edge {tuple(i)} -> {tuple(j)} is deleted")
        self.edges[key] = EdgeStatus.CONFIRMED

    def count(self, status: EdgeStatus) -> int:
        return sum(1 for st in self.edges.values() if st is status)

    def deleted_edges(self) -> set[tuple[Cell, Cell]]:
        return {k for k, st in self.edges.items() if st is EdgeStatus.DELETED}

    def pair_kinds(self) -> tuple[list[tuple[Cell, Cell]], list[tuple[Cell, Cell]]]:
        """Split adjacent node pairs into (both-ways, one-way) by live edges.

        One-way pairs are returned oriented along their live direction.
        """
        both, one = [], []
        for (i, j) in self.edges:
            if (i[1], i[0]) > (j[1], j[0]):
                continue
            f = self.edges.get((i, j), EdgeStatus.DELETED) is not EdgeStatus.DELETED
            b = self.edges.get((j, i), EdgeStatus.DELETED) is not EdgeStatus.DELETED
            if f and b:
                both.append((i, j))
            elif f:
                one.append((i, j))
            elif b:
                one.append((j, i))
        return both, one

    def dump(self) -> str:
        lines = ["TOPO v1"]
        for (i, j), st in sorted(self.edges.items(), key=lambda kv: (kv[0][0][1], kv[0][0][0], kv[0][1][1], kv[0][1][0])):
            lines.append(f"EDGE {i[0]},{i[1]} -> {j[0]},{j[1]} {st.value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str, rough: OccupancyGrid) -> TopoGraph:
        lines = text.strip("\n").split("\n")
        if lines[0] != "TOPO v1":
            raise ParameterError(f"bad graph header {lines[0]!r}")
        g = init_graph(rough)
        g.edges = {}
        for line in lines[1:]:
            _, a, _, b, st = line.split()
            i = Cell(*map(int, a.split(",")))
            j = Cell(*map(int, b.split(",")))
            g.edges[(i, j)] = EdgeStatus(st)
        g.invalidate()
        return g

    def visualize_svg(self, grid: OccupancyGrid | None = None, scale: int = 24) -> str:
        """SVG with blue lines for both-ways pairs and red arrows for one-way pairs."""
        n = grid.n if grid is not None else 1 + max((max(c) for c in self.nodes), default=0)
        size = n * scale
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
            "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"6\" "
            'markerHeight="6" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="red"/></marker></defs>',
        ]
        if grid is not None:
            for y in range(n):
                for x in range(n):
                    if grid.cells[y, x]:
                        parts.append(
                            f'<rect x="{x * scale}" y="{y * scale}" width="{scale}" height="{scale}" fill="#555"/>'
                        )
        both, one = self.pair_kinds()

        def centre(c):
            return c[0] * scale + scale / 2, c[1] * scale + scale / 2

        for i, j in both:
            (x1, y1), (x2, y2) = centre(i), centre(j)
            parts.append(
                f'<line class="both" x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="blue" stroke-width="2"/>'
            )
        for i, j in one:
            (x1, y1), (x2, y2) = centre(i), centre(j)
            parts.append(
                f'<line class="oneway" x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="red" '
                'stroke-width="2" marker-end="url(#arrow)"/>'
            )
        for c in self.nodes:
            x, y = centre(c)
            parts.append(f'<circle cx="{x}" cy="{y}" r="{scale / 8}" fill="black"><title>{escape(str(tuple(c)))}</title></circle>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    def visualize_ascii(self, grid: OccupancyGrid | None = None) -> str:
        """Text rendering on a doubled lattice: ``o`` nodes, ``-``/``|`` both ways, ``<>^v`` one way."""
        n = grid.n if grid is not None else 1 + max((max(c) for c in self.nodes), default=0)
        canvas = [[" "] * (2 * n - 1) for _ in range(2 * n - 1)]
        for y in range(n):
            for x in range(n):
                if Cell(x, y) in self.nodes:
                    canvas[2 * y][2 * x] = "o"
                elif grid is not None and grid.cells[y, x]:
                    canvas[2 * y][2 * x] = "#"
        both, one = self.pair_kinds()
        for i, j in both:
            canvas[i[1] + j[1]][i[0] + j[0]] = "-" if i[1] == j[1] else "|"
        for i, j in one:
            dx, dy = j[0] - i[0], j[1] - i[1]
            canvas[i[1] + j[1]][i[0] + j[0]] = {(1, 0): ">", (-1, 0): "<", (0, 1): "v", (0, -1): "^"}[(dx, dy)]
        return "\n".join("".join(r).rstrip() for r in canvas) + "\n"


def init_graph(rough: OccupancyGrid) -> TopoGraph:
    """One node per free cell; both directed edges between every adjacent free pair."""
    g = TopoGraph()
    for c in rough.free_cells():
        g.nodes[c] = extract_patch(rough, c)
    for c in g.nodes:
        for _, nb in neighbors4(c):
            if nb in g.nodes:
                g.edges[(c, nb)] = EdgeStatus.ASSUMED
    return g


def save_graph(g: TopoGraph, path) -> None:
    Path(path).write_text(g.dump())

"""Heap-based reference planners on 8-connected grids with octile costs.

Dijkstra (optimality oracle), A* / weighted A*, and Jump Point Search.
Straight moves cost 1, diagonal moves cost sqrt(2), and diagonal motion past
an obstacle corner is permitted; the octile heuristic is admissible and
consistent under this model.

A* keeps its per-node score as (g + h) + bias with h read from a precomputed
heuristic matrix and bias = (weight - 1) * h, and breaks score ties by
(score, h, row-major index). The differentiable search kernel reproduces the
identical arithmetic on whole matrices, which is what makes trace-level
comparisons between the two exact rather than approximate.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import UnreachableGoalError
from .grid import Coord, PlanInstance

SQRT2 = math.sqrt(2.0)

# Row-major scan of the 3x3 neighborhood, center excluded. Relaxation order
# is part of the planner contract: with strict-improvement updates the first
# equal-cost offer wins, so every search in the package must use this order.
NEIGHBOR_OFFSETS = (
    (-1, -1, SQRT2), (-1, 0, 1.0), (-1, 1, SQRT2),
    (0, -1, 1.0), (0, 1, 1.0),
    (1, -1, SQRT2), (1, 0, 1.0), (1, 1, SQRT2),
)

STRAIGHT_DIRS = ((-1, 0), (1, 0), (0, -1), (0, 1))
DIAGONAL_DIRS = ((-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass(frozen=True)
class SearchResult:
    """Output of one planner run.

    path_matrix marks path cells, closed_matrix marks every visited cell,
    and expansions equals the popcount of closed_matrix. expansion_order
    lists visited cells in visit order; jump_pops (jump point search only)
    counts heap pops, which is the smaller number that shows the algorithm's
    pruning even though its scans touch many cells.
    """

    path: tuple[Coord, ...]
    path_matrix: np.ndarray
    closed_matrix: np.ndarray
    expansions: int
    elapsed: float
    cost: float
    expansion_order: tuple[Coord, ...] = field(repr=False, default=())
    jump_pops: int | None = None


def octile(a: Coord, b: Coord) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)


def octile_matrix(shape: tuple[int, int], goal: Coord) -> np.ndarray:
    """Octile distance from every cell to goal, as a float64 matrix."""
    rows = np.abs(np.arange(shape[0], dtype=np.float64) - goal[0])[:, None]
    cols = np.abs(np.arange(shape[1], dtype=np.float64) - goal[1])[None, :]
    return np.maximum(rows, cols) + (SQRT2 - 1.0) * np.minimum(rows, cols)


def weighted_bias(h_matrix: np.ndarray, weight: float) -> np.ndarray:
    """Per-cell selection bias that turns plain A* into weighted A*."""
    return (weight - 1.0) * h_matrix


def _reconstruct(parent: dict[int, int], start_idx: int, goal_idx: int,
                 width: int) -> list[Coord]:
    chain = [goal_idx]
    while chain[-1] != start_idx:
        chain.append(parent[chain[-1]])
    return [Coord(*divmod(i, width)) for i in reversed(chain)]


def _finish(shape, path, closed, order, cost, t0, jump_pops=None) -> SearchResult:
    path_matrix = np.zeros(shape, dtype=np.uint8)
    for cell in path:
        path_matrix[cell] = 1
    return SearchResult(
        path=tuple(path),
        path_matrix=path_matrix,
        closed_matrix=closed.astype(np.uint8),
        expansions=int(closed.sum()),
        elapsed=time.perf_counter() - t0,
        cost=cost,
        expansion_order=tuple(order),
        jump_pops=jump_pops,
    )


def astar(instance: PlanInstance, weight: float = 1.0) -> SearchResult:
    """A* with octile heuristic; weight > 1 gives the greedy weighted variant."""
    if weight < 1.0:
        raise ValueError(f"weight must be >= 1, got {weight}")
    t0 = time.perf_counter()
    grid = instance.grid
    h_mat = octile_matrix(grid.shape, instance.goal)
    bias = weighted_bias(h_mat, weight)
    return _biased_search(instance, h_mat, bias, t0)


def dijkstra(instance: PlanInstance) -> SearchResult:
    """Uniform-cost search; the package's path-cost oracle."""
    t0 = time.perf_counter()
    zeros = np.zeros(instance.grid.shape, dtype=np.float64)
    return _biased_search(instance, zeros, zeros, t0)


def _biased_search(instance: PlanInstance, h_mat: np.ndarray,
                   bias: np.ndarray, t0: float) -> SearchResult:
    """Best-first search ordered by (g + h) + bias, ties by (h, index).

    Shared engine for dijkstra (h = bias = 0), A* (bias = 0), weighted A*
    (bias = (w-1)h), and arbitrary-bias runs driven by a trained model.
    Closed nodes are never reopened; lazy heap deletion with a stored-g
    staleness check.
    """
    grid = instance.grid
    height, width = grid.shape
    occ = grid.occupancy
    start_idx = instance.start.row * width + instance.start.col
    goal_idx = instance.goal.row * width + instance.goal.col

    h_flat = h_mat.reshape(-1)
    bias_flat = bias.reshape(-1)
    g: dict[int, float] = {start_idx: 0.0}
    parent: dict[int, int] = {}
    closed = np.zeros((height, width), dtype=bool)
    closed_flat = closed.reshape(-1)
    order: list[Coord] = []
    f0 = (0.0 + h_flat[start_idx]) + bias_flat[start_idx]
    heap: list[tuple[float, float, int, float]] = [(f0, float(h_flat[start_idx]), start_idx, 0.0)]

    while heap:
        _, _, idx, g_pushed = heapq.heappop(heap)
        if closed_flat[idx] or g_pushed != g[idx]:
            continue
        closed_flat[idx] = True
        r, c = divmod(idx, width)
        order.append(Coord(r, c))
        if idx == goal_idx:
            path = _reconstruct(parent, start_idx, goal_idx, width)
            return _finish(grid.shape, path, closed, order, g[goal_idx], t0)
        g_here = g[idx]
        for dr, dc, step in NEIGHBOR_OFFSETS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < height and 0 <= nc < width) or occ[nr, nc]:
                continue
            nidx = nr * width + nc
            if closed_flat[nidx]:
                continue
            cand = g_here + step
            if cand < g.get(nidx, math.inf):
                g[nidx] = cand
                parent[nidx] = idx
                f = (cand + h_flat[nidx]) + bias_flat[nidx]
                heapq.heappush(heap, (f, float(h_flat[nidx]), nidx, cand))

    raise UnreachableGoalError(
        f"goal {tuple(instance.goal)} unreachable from start {tuple(instance.start)}"
    )


def _forced_dirs(occ: np.ndarray, r: int, c: int, dr: int, dc: int):
    """Forced-neighbor directions at (r, c) when travelling along (dr, dc)."""
    height, width = occ.shape

    def free(rr, cc):
        return 0 <= rr < height and 0 <= cc < width and not occ[rr, cc]

    forced = []
    if dr == 0:
        # Horizontal travel: a blocked cell beside the path with a free
        # diagonal ahead of it forces a turn.
        for side in (-1, 1):
            if not free(r + side, c) and free(r + side, c + dc):
                forced.append((side, dc))
    elif dc == 0:
        for side in (-1, 1):
            if not free(r, c + side) and free(r + dr, c + side):
                forced.append((dr, side))
    else:
        # Diagonal travel: a blocked cell behind either natural straight
        # neighbor forces the corresponding counter-diagonal.
        if not free(r - dr, c) and free(r - dr, c + dc):
            forced.append((-dr, dc))
        if not free(r, c - dc) and free(r + dr, c - dc):
            forced.append((dr, -dc))
    return forced


def jps(instance: PlanInstance) -> SearchResult:
    """Jump point search: A* over jump points with straight-line scans.

    closed_matrix marks expanded jump points plus every cell stepped through
    by a scan, so its popcount is the honest \"search area\"; jump_pops counts
    only the heap pops.
    """
    t0 = time.perf_counter()
    grid = instance.grid
    height, width = grid.shape
    occ = grid.occupancy
    start, goal = instance.start, instance.goal
    goal_t = (goal.row, goal.col)

    visited = np.zeros((height, width), dtype=bool)
    order: list[Coord] = []

    def touch(r, c):
        if not visited[r, c]:
            visited[r, c] = True
            order.append(Coord(r, c))

    def free(r, c):
        return 0 <= r < height and 0 <= c < width and not occ[r, c]

    def jump_straight(r, c, dr, dc):
        while True:
            r, c = r + dr, c + dc
            if not free(r, c):
                return None
            touch(r, c)
            if (r, c) == goal_t or _forced_dirs(occ, r, c, dr, dc):
                return (r, c)

    def jump_diag(r, c, dr, dc):
        while True:
            r, c = r + dr, c + dc
            if not free(r, c):
                return None
            touch(r, c)
            if (r, c) == goal_t or _forced_dirs(occ, r, c, dr, dc):
                return (r, c)
            if jump_straight(r, c, dr, 0) is not None or jump_straight(r, c, 0, dc) is not None:
                return (r, c)

    def successors(r, c, parent_cell):
        if parent_cell is None:
            dirs = [(dr, dc) for dr, dc, _ in NEIGHBOR_OFFSETS]
        else:
            dr = int(np.sign(r - parent_cell[0]))
            dc = int(np.sign(c - parent_cell[1]))
            if dr != 0 and dc != 0:
                dirs = [(dr, dc), (dr, 0), (0, dc)]
            else:
                dirs = [(dr, dc)]
            dirs += _forced_dirs(occ, r, c, dr, dc)
        out = []
        for dr, dc in dirs:
            jp = jump_diag(r, c, dr, dc) if dr and dc else jump_straight(r, c, dr, dc)
            if jp is not None:
                out.append(jp)
        return out

    g = {(start.row, start.col): 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    expanded: set[tuple[int, int]] = set()
    h0 = octile(start, goal)
    heap = [(h0, h0, start.row * width + start.col, (start.row, start.col), 0.0)]
    pops = 0

    while heap:
        _, _, _, cell, g_pushed = heapq.heappop(heap)
        if cell in expanded or g_pushed != g[cell]:
            continue
        expanded.add(cell)
        pops += 1
        touch(*cell)
        if cell == goal_t:
            chain = [cell]
            while chain[-1] != (start.row, start.col):
                chain.append(parent[chain[-1]])
            chain.reverse()
            path = _interpolate(chain)
            return _finish(grid.shape, path, visited, order, g[cell], t0, jump_pops=pops)
        for jp in successors(cell[0], cell[1], parent.get(cell)):
            if jp in expanded:
                continue
            cand = g[cell] + octile(Coord(*cell), Coord(*jp))
            if cand < g.get(jp, math.inf):
                g[jp] = cand
                parent[jp] = cell
                h = octile(Coord(*jp), goal)
                heapq.heappush(heap, (cand + h, h, jp[0] * width + jp[1], jp, cand))

    raise UnreachableGoalError(
        f"goal {tuple(goal)} unreachable from start {tuple(start)}"
    )


def _interpolate(chain: list[tuple[int, int]]) -> list[Coord]:
    """Expand a jump-point chain into a full cell path with unit king moves."""
    path = [Coord(*chain[0])]
    for (r0, c0), (r1, c1) in zip(chain[:-1], chain[1:]):
        dr, dc = int(np.sign(r1 - r0)), int(np.sign(c1 - c0))
        r, c = r0, c0
        while (r, c) != (r1, c1):
            r, c = r + dr, c + dc
            path.append(Coord(r, c))
    return path

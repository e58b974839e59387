"""Independent oracles shared by the test suite.

Everything here is written against plain numpy, structured differently from
the package implementations, so agreement between the two is meaningful.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

SQRT2 = math.sqrt(2.0)

# King moves with octile step costs: 4 straight at 1, 4 diagonal at sqrt(2).
KING_MOVES = [
    (-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
    (-1, -1, SQRT2), (-1, 1, SQRT2), (1, -1, SQRT2), (1, 1, SQRT2),
]


def flood_fill(occupancy: np.ndarray, start) -> np.ndarray:
    """BFS reachability mask over 8-connected free cells."""
    h, w = occupancy.shape
    seen = np.zeros((h, w), dtype=bool)
    if occupancy[start] != 0:
        return seen
    seen[start] = True
    queue = deque([tuple(start)])
    while queue:
        r, c = queue.popleft()
        for dr, dc, _ in KING_MOVES:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not seen[nr, nc] and occupancy[nr, nc] == 0:
                seen[nr, nc] = True
                queue.append((nr, nc))
    return seen


def octile_heuristic(a, b) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)


def path_step_sum(path) -> float:
    """Sum of per-step octile costs; asserts every step is a legal king move."""
    total = 0.0
    for (r0, c0), (r1, c1) in zip(path[:-1], path[1:]):
        dr, dc = abs(r1 - r0), abs(c1 - c0)
        assert max(dr, dc) == 1, f"illegal step ({r0},{c0})->({r1},{c1})"
        total += SQRT2 if dr + dc == 2 else 1.0
    return total


def assert_valid_path(occupancy: np.ndarray, path, start, goal) -> float:
    """Check a path is start->goal over free in-bounds cells with king moves."""
    assert len(path) >= 1
    assert tuple(path[0]) == tuple(start)
    assert tuple(path[-1]) == tuple(goal)
    h, w = occupancy.shape
    for r, c in path:
        assert 0 <= r < h and 0 <= c < w, f"({r},{c}) out of bounds"
        assert occupancy[r, c] == 0, f"({r},{c}) is an obstacle"
    return path_step_sum(path)


def distance_field(occupancy: np.ndarray, start) -> np.ndarray:
    """All-cells shortest octile distance from start by Bellman-Ford sweeps.

    Deliberately heap-free: repeated whole-grid relaxations until fixpoint.
    """
    h, w = occupancy.shape
    dist = np.full((h, w), np.inf)
    if occupancy[start] != 0:
        return dist
    dist[start] = 0.0
    blocked = occupancy != 0
    for _ in range(h * w):
        best = dist.copy()
        for dr, dc, cost in KING_MOVES:
            rd0, rd1 = max(0, dr), h + min(0, dr)
            cd0, cd1 = max(0, dc), w + min(0, dc)
            rs0, rs1 = max(0, -dr), h + min(0, -dr)
            cs0, cs1 = max(0, -dc), w + min(0, -dc)
            cand = np.full((h, w), np.inf)
            cand[rd0:rd1, cd0:cd1] = dist[rs0:rs1, cs0:cs1] + cost
            np.minimum(best, cand, out=best)
        best[blocked] = np.inf
        if np.array_equal(best, dist, equal_nan=True):
            return best
        dist = best
    raise AssertionError("relaxation did not converge")


def finite_difference(f, arrays, step: float = 1e-5):
    """Central-difference gradients of scalar f w.r.t. a list of arrays."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=float)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = f()
            flat[i] = keep - step
            lo = f()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def conv2d_oracle(x: np.ndarray, k: np.ndarray, padding: str = "same") -> np.ndarray:
    """Direct six-loop cross-correlation; the conv2d reference."""
    cout, cin, kh, kw = k.shape
    ph, pw = (kh // 2, kw // 2) if padding == "same" else (0, 0)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    oh, ow = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    out = np.zeros((cout, oh, ow))
    for co in range(cout):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ci in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            acc += k[co, ci, u, v] * xp[ci, i + u, j + v]
                out[co, i, j] = acc
    return out


def check_gradients(f, arrays, step: float = 1e-5, tol: float = 1e-4) -> float:
    """Compare reverse-mode gradients of scalar f(*tensors) to central FD.

    ``arrays`` must be float64 so the Tensor leaves share their buffers and
    the finite-difference perturbations are visible to the forward pass.
    Returns the worst relative error; asserts it stays under ``tol``.
    """
    from gridplan.autodiff import Tensor, no_grad

    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = f(*leaves)
    out.backward()
    analytic = [
        leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data)
        for leaf in leaves
    ]

    def scalar():
        with no_grad():
            return float(f(*leaves).data)

    numeric = finite_difference(scalar, arrays, step)
    worst = max(relative_error(a, n) for a, n in zip(analytic, numeric))
    assert worst <= tol, f"gradient mismatch: rel err {worst:.3e} > {tol}"
    return worst


def make_instances(count: int, size: int = 32, seed: int = 0, kinds=None,
                   density: float = 0.25):
    """Seeded solvable instances cycling through the map generators."""
    from gridplan.grid import generate_map, sample_instance

    if kinds is None:
        kinds = ("random-blocks", "maze", "rooms")
    out = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        grid = generate_map(kind, size, size, density=density, seed=seed + i)
        out.append(sample_instance(grid, seed=seed + 1000 + i))
    return out

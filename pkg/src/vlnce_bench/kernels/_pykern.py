"""Pure-Python kernels: grid Dijkstra fields, ray first hits, forward sweeps.

This module is the reference semantics for the compiled extension.  The two
backends must produce bit-identical outputs, so every floating-point
operation here is ordered deliberately:

* Dijkstra runs in cell units (straight edge 1.0, diagonal sqrt(2)) with a
  heap keyed by (distance, cell index) and lazy deletion; neighbors relax in
  a fixed lexicographic (dr, dc) order.  Diagonal moves are allowed only
  when both orthogonal neighbors are free (no corner cutting).
* Ray hits use exact Amanatides-Woo traversal; on a tie the column axis
  advances first.
* Forward sweeps truncate at the exact first wall hit minus a half-cell
  skin, which keeps displacement monotone in the requested distance.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

BACKEND = "pure"

_SQRT2 = math.sqrt(2.0)
# (dr, dc) in lexicographic order; relaxation order is part of the contract.
_NEIGHBORS = (
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
)


def distance_field(obstacles: np.ndarray, src_r: int, src_c: int) -> np.ndarray:
    """Dijkstra distances in cell units from (src_r, src_c) to every cell.

    `obstacles` is a uint8 grid, nonzero = blocked. Unreachable and blocked
    cells get +inf.
    """
    h, w = obstacles.shape
    obst = obstacles
    if not (0 <= src_r < h and 0 <= src_c < w) or obst[src_r, src_c]:
        raise ValueError("source cell is blocked or out of bounds")
    dist = np.full((h, w), math.inf, dtype=np.float64)
    settled = np.zeros((h, w), dtype=bool)
    dist[src_r, src_c] = 0.0
    heap: list[tuple[float, int]] = [(0.0, src_r * w + src_c)]
    while heap:
        d, idx = heapq.heappop(heap)
        r, c = idx // w, idx % w
        if settled[r, c]:
            continue
        settled[r, c] = True
        for dr, dc in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            if obst[nr, nc]:
                continue
            if dr != 0 and dc != 0:
                # no corner cutting through a blocked orthogonal pair
                if obst[r + dr, c] or obst[r, c + dc]:
                    continue
                nd = d + _SQRT2
            else:
                nd = d + 1.0
            if nd < dist[nr, nc]:
                dist[nr, nc] = nd
                heapq.heappush(heap, (nd, nr * w + nc))
    return dist


def ray_first_hits(
    obstacles: np.ndarray,
    resolution: float,
    x: float,
    y: float,
    dirs: np.ndarray,
    max_range: float,
) -> np.ndarray:
    """Exact first-hit distance along each (dx, dy) unit ray, capped.

    Rays start at (x, y), which must lie in a free cell. Returns max_range
    for rays that reach it without hitting a blocked cell.
    """
    n = dirs.shape[0]
    out = np.empty(n, dtype=np.float64)
    for j in range(n):
        out[j] = _single_ray(obstacles, resolution, x, y, dirs[j, 0], dirs[j, 1], max_range)
    return out


def _single_ray(
    obst: np.ndarray,
    res: float,
    x: float,
    y: float,
    dx: float,
    dy: float,
    max_range: float,
) -> float:
    h, w = obst.shape
    c = int(math.floor(x / res))
    r = int(math.floor(y / res))
    if dx > 0.0:
        step_c = 1
        t_max_x = ((c + 1) * res - x) / dx
        t_dx = res / dx
    elif dx < 0.0:
        step_c = -1
        t_max_x = (c * res - x) / dx
        t_dx = res / -dx
    else:
        step_c = 0
        t_max_x = math.inf
        t_dx = math.inf
    if dy > 0.0:
        step_r = 1
        t_max_y = ((r + 1) * res - y) / dy
        t_dy = res / dy
    elif dy < 0.0:
        step_r = -1
        t_max_y = (r * res - y) / dy
        t_dy = res / -dy
    else:
        step_r = 0
        t_max_y = math.inf
        t_dy = math.inf
    while True:
        if t_max_x <= t_max_y:
            t = t_max_x
            c += step_c
            t_max_x += t_dx
        else:
            t = t_max_y
            r += step_r
            t_max_y += t_dy
        if t > max_range:
            return max_range
        if r < 0 or r >= h or c < 0 or c >= w:
            return t if t < max_range else max_range
        if obst[r, c]:
            return t if t < max_range else max_range


def sweep_forward(
    obstacles: np.ndarray,
    resolution: float,
    x: float,
    y: float,
    dx: float,
    dy: float,
    dist: float,
) -> tuple[float, bool]:
    """Forward motion with half-cell skin truncation before the first wall.

    Exact traversal: moved = min(dist, first_hit - 0.5*resolution), floored
    at 0; collided reports whether truncation occurred. Monotone in dist.
    """
    skin = resolution * 0.5
    hit = _single_ray(obstacles, resolution, x, y, dx, dy, dist + skin)
    moved = hit - skin
    if moved < 0.0:
        moved = 0.0
    if moved >= dist:
        return dist, False
    return moved, True

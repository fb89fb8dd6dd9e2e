"""Occupancy-grid world: continuous poses, action execution, geodesics,
and deterministic synthetic per-frame visual features.

World files are UTF-8 JSON::

    {
      "resolution": 0.25,
      "rows": ["####", "#a.#", "#..#", "####"],
      "landmarks": {"a": "chair"},
      "episodes": [{"id": ..., "instruction": ..., "start": {"x", "y",
                    "heading_deg"}, "goal": {"x", "y"},
                    "success_radius": 3.0, "max_steps": 500}]
    }

``'#'`` is an obstacle, ``'.'`` free space, a lowercase letter a landmark
cell. Row 0 is the top of the map; cell (r, c) spans x in [c*res, (c+1)*res)
and y in [r*res, (r+1)*res). Heading 0 points along +x, counterclockwise
positive. Worlds are closed: every boundary cell must be an obstacle.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .rng import embed_token

TAU = 2.0 * math.pi

CELL_FREE = 0
CELL_OBSTACLE = 1
# landmark codes start here, assigned in sorted id order
_LANDMARK_BASE = 2

N_PATCHES = 256
GRID_SIDE = 16
FOV = math.pi / 2.0
N_RAYS = 16
DEFAULT_FEATURE_DIM = 32


class WorldError(ValueError):
    """Malformed or invalid world file / world query."""


def normalize_heading(heading: float) -> float:
    h = heading % TAU
    if h >= TAU or h < 0.0:
        h = 0.0
    return h


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    @property
    def point(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Episode:
    id: str
    instruction: str
    start: Pose
    goal: tuple[float, float]
    success_radius: float = 3.0
    max_steps: int = 500

    def __post_init__(self) -> None:
        if self.success_radius <= 0:
            raise WorldError(f"episode {self.id}: success_radius must be > 0")
        if self.max_steps <= 0:
            raise WorldError(f"episode {self.id}: max_steps must be > 0")


@dataclass(frozen=True)
class FrameOrigin:
    """Provenance of a rendered frame; enough to regenerate it exactly."""

    world_id: str
    pose: Pose
    seed: int


@dataclass(frozen=True)
class FrameFeatures:
    """Synthetic visual embedding: 256 patches (16x16 row-major) x C."""

    data: np.ndarray
    origin: FrameOrigin | None = None

    def __post_init__(self) -> None:
        if self.data.ndim != 2 or self.data.shape[0] != N_PATCHES:
            raise WorldError(f"frame features must be {N_PATCHES}xC, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise WorldError("frame features contain non-finite entries")


class GridWorld:
    """Immutable occupancy grid with landmark labels and cached geodesics."""

    def __init__(
        self,
        resolution: float,
        kinds: np.ndarray,
        landmark_names: dict[str, str],
        landmark_codes: dict[str, int],
        episodes: list[Episode],
        world_id: str,
        max_ray_range: float = 10.0,
    ) -> None:
        self.resolution = resolution
        self.kinds = kinds
        self.kinds.setflags(write=False)
        self.height, self.width = kinds.shape
        self.landmark_names = landmark_names
        self.landmark_codes = landmark_codes
        self.episodes = episodes
        self.world_id = world_id
        self.max_ray_range = max_ray_range
        self.obstacle_mask = np.ascontiguousarray((kinds == CELL_OBSTACLE).astype(np.uint8))
        self.obstacle_mask.setflags(write=False)
        self._field_cache: dict[tuple[int, int], np.ndarray] = {}
        self._embedding_cache: dict[tuple[int, int], np.ndarray] = {}
        self._free_cells: list[tuple[int, int]] | None = None

    # -- geometry ---------------------------------------------------------

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width * self.resolution and 0.0 <= y < self.height * self.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        if not self.in_bounds(x, y):
            raise WorldError(f"point ({x}, {y}) is out of bounds")
        return (int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution)))

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return ((c + 0.5) * self.resolution, (r + 0.5) * self.resolution)

    def kind_at(self, x: float, y: float) -> int:
        r, c = self.cell_of(x, y)
        return int(self.kinds[r, c])

    def is_free_point(self, x: float, y: float) -> bool:
        return self.in_bounds(x, y) and self.kind_at(x, y) != CELL_OBSTACLE

    def require_free(self, x: float, y: float) -> tuple[int, int]:
        r, c = self.cell_of(x, y)
        if self.kinds[r, c] == CELL_OBSTACLE:
            raise WorldError(f"point ({x}, {y}) lies inside an obstacle cell")
        return (r, c)

    def free_cells(self) -> list[tuple[int, int]]:
        if self._free_cells is None:
            rs, cs = np.nonzero(self.kinds != CELL_OBSTACLE)
            self._free_cells = [(int(r), int(c)) for r, c in zip(rs, cs)]
        return self._free_cells

    def landmark_cells(self) -> list[tuple[str, int, int]]:
        """(landmark id, r, c) for every landmark cell, row-major order."""
        out = []
        code_to_id = {v: k for k, v in self.landmark_codes.items()}
        rs, cs = np.nonzero(self.kinds >= _LANDMARK_BASE)
        for r, c in zip(rs, cs):
            out.append((code_to_id[int(self.kinds[r, c])], int(r), int(c)))
        return out

    def distance_field(self, r: int, c: int) -> np.ndarray:
        """Cached Dijkstra field (cell units) from cell (r, c)."""
        key = (r, c)
        cached = self._field_cache.get(key)
        if cached is None:
            cached = kernels.distance_field(self.obstacle_mask, r, c)
            cached.setflags(write=False)
            self._field_cache[key] = cached
        return cached

    def kind_token(self, code: int) -> str:
        if code == CELL_FREE:
            return "free"
        if code == CELL_OBSTACLE:
            return "obstacle"
        for lid, lcode in self.landmark_codes.items():
            if lcode == code:
                return f"landmark/{lid}"
        raise WorldError(f"unknown cell kind code {code}")

    def kind_embeddings(self, seed: int, dim: int) -> np.ndarray:
        """Embedding row per kind code, indexed by code; cached per (seed, dim)."""
        key = (seed, dim)
        table = self._embedding_cache.get(key)
        if table is None:
            n_codes = _LANDMARK_BASE + len(self.landmark_codes)
            table = np.empty((n_codes, dim), dtype=np.float64)
            for code in range(n_codes):
                table[code] = embed_token(self.kind_token(code), seed, dim)
            table.setflags(write=False)
            self._embedding_cache[key] = table
        return table


# -- loading ----------------------------------------------------------------


def load_world(text: str) -> GridWorld:
    """Parse and validate a world file; raises WorldError on any defect."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise WorldError(f"world file is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise WorldError("world file must be a JSON object")

    resolution = raw.get("resolution")
    if not isinstance(resolution, (int, float)) or resolution <= 0:
        raise WorldError("resolution must be a positive number")
    resolution = float(resolution)

    rows = raw.get("rows")
    if not isinstance(rows, list) or not rows or not all(isinstance(r, str) for r in rows):
        raise WorldError("rows must be a non-empty list of strings")
    width = len(rows[0])
    if width < 3 or len(rows) < 3:
        raise WorldError("world must be at least 3x3 to have a closed boundary")
    if any(len(r) != width for r in rows):
        raise WorldError("all rows must have equal length")

    landmarks = raw.get("landmarks", {})
    if not isinstance(landmarks, dict):
        raise WorldError("landmarks must be an object mapping id -> name")
    landmark_codes = {lid: _LANDMARK_BASE + i for i, lid in enumerate(sorted(landmarks))}

    height = len(rows)
    kinds = np.zeros((height, width), dtype=np.int16)
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == "#":
                kinds[r, c] = CELL_OBSTACLE
            elif ch == ".":
                kinds[r, c] = CELL_FREE
            elif ch.isalpha() and ch.islower():
                if ch not in landmark_codes:
                    raise WorldError(f"landmark '{ch}' at ({r}, {c}) has no name entry")
                kinds[r, c] = landmark_codes[ch]
            else:
                raise WorldError(f"unknown map character {ch!r} at ({r}, {c})")

    boundary = np.concatenate([kinds[0, :], kinds[-1, :], kinds[:, 0], kinds[:, -1]])
    if (boundary != CELL_OBSTACLE).any():
        raise WorldError("world boundary must be all obstacle ('#')")

    max_ray_range = float(raw.get("max_ray_range", 10.0))
    if max_ray_range <= 0:
        raise WorldError("max_ray_range must be positive")

    world_id = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
    world = GridWorld(
        resolution=resolution,
        kinds=kinds,
        landmark_names=dict(landmarks),
        landmark_codes=landmark_codes,
        episodes=[],
        world_id=world_id,
        max_ray_range=max_ray_range,
    )

    episodes_raw = raw.get("episodes", [])
    if not isinstance(episodes_raw, list):
        raise WorldError("episodes must be a list")
    for e in episodes_raw:
        world.episodes.append(_parse_episode(world, e))
    return world


def load_world_file(path: str) -> GridWorld:
    with open(path, encoding="utf-8") as f:
        return load_world(f.read())


def _parse_episode(world: GridWorld, raw: dict) -> Episode:
    try:
        start_raw = raw["start"]
        goal_raw = raw["goal"]
        start = Pose(
            float(start_raw["x"]),
            float(start_raw["y"]),
            math.radians(float(start_raw["heading_deg"])),
        )
        goal = (float(goal_raw["x"]), float(goal_raw["y"]))
        ep = Episode(
            id=str(raw["id"]),
            instruction=str(raw["instruction"]),
            start=start,
            goal=goal,
            success_radius=float(raw.get("success_radius", 3.0)),
            max_steps=int(raw.get("max_steps", 500)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise WorldError(f"malformed episode entry: {e}") from e
    world.require_free(start.x, start.y)
    world.require_free(goal[0], goal[1])
    if math.isinf(geodesic_distance(world, start.point, goal)):
        raise WorldError(f"episode {ep.id}: start and goal are mutually unreachable")
    return ep


# -- operations ---------------------------------------------------------------


def geodesic_distance(
    world: GridWorld, a: tuple[float, float], b: tuple[float, float]
) -> float:
    """Shortest obstacle-respecting distance between two free points.

    Grid path length over the 8-connected cell graph (diagonals cost
    sqrt(2)*resolution, no corner cutting), plus each point's straight-line
    offset to its cell center. Same-cell pairs use the plain Euclidean
    distance. Returns +inf when no path exists.
    """
    ra, ca = world.require_free(a[0], a[1])
    rb, cb = world.require_free(b[0], b[1])
    if (ra, ca) == (rb, cb):
        return math.hypot(a[0] - b[0], a[1] - b[1])
    field = world.distance_field(rb, cb)
    cells = float(field[ra, ca])
    if math.isinf(cells):
        return math.inf
    ax, ay = world.cell_center(ra, ca)
    bx, by = world.cell_center(rb, cb)
    return (
        math.hypot(a[0] - ax, a[1] - ay)
        + cells * world.resolution
        + math.hypot(b[0] - bx, b[1] - by)
    )


def euclidean_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def step(world: GridWorld, pose: Pose, action) -> tuple[Pose, bool]:
    """Execute one low-level action; returns (new pose, collided).

    Turns are exact and never collide. FORWARD moves along the heading by
    at most the requested distance, truncated to a half-cell skin before
    the first obstacle on the swept ray, so displacement is monotone in the
    request. STOP leaves the pose unchanged. Total: never raises for valid
    poses.
    """
    from .actions import ActionKind  # local import to avoid a cycle

    world.require_free(pose.x, pose.y)
    if action.kind is ActionKind.TURN_LEFT:
        return Pose(pose.x, pose.y, pose.heading + math.radians(action.value)), False
    if action.kind is ActionKind.TURN_RIGHT:
        return Pose(pose.x, pose.y, pose.heading - math.radians(action.value)), False
    if action.kind is ActionKind.STOP:
        return pose, False
    dx = math.cos(pose.heading)
    dy = math.sin(pose.heading)
    moved, collided = kernels.sweep_forward(
        world.obstacle_mask, world.resolution, pose.x, pose.y, dx, dy, action.value
    )
    return Pose(pose.x + dx * moved, pose.y + dy * moved, pose.heading), collided


def first_obstacle_distance(world: GridWorld, pose: Pose, cap: float | None = None) -> float:
    """Exact distance along the heading to the first obstacle cell."""
    if cap is None:
        cap = (world.width + world.height) * world.resolution
    dirs = np.array([[math.cos(pose.heading), math.sin(pose.heading)]], dtype=np.float64)
    return float(
        kernels.ray_first_hits(
            world.obstacle_mask, world.resolution, pose.x, pose.y, dirs, cap
        )[0]
    )


def ray_angles(heading: float) -> list[float]:
    """The 16 ray headings of the feature renderer (FOV 90 deg, centered)."""
    return [heading - FOV / 2.0 + (j + 0.5) * (FOV / N_RAYS) for j in range(N_RAYS)]


def raycast_features(
    world: GridWorld, pose: Pose, seed: int, c: int = DEFAULT_FEATURE_DIM
) -> FrameFeatures:
    """Render the deterministic 256xC synthetic visual embedding at a pose.

    Casts 16 rays over a 90 degree field of view; patch (i, j) of the 16x16
    row-major grid holds, for ray j with capped first-hit distance d_j:

    * channel 0: d_j / max_ray_range
    * channel 1: (i + 0.5) / 16
    * channels 2..C-1: unit-norm hash embedding of the cell kind under the
      sample point at fraction (i + 0.5)/16 of d_j along the ray.
    """
    if c < 3:
        raise WorldError("feature dim must be >= 3 (two scalar channels + embedding)")
    world.require_free(pose.x, pose.y)
    angles = ray_angles(pose.heading)
    dirs = np.array([[math.cos(a), math.sin(a)] for a in angles], dtype=np.float64)
    hits = kernels.ray_first_hits(
        world.obstacle_mask, world.resolution, pose.x, pose.y, dirs, world.max_ray_range
    )
    table = world.kind_embeddings(seed, c - 2)

    data = np.empty((N_PATCHES, c), dtype=np.float64)
    for j in range(N_RAYS):
        d = hits[j]
        for i in range(GRID_SIDE):
            frac = (i + 0.5) / GRID_SIDE
            px = pose.x + dirs[j, 0] * (frac * d)
            py = pose.y + dirs[j, 1] * (frac * d)
            r, col = world.cell_of(px, py)
            code = int(world.kinds[r, col])
            row = i * GRID_SIDE + j
            data[row, 0] = d / world.max_ray_range
            data[row, 1] = frac
            data[row, 2:] = table[code]
    data.setflags(write=False)
    return FrameFeatures(data=data, origin=FrameOrigin(world.world_id, pose, seed))

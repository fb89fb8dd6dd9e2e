from __future__ import annotations

import json
import os

import pytest

from vlnce_bench.rng import Xoshiro256StarStar
from vlnce_bench.world import GridWorld, load_world, load_world_file

WORLDS_DIR = os.path.join(os.path.dirname(__file__), "..", "worlds")
FIXTURE_WORLDS = ("corridor", "rooms", "loop", "maze")


def world_text(rows, landmarks=None, resolution=0.25, episodes=None, **extra) -> str:
    doc = {"resolution": resolution, "rows": rows, "landmarks": landmarks or {}}
    if episodes:
        doc["episodes"] = episodes
    doc.update(extra)
    return json.dumps(doc)


def open_box(width: int, height: int, resolution: float = 0.25, landmarks=None, marks=None) -> GridWorld:
    """A closed box of free space, optionally with landmark cells.

    `marks` is a dict {(r, c): landmark_char}.
    """
    grid = [["." for _ in range(width)] for _ in range(height)]
    for c in range(width):
        grid[0][c] = grid[height - 1][c] = "#"
    for r in range(height):
        grid[r][0] = grid[r][width - 1] = "#"
    for (r, c), ch in (marks or {}).items():
        grid[r][c] = ch
    return load_world(world_text(["".join(r) for r in grid], landmarks, resolution))


def random_world(seed: int, width: int = 20, height: int = 14, wall_prob: float = 0.18,
                 resolution: float = 0.25) -> GridWorld:
    """Random closed world with scattered obstacle cells and one landmark."""
    rng = Xoshiro256StarStar(seed)
    grid = [["." for _ in range(width)] for _ in range(height)]
    for c in range(width):
        grid[0][c] = grid[height - 1][c] = "#"
    for r in range(height):
        grid[r][0] = grid[r][width - 1] = "#"
    for r in range(1, height - 1):
        for c in range(1, width - 1):
            if rng.next_double() < wall_prob:
                grid[r][c] = "#"
    # keep one guaranteed-free landmark cell
    free = [(r, c) for r in range(1, height - 1) for c in range(1, width - 1)
            if grid[r][c] == "."]
    if not free:
        grid[1][1] = "z"
    else:
        r, c = free[rng.below(len(free))]
        grid[r][c] = "z"
    return load_world(world_text(["".join(r) for r in grid], {"z": "crate"}, resolution))


@pytest.fixture(scope="session")
def fixture_worlds() -> list[GridWorld]:
    return [load_world_file(os.path.join(WORLDS_DIR, f"{n}.json")) for n in FIXTURE_WORLDS]


@pytest.fixture(scope="session")
def corridor_world(fixture_worlds) -> GridWorld:
    return fixture_worlds[0]

"""Benchmark the compiled kernels against the pure-Python fallback.

Run from the repository root after installing the package:

    python3 benchmarks/bench_kernels.py

Times the three hot kernels (Dijkstra distance fields, ray casting, forward
sweeps) on the shipped fixture worlds, plus an end-to-end oracle evaluation
with each backend.
"""

from __future__ import annotations

import math
import os
import statistics
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from vlnce_bench.kernels import _pykern  # noqa: E402

try:
    from vlnce_bench.kernels import _ckern
except ImportError:
    _ckern = None

WORLDS_DIR = os.path.join(os.path.dirname(__file__), "..", "worlds")


def _timeit(fn, repeats: int = 5) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(world) -> list[tuple[str, float, float | None]]:
    mask = world.obstacle_mask
    free = world.free_cells()
    srcs = free[:: max(1, len(free) // 25)][:25]
    x0, y0 = world.cell_center(*free[len(free) // 2])
    angles = [k * 2 * math.pi / 64 for k in range(64)]
    dirs = np.array([[math.cos(a), math.sin(a)] for a in angles])

    rows = []

    def fields(mod):
        return lambda: [mod.distance_field(mask, r, c) for r, c in srcs]

    def rays(mod):
        return lambda: [
            mod.ray_first_hits(mask, world.resolution, x0, y0, dirs, 10.0)
            for _ in range(200)
        ]

    def sweeps(mod):
        def run():
            for a in angles:
                for d in (0.25, 0.75, 2.0):
                    mod.sweep_forward(mask, world.resolution, x0, y0,
                                      math.cos(a), math.sin(a), d)
        return lambda: [run() for _ in range(50)]

    for name, make in (("distance_field x25", fields), ("ray_first_hits x200", rays),
                       ("sweep_forward x9600", sweeps)):
        pure = _timeit(make(_pykern))
        compiled = _timeit(make(_ckern)) if _ckern is not None else None
        rows.append((name, pure, compiled))
    return rows


def bench_end_to_end() -> list[tuple[str, float]]:
    """Oracle evaluation wall time per backend (fresh process state)."""
    from vlnce_bench.expert import generate_episode
    from vlnce_bench.rng import derive_seed
    from vlnce_bench.runner import EvalConfig, OracleAgent, run_episode
    from vlnce_bench.world import load_world_file

    out = []
    for label, env in (("pure", "1"), ("compiled", "")):
        if env:
            os.environ["VLNCE_BENCH_PURE"] = env
        else:
            os.environ.pop("VLNCE_BENCH_PURE", None)
        # re-select the backend for this run
        import importlib

        import vlnce_bench.kernels as kernels

        importlib.reload(kernels)
        if label == "compiled" and kernels.backend_name() != "cython":
            continue
        worlds = [load_world_file(os.path.join(WORLDS_DIR, f"{n}.json"))
                  for n in ("corridor", "rooms", "loop", "maze")]
        t0 = time.perf_counter()
        for i in range(60):
            w = worlds[i % 4]
            ep = generate_episode(w, derive_seed(5, "ep", i))
            run_episode(w, ep, OracleAgent(w),
                        EvalConfig(feature_seed=derive_seed(5, "features"), c=8))
        out.append((label, time.perf_counter() - t0))
    return out


def main() -> None:
    from vlnce_bench.world import load_world_file

    world = load_world_file(os.path.join(WORLDS_DIR, "rooms.json"))
    print(f"kernel microbenchmarks on rooms.json ({world.width}x{world.height} cells)")
    print(f"{'kernel':<24} {'pure (s)':>10} {'cython (s)':>11} {'speedup':>8}")
    for name, pure, compiled in bench_kernels(world):
        if compiled is None:
            print(f"{name:<24} {pure:>10.4f} {'n/a':>11} {'n/a':>8}")
        else:
            print(f"{name:<24} {pure:>10.4f} {compiled:>11.4f} {pure / compiled:>7.1f}x")

    print()
    print("end-to-end: 60 oracle episodes across 4 worlds")
    results = bench_end_to_end()
    base = dict(results).get("pure")
    for label, seconds in results:
        extra = f"  ({base / seconds:.1f}x vs pure)" if label == "compiled" and base else ""
        print(f"  {label:<9} {seconds:.2f} s{extra}")


if __name__ == "__main__":
    main()

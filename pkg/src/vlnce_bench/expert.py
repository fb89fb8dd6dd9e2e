"""Shortest-path expert, synthetic episodes, and imitation data collection.

The expert re-plans every step: it turns toward the next waypoint of the
8-connected shortest path when misaligned, otherwise moves forward, and
stops once within half the success radius of the goal. Collected step
samples carry the full frame history so far plus the expert's action label;
non-oracle (learner-driven) collection relabels every visited state with
the same expert.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .actions import ActionKind, LowLevelAction, forward, round_half_away, stop, turn_left, turn_right
from .rng import Xoshiro256StarStar, derive_seed
from .world import (
    Episode,
    FrameFeatures,
    GridWorld,
    Pose,
    WorldError,
    first_obstacle_distance,
    geodesic_distance,
    raycast_features,
    step,
)

SOURCE_ORACLE = "oracle"
SOURCE_DAGGER = "dagger"

# oracle-to-learner sample ratio used for the final training mix
MIX_RATIO = (16, 9)

_NEIGHBOR_ORDER = (
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
)

INSTRUCTION_TEMPLATES = (
    "walk past the {mid} and go to the {goal}, then stop.",
    "head toward the {mid}, continue until you reach the {goal}, and stop there.",
    "go forward past the {mid} to the {goal}, then stop.",
)


class UnreachableError(WorldError):
    """No obstacle-free path exists between the requested points."""


@dataclass(frozen=True)
class OracleCaps:
    max_forward: float = 0.75  # meters per FORWARD
    max_turn: float = 30.0  # degrees per turn
    align_tol: float = 15.0  # degrees of heading slack before turning


@dataclass(frozen=True)
class StepSample:
    frames: tuple[FrameFeatures, ...]
    instruction: str
    oracle_action: LowLevelAction
    source: str

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("a step sample needs at least one frame")


@dataclass(frozen=True)
class ReasoningSample:
    frames: tuple[FrameFeatures, ...]
    target_instruction: str


@dataclass(frozen=True)
class Trajectory:
    """One rolled-out episode: the frames it produced and its instruction."""

    frames: tuple[FrameFeatures, ...]
    instruction: str


# -- planning -------------------------------------------------------------------


def _descend_cells(world: GridWorld, start_cell, goal_cell) -> list[tuple[int, int]]:
    """Cell path start..goal following the goal distance field downhill."""
    field = world.distance_field(goal_cell[0], goal_cell[1])
    if math.isinf(field[start_cell]):
        raise UnreachableError(f"no path from {start_cell} to {goal_cell}")
    path = [start_cell]
    r, c = start_cell
    obst = world.obstacle_mask
    h, w = obst.shape
    while (r, c) != goal_cell:
        best = None
        for dr, dc in _NEIGHBOR_ORDER:
            nr, nc = r + dr, c + dc
            if nr < 0 or nr >= h or nc < 0 or nc >= w or obst[nr, nc]:
                continue
            if dr != 0 and dc != 0 and (obst[r + dr, c] or obst[r, c + dc]):
                continue
            cost = math.sqrt(2.0) if dr != 0 and dc != 0 else 1.0
            cand = field[nr, nc] + cost
            if best is None or cand < best[0]:
                best = (cand, nr, nc)
        assert best is not None, "descent from a reachable cell found no neighbor"
        r, c = best[1], best[2]
        path.append((r, c))
    return path


def plan_path(
    world: GridWorld, start: tuple[float, float], goal: tuple[float, float]
) -> list[tuple[float, float]]:
    """Cell-center waypoints of the shortest path, collinear runs merged.

    The start cell itself is dropped; the last waypoint is the goal cell
    center. Raises UnreachableError when no path exists.
    """
    start_cell = world.require_free(start[0], start[1])
    goal_cell = world.require_free(goal[0], goal[1])
    if start_cell == goal_cell:
        return [world.cell_center(*goal_cell)]
    cells = _descend_cells(world, start_cell, goal_cell)
    waypoints = []
    for k in range(1, len(cells) - 1):
        before = (cells[k][0] - cells[k - 1][0], cells[k][1] - cells[k - 1][1])
        after = (cells[k + 1][0] - cells[k][0], cells[k + 1][1] - cells[k][1])
        if before != after:
            waypoints.append(cells[k])
    waypoints.append(cells[-1])
    return [world.cell_center(r, c) for r, c in waypoints]


def signed_angle_to(pose: Pose, target: tuple[float, float]) -> float:
    """Signed heading error toward a point, in (-pi, pi]; positive = left."""
    bearing = math.atan2(target[1] - pose.y, target[0] - pose.x)
    delta = (bearing - pose.heading) % (2.0 * math.pi)
    if delta > math.pi:
        delta -= 2.0 * math.pi
    return delta


def _turn_toward(delta: float, max_turn: float) -> LowLevelAction:
    deg = max(5, round_half_away(min(math.degrees(abs(delta)), max_turn)))
    return turn_left(float(deg)) if delta > 0 else turn_right(float(deg))


def oracle_action(
    world: GridWorld,
    pose: Pose,
    goal: tuple[float, float],
    caps: OracleCaps = OracleCaps(),
    success_radius: float = 3.0,
) -> LowLevelAction:
    """The expert's next action from a state (pure function).

    Stop within half the success radius; otherwise turn toward the next
    waypoint when the heading error exceeds the alignment tolerance, else
    move forward, capped by the waypoint distance, the per-step cap, and
    the clearance to the first obstacle minus a half-cell skin. Arguments
    are quantized to whole centimeters / degrees with floors of 5 each.

    Corner case: the alignment tolerance can leave the heading grazing
    into a wall with no usable clearance (a forward would truncate to
    zero and loop). When the capped forward quantum falls below the 5 cm
    floor the expert steers toward the adjacent path cell center instead,
    which is always reachable in a straight line from the current cell.
    """
    if geodesic_distance(world, pose.point, goal) <= 0.5 * success_radius:
        return stop()
    cur_cell = world.require_free(pose.x, pose.y)
    goal_cell = world.require_free(goal[0], goal[1])
    waypoint = plan_path(world, pose.point, goal)[0]
    delta = signed_angle_to(pose, waypoint)
    if abs(delta) > math.radians(caps.align_tol):
        return _turn_toward(delta, caps.max_turn)
    clearance = first_obstacle_distance(world, pose) - 0.5 * world.resolution
    dist = min(
        math.hypot(waypoint[0] - pose.x, waypoint[1] - pose.y),
        caps.max_forward,
        clearance,
    )
    if dist >= 0.05:
        return forward(max(5, round_half_away(dist * 100.0)) / 100.0)

    # blocked dead ahead: re-aim at the next raw path cell
    if cur_cell == goal_cell:
        near = goal
    else:
        cells = _descend_cells(world, cur_cell, goal_cell)
        near = world.cell_center(*cells[1])
    delta2 = signed_angle_to(pose, near)
    if delta2 == 0.0:
        delta2 = math.radians(5.0)
    if abs(delta2) > math.radians(caps.align_tol):
        return _turn_toward(delta2, caps.max_turn)
    dist2 = min(math.hypot(near[0] - pose.x, near[1] - pose.y), caps.max_forward, clearance)
    if dist2 >= 0.05:
        return forward(max(5, round_half_away(dist2 * 100.0)) / 100.0)
    return _turn_toward(delta2, caps.max_turn)


# -- episode generation ----------------------------------------------------------


def _nearest_landmark(world: GridWorld, point: tuple[float, float]) -> str:
    best_name = None
    best_d = math.inf
    for lid, r, c in world.landmark_cells():
        cx, cy = world.cell_center(r, c)
        d = math.hypot(cx - point[0], cy - point[1])
        if d < best_d:
            best_d = d
            best_name = world.landmark_names[lid]
    if best_name is None:
        raise WorldError("world has no landmarks; cannot build an instruction")
    return best_name


def _path_midpoint(world: GridWorld, start: tuple[float, float], goal: tuple[float, float]):
    points = [start] + plan_path(world, start, goal)
    lengths = [
        math.hypot(points[i + 1][0] - points[i][0], points[i + 1][1] - points[i][1])
        for i in range(len(points) - 1)
    ]
    total = sum(lengths)
    if total == 0.0:
        return start
    target = total / 2.0
    acc = 0.0
    for i, seg in enumerate(lengths):
        if acc + seg >= target:
            f = (target - acc) / seg
            return (
                points[i][0] + f * (points[i + 1][0] - points[i][0]),
                points[i][1] + f * (points[i + 1][1] - points[i][1]),
            )
        acc += seg
    return points[-1]


def generate_episode(
    world: GridWorld,
    seed: int,
    min_separation: float = 2.0,
    max_separation: float = 15.0,
    success_radius: float = 3.0,
    max_steps: int = 500,
) -> Episode:
    """Sample a reachable start/goal pair and template an instruction."""
    rng = Xoshiro256StarStar(derive_seed(seed, "episode", world.world_id))
    free = world.free_cells()
    if len(free) < 2:
        raise WorldError("world needs at least two free cells")
    for _ in range(1000):
        sr, sc = free[rng.below(len(free))]
        gr, gc = free[rng.below(len(free))]
        start_pt = world.cell_center(sr, sc)
        goal_pt = world.cell_center(gr, gc)
        if (sr, sc) == (gr, gc):
            continue
        d = geodesic_distance(world, start_pt, goal_pt)
        if min_separation <= d <= max_separation:
            heading = rng.next_double() * 2.0 * math.pi
            template = INSTRUCTION_TEMPLATES[rng.below(len(INSTRUCTION_TEMPLATES))]
            mid = _nearest_landmark(world, _path_midpoint(world, start_pt, goal_pt))
            goal_lm = _nearest_landmark(world, goal_pt)
            return Episode(
                id=f"{world.world_id[:8]}-{seed}",
                instruction=template.format(mid=mid, goal=goal_lm),
                start=Pose(start_pt[0], start_pt[1], heading),
                goal=goal_pt,
                success_radius=success_radius,
                max_steps=max_steps,
            )
    raise WorldError(
        f"no start/goal pair with separation in [{min_separation}, {max_separation}] m "
        f"found after 1000 attempts"
    )


# -- collection -------------------------------------------------------------------


def rollout_oracle(
    world: GridWorld,
    episode: Episode,
    feature_seed: int,
    caps: OracleCaps = OracleCaps(),
    c: int = 32,
) -> tuple[list[StepSample], Trajectory]:
    """Roll the expert through an episode, emitting one sample per step."""
    samples: list[StepSample] = []
    frames: list[FrameFeatures] = []
    pose = episode.start
    for _ in range(episode.max_steps):
        frames.append(raycast_features(world, pose, feature_seed, c))
        action = oracle_action(world, pose, episode.goal, caps, episode.success_radius)
        samples.append(
            StepSample(tuple(frames), episode.instruction, action, SOURCE_ORACLE)
        )
        if action.kind is ActionKind.STOP:
            break
        pose, _ = step(world, pose, action)
    return samples, Trajectory(tuple(frames), episode.instruction)


def collect_oracle(
    worlds: list[GridWorld],
    episode_count: int,
    seed: int,
    caps: OracleCaps = OracleCaps(),
    c: int = 32,
) -> list[StepSample]:
    """Expert rollouts over generated episodes, round-robin across worlds."""
    if episode_count < 1:
        raise ValueError("episode_count must be >= 1")
    # one shared feature seed: kind embeddings stay consistent across the
    # whole dataset, which downstream training relies on
    feature_seed = derive_seed(seed, "features")
    samples: list[StepSample] = []
    for i in range(episode_count):
        world = worlds[i % len(worlds)]
        episode = generate_episode(world, derive_seed(seed, "ep", i))
        ep_samples, _ = rollout_oracle(world, episode, feature_seed, caps, c)
        samples.extend(ep_samples)
    return samples


def collect_dagger(
    agent,
    worlds: list[GridWorld],
    episode_count: int,
    seed: int,
    caps: OracleCaps = OracleCaps(),
    c: int = 32,
) -> list[StepSample]:
    """Roll the learner, but label every visited state with the expert.

    Unparseable agent answers execute as no-ops; the visited state is still
    labeled and collected. Episodes end on an agent STOP or at max_steps.
    """
    from .actions import NoValidActionError, parse_action

    if episode_count < 1:
        raise ValueError("episode_count must be >= 1")
    feature_seed = derive_seed(seed, "features")
    samples: list[StepSample] = []
    for i in range(episode_count):
        world = worlds[i % len(worlds)]
        episode = generate_episode(world, derive_seed(seed, "ep", i))
        agent.reset(episode)
        frames: list[FrameFeatures] = []
        pose = episode.start
        for _ in range(episode.max_steps):
            frames.append(raycast_features(world, pose, feature_seed, c))
            label = oracle_action(world, pose, episode.goal, caps, episode.success_radius)
            samples.append(
                StepSample(tuple(frames), episode.instruction, label, SOURCE_DAGGER)
            )
            answer = agent.act(frames[-1])
            try:
                action = parse_action(answer)
            except NoValidActionError:
                continue  # no-op; pose unchanged
            if action.kind is ActionKind.STOP:
                break
            pose, _ = step(world, pose, action)
    return samples


def mix_datasets(
    oracle: list[StepSample],
    dagger: list[StepSample],
    seed: int,
    ratio: tuple[int, int] = MIX_RATIO,
) -> list[StepSample]:
    """Subsample the relatively larger source to the target ratio, then shuffle.

    With both sources non-empty the kept counts satisfy the ratio within
    one sample; an empty source passes the other through untouched (still
    shuffled) rather than failing.
    """
    rng = Xoshiro256StarStar(derive_seed(seed, "mix"))
    ro, rd = ratio
    keep_o, keep_d = list(oracle), list(dagger)
    if oracle and dagger:
        if len(oracle) * rd > len(dagger) * ro:
            target = round(len(dagger) * ro / rd)
            rng.shuffle(keep_o)
            keep_o = keep_o[:target]
        else:
            target = round(len(oracle) * rd / ro)
            rng.shuffle(keep_d)
            keep_d = keep_d[:target]
    combined = keep_o + keep_d
    rng.shuffle(combined)
    return combined


def make_reasoning_samples(
    trajectories: list[Trajectory], fraction: float
) -> list[ReasoningSample]:
    """Instruction-deduction pairs from the first ceil(fraction*N) trajectories."""
    if not trajectories:
        raise ValueError("make_reasoning_samples needs a non-empty trajectory list")
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must be in (0, 1]")
    n = math.ceil(fraction * len(trajectories))
    return [ReasoningSample(t.frames, t.instruction) for t in trajectories[:n]]


# -- dataset files -----------------------------------------------------------------


def _action_to_json(a: LowLevelAction) -> dict:
    if a.kind is ActionKind.STOP:
        return {"type": "stop"}
    if a.kind is ActionKind.FORWARD:
        return {"type": "forward", "distance_m": a.value}
    name = "turn_left" if a.kind is ActionKind.TURN_LEFT else "turn_right"
    return {"type": name, "degrees": a.value}


def _action_from_json(d: dict) -> LowLevelAction:
    t = d.get("type")
    if t == "stop":
        return stop()
    if t == "forward":
        return forward(float(d["distance_m"]))
    if t == "turn_left":
        return turn_left(float(d["degrees"]))
    if t == "turn_right":
        return turn_right(float(d["degrees"]))
    raise ValueError(f"unknown action type {t!r}")


def save_dataset(path: str, samples: list[StepSample], inline_features: bool = False) -> None:
    """Write step samples as JSON lines.

    By default frames are stored as {world_id, pose, seed} references and
    regenerated on load; inline mode embeds the raw feature matrices for
    cross-implementation exchange.
    """
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            frames_json = []
            for fr in s.frames:
                if inline_features:
                    frames_json.append(
                        {"n_x": fr.data.shape[0], "c": fr.data.shape[1],
                         "data": fr.data.flatten().tolist()}
                    )
                else:
                    if fr.origin is None:
                        raise ValueError(
                            "frame has no origin; save with inline_features=True"
                        )
                    o = fr.origin
                    frames_json.append(
                        {"world_id": o.world_id,
                         "pose": {"x": o.pose.x, "y": o.pose.y, "heading": o.pose.heading},
                         "seed": o.seed}
                    )
            line = {
                "instruction": s.instruction,
                "oracle_action": _action_to_json(s.oracle_action),
                "source": s.source,
                "frames": frames_json,
            }
            f.write(json.dumps(line) + "\n")


def load_dataset(path: str, worlds: list[GridWorld] | None = None, c: int = 32) -> list[StepSample]:
    """Read a JSON-lines dataset, regenerating referenced frames.

    Frames within one sample line that repeat (the shared history prefix)
    are regenerated once and shared by identity across the line's samples.
    """
    by_id = {w.world_id: w for w in (worlds or [])}
    samples: list[StepSample] = []
    frame_cache: dict[tuple, FrameFeatures] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                frames = []
                for fr in d["frames"]:
                    if "data" in fr:
                        data = np.array(fr["data"], dtype=np.float64).reshape(
                            int(fr["n_x"]), int(fr["c"])
                        )
                        frames.append(FrameFeatures(data=data))
                        continue
                    key = (
                        fr["world_id"],
                        fr["pose"]["x"],
                        fr["pose"]["y"],
                        fr["pose"]["heading"],
                        fr["seed"],
                    )
                    cached = frame_cache.get(key)
                    if cached is None:
                        world = by_id.get(fr["world_id"])
                        if world is None:
                            raise ValueError(
                                f"dataset references unknown world {fr['world_id']!r}; "
                                f"pass the matching world files"
                            )
                        pose = Pose(fr["pose"]["x"], fr["pose"]["y"], fr["pose"]["heading"])
                        cached = raycast_features(world, pose, int(fr["seed"]), c)
                        frame_cache[key] = cached
                    frames.append(cached)
                samples.append(
                    StepSample(
                        frames=tuple(frames),
                        instruction=d["instruction"],
                        oracle_action=_action_from_json(d["oracle_action"]),
                        source=d["source"],
                    )
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{line_no}: malformed dataset line: {e}") from e
    return samples

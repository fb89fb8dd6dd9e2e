"""Episode execution loop, the metric suite, and the built-in agents.

Agents implement ``reset(episode)`` and ``act(frame) -> answer text``; the
loop renders features at the current pose, asks the agent, parses the
answer (unparseable answers count as invalid and execute as no-ops), and
executes the action until STOP or the step budget runs out.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

from .actions import (
    ActionKind,
    LowLevelAction,
    NoValidActionError,
    format_action,
    parse_action,
)
from .encoder import EncoderParams, embed_instruction
from .expert import OracleCaps, StepSample, oracle_action
from .policy import FrameEncoder, PolicyParams, decode, featurize, predict
from .rng import Xoshiro256StarStar, derive_seed
from .world import (
    Episode,
    FrameFeatures,
    GridWorld,
    Pose,
    euclidean_distance,
    geodesic_distance,
    raycast_features,
    step,
)


class TransportError(RuntimeError):
    """Remote agent became unreachable mid-episode."""


class Agent(Protocol):
    def reset(self, episode: Episode) -> None: ...

    def act(self, frame: FrameFeatures) -> str: ...


@dataclass(frozen=True)
class EvalConfig:
    feature_seed: int = 0
    c: int = 32
    success_radius: float | None = None  # None: use the episode's
    max_steps: int | None = None
    distance: str = "geodesic"  # or "euclidean"


@dataclass
class EpisodeResult:
    episode_id: str
    poses: list[Pose]
    actions: list[LowLevelAction]
    stop_called: bool
    steps: int
    invalid_answers: int
    tl: float
    ne: float
    success: bool
    oracle_success: bool
    spl_term: float
    error: str | None = None


@dataclass(frozen=True)
class MetricsSummary:
    sr: float  # percent
    os: float  # percent
    spl: float  # percent
    tl: float  # meters, mean
    ne: float  # meters, mean
    n: int


@dataclass(frozen=True)
class SingleStepReport:
    success_rate: float  # percent
    stop_success_rate: float | None  # percent; None when no stop labels
    mean_angle_err: float | None  # degrees over correctly-typed turns
    mean_dist_err: float | None  # meters over correctly-typed forwards


def _distance_fn(world: GridWorld, mode: str) -> Callable[[tuple, tuple], float]:
    if mode == "geodesic":
        return lambda a, b: geodesic_distance(world, a, b)
    if mode == "euclidean":
        return lambda a, b: euclidean_distance(a, b)
    raise ValueError(f"unknown distance mode {mode!r}")


def run_episode(
    world: GridWorld, episode: Episode, agent: Agent, config: EvalConfig = EvalConfig()
) -> EpisodeResult:
    """Run one POMDP episode to termination and score it."""
    success_radius = (
        episode.success_radius if config.success_radius is None else config.success_radius
    )
    max_steps = episode.max_steps if config.max_steps is None else config.max_steps
    dist = _distance_fn(world, config.distance)

    pose = episode.start
    poses = [pose]
    actions: list[LowLevelAction] = []
    steps = 0
    invalid = 0
    stop_called = False
    error: str | None = None

    try:
        agent.reset(episode)
        while steps < max_steps:
            frame = raycast_features(world, pose, config.feature_seed, config.c)
            answer = agent.act(frame)
            steps += 1
            try:
                action = parse_action(answer)
            except NoValidActionError:
                invalid += 1
                poses.append(pose)
                continue
            actions.append(action)
            if action.kind is ActionKind.STOP:
                stop_called = True
                poses.append(pose)
                break
            pose, _ = step(world, pose, action)
            poses.append(pose)
    except TransportError as e:
        error = str(e)

    ne = float(dist(pose.point, episode.goal))
    success = bool(stop_called and error is None and ne <= success_radius)
    oracle_success = bool(any(dist(p.point, episode.goal) <= success_radius for p in poses))
    tl = sum(
        euclidean_distance(poses[i].point, poses[i + 1].point) for i in range(len(poses) - 1)
    )
    shortest = dist(episode.start.point, episode.goal)
    denom = max(tl, shortest)
    spl_term = (shortest / denom if denom > 0 else 1.0) if success else 0.0
    return EpisodeResult(
        episode_id=episode.id,
        poses=poses,
        actions=actions,
        stop_called=stop_called,
        steps=steps,
        invalid_answers=invalid,
        tl=tl,
        ne=ne,
        success=success,
        oracle_success=oracle_success,
        spl_term=spl_term,
        error=error,
    )


def compute_metrics(results: list[EpisodeResult]) -> MetricsSummary:
    if not results:
        raise ValueError("compute_metrics needs a non-empty result list")
    n = len(results)
    return MetricsSummary(
        sr=100.0 * sum(r.success for r in results) / n,
        os=100.0 * sum(r.oracle_success for r in results) / n,
        spl=100.0 * sum(r.spl_term for r in results) / n,
        tl=sum(r.tl for r in results) / n,
        ne=sum(r.ne for r in results) / n,
        n=n,
    )


def single_step_eval(
    predict_fn: Callable[[StepSample], LowLevelAction],
    samples: list[StepSample],
    dist_threshold: float = 0.30,
    angle_threshold: float = 30.0,
) -> SingleStepReport:
    """Score per-step predictions against the expert labels.

    A prediction is correct when the action type matches and, for FORWARD /
    turns, the argument error is strictly below the threshold; STOP needs
    the type alone. Argument errors average over correctly-typed samples.
    """
    if not samples:
        raise ValueError("single_step_eval needs samples")
    correct = 0
    stop_total = 0
    stop_correct = 0
    angle_errs: list[float] = []
    dist_errs: list[float] = []
    for s in samples:
        pred = predict_fn(s)
        label = s.oracle_action
        type_match = pred.kind is label.kind
        if label.kind is ActionKind.STOP:
            stop_total += 1
            if type_match:
                stop_correct += 1
                correct += 1
            continue
        if label.kind is ActionKind.FORWARD:
            if type_match:
                err = abs(pred.value - label.value)
                dist_errs.append(err)
                if err < dist_threshold:
                    correct += 1
        else:
            if type_match:
                err = abs(pred.value - label.value)
                angle_errs.append(err)
                if err < angle_threshold:
                    correct += 1
    n = len(samples)
    return SingleStepReport(
        success_rate=100.0 * correct / n,
        stop_success_rate=(100.0 * stop_correct / stop_total) if stop_total else None,
        mean_angle_err=(sum(angle_errs) / len(angle_errs)) if angle_errs else None,
        mean_dist_err=(sum(dist_errs) / len(dist_errs)) if dist_errs else None,
    )


# -- built-in agents ---------------------------------------------------------------


class OracleAgent:
    """Privileged expert agent: tracks its own pose by exact replay.

    It knows the world and the episode start; because the simulator is
    deterministic and the expert's answers round-trip exactly through the
    sentence grammar, replaying its own parsed answers keeps the internal
    pose identical to the simulator's.
    """

    def __init__(self, world: GridWorld, caps: OracleCaps = OracleCaps()) -> None:
        self.world = world
        self.caps = caps
        self._episode: Episode | None = None
        self._pose: Pose | None = None

    def reset(self, episode: Episode) -> None:
        self._episode = episode
        self._pose = episode.start

    def act(self, frame: FrameFeatures) -> str:
        if self._episode is None or self._pose is None:
            raise RuntimeError("act() before reset()")
        action = oracle_action(
            self.world, self._pose, self._episode.goal, self.caps,
            self._episode.success_radius,
        )
        answer = format_action(action)
        executed = parse_action(answer)
        if executed.kind is not ActionKind.STOP:
            self._pose, _ = step(self.world, self._pose, executed)
        return answer


class RandomAgent:
    """Uniform random valid actions, deterministic per (seed, episode id)."""

    def __init__(self, seed: int, stop_prob: float = 0.05) -> None:
        self.seed = seed
        self.stop_prob = stop_prob
        self._rng: Xoshiro256StarStar | None = None

    def reset(self, episode: Episode) -> None:
        self._rng = Xoshiro256StarStar(derive_seed(self.seed, "random", episode.id))

    def act(self, frame: FrameFeatures) -> str:
        rng = self._rng
        if rng is None:
            raise RuntimeError("act() before reset()")
        if rng.next_double() < self.stop_prob:
            return format_action(LowLevelAction(ActionKind.STOP))
        kind = (ActionKind.FORWARD, ActionKind.TURN_LEFT, ActionKind.TURN_RIGHT)[rng.below(3)]
        if kind is ActionKind.FORWARD:
            return format_action(LowLevelAction(kind, rng.uniform(0.05, 1.0)))
        return format_action(LowLevelAction(kind, rng.uniform(5.0, 90.0)))


class ToyAgent:
    """The trainable head behind the full encode-prompt-predict-decode path."""

    def __init__(
        self,
        policy_params: PolicyParams,
        encoder_params: EncoderParams,
        n_hist: int = 4,
        n_cur: int = 64,
    ) -> None:
        self.policy_params = policy_params
        self.encoder_params = encoder_params
        self.n_hist = n_hist
        self.n_cur = n_cur
        self._frames: list[FrameFeatures] = []
        self._encoder: FrameEncoder | None = None

    def reset(self, episode: Episode) -> None:
        instruction = embed_instruction(episode.instruction, self.encoder_params)
        self._encoder = FrameEncoder(self.encoder_params, instruction, self.n_hist, self.n_cur)
        self._frames = []

    def act(self, frame: FrameFeatures) -> str:
        if self._encoder is None:
            raise RuntimeError("act() before reset()")
        self._frames.append(frame)
        prompt = self._encoder.prompt_for(self._frames)
        return decode(predict(self.policy_params, featurize(prompt)))

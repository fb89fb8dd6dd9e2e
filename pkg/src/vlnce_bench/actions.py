"""Linguistic action space: canonical sentences and the regex answer parser.

Actions carry quantitative arguments (meters for FORWARD, degrees for the
turns). The formatter emits one canonical sentence per action; the parser is
deliberately permissive and accepts free-form answers, extracting the first
recognized verb and the first number after it.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

MAX_FORWARD_M = 5.0
MAX_TURN_DEG = 180.0
MIN_FORWARD_M = 0.01
MIN_TURN_DEG = 1.0

DEFAULT_FORWARD_M = 0.25
DEFAULT_TURN_DEG = 30.0


class NoValidActionError(ValueError):
    """No action verb could be recognized in the answer text."""


class ActionKind(Enum):
    # order matters: this is also the policy head's logit ordering
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


@dataclass(frozen=True)
class LowLevelAction:
    kind: ActionKind
    value: float | None = None  # meters for FORWARD, degrees for turns

    def __post_init__(self) -> None:
        if self.kind is ActionKind.STOP:
            if self.value is not None:
                raise ValueError("STOP carries no argument")
            return
        if self.value is None or not math.isfinite(self.value) or self.value <= 0:
            raise ValueError(f"{self.kind.name} needs a strictly positive argument")
        if self.kind is ActionKind.FORWARD and self.value > MAX_FORWARD_M:
            raise ValueError(f"forward distance {self.value} m exceeds cap {MAX_FORWARD_M} m")
        if self.kind in (ActionKind.TURN_LEFT, ActionKind.TURN_RIGHT) and self.value > MAX_TURN_DEG:
            raise ValueError(f"turn angle {self.value} deg exceeds cap {MAX_TURN_DEG} deg")


def forward(distance_m: float) -> LowLevelAction:
    return LowLevelAction(ActionKind.FORWARD, distance_m)


def turn_left(degrees: float) -> LowLevelAction:
    return LowLevelAction(ActionKind.TURN_LEFT, degrees)


def turn_right(degrees: float) -> LowLevelAction:
    return LowLevelAction(ActionKind.TURN_RIGHT, degrees)


def stop() -> LowLevelAction:
    return LowLevelAction(ActionKind.STOP)


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


def format_action(a: LowLevelAction) -> str:
    """Canonical sentence for an action; distances as whole centimeters."""
    if a.kind is ActionKind.STOP:
        return "The next action is stop."
    if a.kind is ActionKind.FORWARD:
        return f"The next action is move forward {round_half_away(a.value * 100.0)} cm."
    side = "left" if a.kind is ActionKind.TURN_LEFT else "right"
    return f"The next action is turn {side} {round_half_away(a.value)} degrees."


_VERBS: tuple[tuple[re.Pattern, ActionKind], ...] = (
    (re.compile(r"\b(?:move forward|go forward|walk forward|forward)\b"), ActionKind.FORWARD),
    (re.compile(r"\b(?:turn left|rotate left)\b"), ActionKind.TURN_LEFT),
    (re.compile(r"\b(?:turn right|rotate right)\b"), ActionKind.TURN_RIGHT),
    (re.compile(r"\b(?:stop|halt)\b"), ActionKind.STOP),
)

_NUMBER = re.compile(r"(\d+(?:\.\d+)?|\.\d+)")
_UNIT = re.compile(r"\s*(centimeters?\b|cm\b|meters?\b|deg(?:rees?)?\b|°|m\b)")


def parse_action(text: str) -> LowLevelAction:
    """Extract a low-level action from free-form answer text.

    Case- and whitespace-insensitive. The earliest verb match wins; the
    argument is the first number after it, with units cm/m/degrees (missing
    unit defaults to cm for forward, degrees for turns; missing number
    defaults to 25 cm / 30 degrees). Arguments are clamped into the action
    caps. Raises NoValidActionError when no verb is present.
    """
    norm = re.sub(r"\s+", " ", text.lower())
    best: tuple[int, ActionKind, int] | None = None
    for pattern, kind in _VERBS:
        m = pattern.search(norm)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), kind, m.end())
    if best is None:
        raise NoValidActionError(f"no action verb found in {text!r}")
    _, kind, verb_end = best
    if kind is ActionKind.STOP:
        return stop()

    tail = norm[verb_end:]
    num_match = _NUMBER.search(tail)
    if kind is ActionKind.FORWARD:
        if num_match is None:
            return forward(DEFAULT_FORWARD_M)
        value = float(num_match.group(1))
        unit = _UNIT.match(tail, num_match.end())
        unit_text = unit.group(1) if unit else "cm"
        if unit_text in ("m", "meter", "meters"):
            meters = value
        else:  # cm default, and any centimeter spelling
            meters = value / 100.0
        return forward(min(max(meters, MIN_FORWARD_M), MAX_FORWARD_M))

    if num_match is None:
        degrees = DEFAULT_TURN_DEG
    else:
        degrees = float(num_match.group(1))
    degrees = min(max(degrees, MIN_TURN_DEG), MAX_TURN_DEG)
    ctor = turn_left if kind is ActionKind.TURN_LEFT else turn_right
    return ctor(degrees)


def valid_answer_ratio(texts: list[str]) -> float:
    """Fraction of answers from which an action can be parsed."""
    if not texts:
        raise ValueError("valid_answer_ratio needs a non-empty list")
    ok = 0
    for t in texts:
        try:
            parse_action(t)
            ok += 1
        except NoValidActionError:
            pass
    return ok / len(texts)

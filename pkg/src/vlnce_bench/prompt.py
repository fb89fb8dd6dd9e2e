"""Special-token prompt assembly and the visual token budget.

A prompt is a structural sequence (not a string): history frames between
HIS markers, the current frame between OBS markers, then the NAV marker and
the instruction words. Within each frame the queried token comes first,
followed by the agnostic tokens row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .encoder import ObservationTokens

DEFAULT_N_HIST = 4
DEFAULT_N_CUR = 64


class PromptError(ValueError):
    pass


class ElementKind(Enum):
    HIS_OPEN = "<HIS>"
    HIS_CLOSE = "</HIS>"
    OBS_OPEN = "<OBS>"
    OBS_CLOSE = "</OBS>"
    NAV = "<NAV>"
    VISUAL = "[VIS]"
    WORD = "word"


@dataclass(frozen=True)
class PromptElement:
    kind: ElementKind
    vector: np.ndarray | None = None
    word: str | None = None


@dataclass(frozen=True)
class PromptSequence:
    elements: tuple[PromptElement, ...]
    frame_count: int
    n_hist: int
    n_cur: int


def token_budget(t: int, n_hist: int = DEFAULT_N_HIST, n_cur: int = DEFAULT_N_CUR) -> int:
    """Visual token count for t frames: (t-1)*(1+n_hist) + (1+n_cur)."""
    if t < 1:
        raise PromptError(f"frame count must be >= 1, got {t}")
    return (t - 1) * (1 + n_hist) + (1 + n_cur)


def _frame_elements(tokens: ObservationTokens) -> list[PromptElement]:
    out = [PromptElement(ElementKind.VISUAL, vector=tokens.queried)]
    for row in tokens.agnostic:
        out.append(PromptElement(ElementKind.VISUAL, vector=row))
    return out


def assemble_prompt(
    history: Sequence[ObservationTokens],
    current: ObservationTokens,
    instruction_words: Sequence[str],
    n_hist: int = DEFAULT_N_HIST,
    n_cur: int = DEFAULT_N_CUR,
) -> PromptSequence:
    """Lay out the full input sequence for t = len(history) + 1 frames."""
    for i, h in enumerate(history):
        if h.n_v != n_hist:
            raise PromptError(f"history frame {i} has {h.n_v} agnostic tokens, expected {n_hist}")
    if current.n_v != n_cur:
        raise PromptError(f"current frame has {current.n_v} agnostic tokens, expected {n_cur}")

    elements: list[PromptElement] = [PromptElement(ElementKind.HIS_OPEN)]
    for h in history:
        elements.extend(_frame_elements(h))
    elements.append(PromptElement(ElementKind.HIS_CLOSE))
    elements.append(PromptElement(ElementKind.OBS_OPEN))
    elements.extend(_frame_elements(current))
    elements.append(PromptElement(ElementKind.OBS_CLOSE))
    elements.append(PromptElement(ElementKind.NAV))
    for w in instruction_words:
        elements.append(PromptElement(ElementKind.WORD, word=w))
    return PromptSequence(
        elements=tuple(elements),
        frame_count=len(history) + 1,
        n_hist=n_hist,
        n_cur=n_cur,
    )


def scan_prompt(seq: PromptSequence) -> tuple[int, int, int, list[str]]:
    """Validate marker structure and recover (t, n_hist, n_cur, words).

    The flat element list does not tag queried vs agnostic visuals, so the
    history block is regrouped using the sequence's own n_hist; everything
    else (t, n_cur, words, marker order) is derived from the elements and
    cross-checked.
    """
    kinds = [e.kind for e in seq.elements]
    try:
        his_open = kinds.index(ElementKind.HIS_OPEN)
        his_close = kinds.index(ElementKind.HIS_CLOSE)
        obs_open = kinds.index(ElementKind.OBS_OPEN)
        obs_close = kinds.index(ElementKind.OBS_CLOSE)
        nav = kinds.index(ElementKind.NAV)
    except ValueError as e:
        raise PromptError(f"missing marker: {e}") from e
    if not (his_open == 0 and his_open < his_close < obs_open < obs_close < nav):
        raise PromptError("markers out of order")
    for name, kind in (("HIS_OPEN", ElementKind.HIS_OPEN), ("HIS_CLOSE", ElementKind.HIS_CLOSE),
                       ("OBS_OPEN", ElementKind.OBS_OPEN), ("OBS_CLOSE", ElementKind.OBS_CLOSE),
                       ("NAV", ElementKind.NAV)):
        if kinds.count(kind) != 1:
            raise PromptError(f"marker {name} must occur exactly once")

    hist_block = kinds[his_open + 1 : his_close]
    cur_block = kinds[obs_open + 1 : obs_close]
    if any(k is not ElementKind.VISUAL for k in hist_block + cur_block):
        raise PromptError("non-visual element inside a frame block")
    if kinds[his_close + 1] is not ElementKind.OBS_OPEN:
        raise PromptError("history and observation blocks must be adjacent")

    per_hist = 1 + seq.n_hist
    if len(hist_block) % per_hist != 0:
        raise PromptError(f"history block size {len(hist_block)} not divisible by {per_hist}")
    t = len(hist_block) // per_hist + 1
    if len(cur_block) < 1:
        raise PromptError("current frame block is empty")
    n_cur = len(cur_block) - 1

    words = []
    for e in seq.elements[nav + 1 :]:
        if e.kind is not ElementKind.WORD:
            raise PromptError("only words may follow the NAV marker")
        words.append(e.word)
    if t != seq.frame_count or n_cur != seq.n_cur:
        raise PromptError("element layout disagrees with sequence metadata")
    return t, seq.n_hist, n_cur, words


def render_debug(seq: PromptSequence) -> str:
    """Literal-marker text form with [VIS] placeholders, for golden files."""
    parts: list[str] = []
    for e in seq.elements:
        if e.kind is ElementKind.WORD:
            if parts and not parts[-1].endswith(">"):
                parts.append(" ")
            parts.append(e.word or "")
        else:
            parts.append(e.kind.value)
    return "".join(parts)

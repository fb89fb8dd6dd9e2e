"""Prompt assembly: structure, budgets, round-trip, debug rendering."""

from __future__ import annotations

import numpy as np
import pytest

from vlnce_bench.encoder import ObservationTokens
from vlnce_bench.prompt import (
    ElementKind,
    PromptError,
    assemble_prompt,
    render_debug,
    scan_prompt,
    token_budget,
)


def tokens(n_v: int, c: int = 4, fill: float = 0.5) -> ObservationTokens:
    return ObservationTokens(
        queried=np.full(c, fill), agnostic=np.full((n_v, c), fill), n_v=n_v
    )


def test_budget_formula():
    assert token_budget(1) == 65
    assert token_budget(300) == 299 * 5 + 65 == 1560
    assert token_budget(2, 16, 16) == 34
    assert token_budget(5) == 4 * 5 + 65 == 85


def test_budget_rejects_zero_frames():
    with pytest.raises(PromptError):
        token_budget(0)


def test_budget_linear_form():
    for t in range(1, 301):
        assert token_budget(t, 4, 64) == 5 * t + 60


def test_assemble_single_frame_count():
    seq = assemble_prompt([], tokens(64), ["walk", "to", "the", "chair"])
    # 1 + 0 + 1 + 1 + 65 + 1 + 1 + 4
    assert len(seq.elements) == 74
    assert seq.frame_count == 1


def test_assemble_five_frames_visual_budget():
    seq = assemble_prompt([tokens(4)] * 4, tokens(64), ["go"])
    visuals = [e for e in seq.elements if e.kind is ElementKind.VISUAL]
    assert len(visuals) == 85 == token_budget(5)


def test_assemble_element_count_formula_across_t():
    words = ["a", "b", "c"]
    for t in range(1, 301):
        seq = assemble_prompt([tokens(4)] * (t - 1), tokens(64), words)
        assert len(seq.elements) == 5 + token_budget(t) + len(words)


def test_assemble_structure_order():
    seq = assemble_prompt([tokens(4)], tokens(64), ["go"])
    kinds = [e.kind for e in seq.elements]
    assert kinds[0] is ElementKind.HIS_OPEN
    assert kinds[1 : 1 + 5] == [ElementKind.VISUAL] * 5
    assert kinds[6] is ElementKind.HIS_CLOSE
    assert kinds[7] is ElementKind.OBS_OPEN
    assert kinds[8 : 8 + 65] == [ElementKind.VISUAL] * 65
    assert kinds[73] is ElementKind.OBS_CLOSE
    assert kinds[74] is ElementKind.NAV
    assert kinds[75] is ElementKind.WORD


def test_assemble_budget_mismatch_raises():
    with pytest.raises(PromptError, match="history frame"):
        assemble_prompt([tokens(64)], tokens(64), ["go"])
    with pytest.raises(PromptError, match="current frame"):
        assemble_prompt([tokens(4)], tokens(4), ["go"])


def test_empty_history_has_empty_his_block():
    seq = assemble_prompt([], tokens(64), ["go"])
    kinds = [e.kind for e in seq.elements]
    assert kinds[0] is ElementKind.HIS_OPEN
    assert kinds[1] is ElementKind.HIS_CLOSE


def test_scan_round_trip():
    words = ["head", "to", "the", "sofa"]
    for t in (1, 2, 7):
        seq = assemble_prompt([tokens(4)] * (t - 1), tokens(64), words)
        rt, rh, rc, rwords = scan_prompt(seq)
        assert (rt, rh, rc) == (t, 4, 64)
        assert rwords == words


def test_scan_rejects_corrupted_sequence():
    seq = assemble_prompt([tokens(4)], tokens(64), ["go"])
    broken = type(seq)(
        elements=seq.elements[1:],  # drop HIS_OPEN
        frame_count=seq.frame_count,
        n_hist=seq.n_hist,
        n_cur=seq.n_cur,
    )
    with pytest.raises(PromptError):
        scan_prompt(broken)


def test_render_debug_golden():
    seq = assemble_prompt([tokens(1, c=2)], tokens(4, c=2), ["walk", "to", "chair"],
                          n_hist=1, n_cur=4)
    text = render_debug(seq)
    assert text == (
        "<HIS>[VIS][VIS]</HIS>"
        "<OBS>[VIS][VIS][VIS][VIS][VIS]</OBS>"
        "<NAV>walk to chair"
    )


def test_render_debug_t1():
    seq = assemble_prompt([], tokens(1, c=2), ["stop"], n_hist=1, n_cur=1)
    assert render_debug(seq) == "<HIS></HIS><OBS>[VIS][VIS]</OBS><NAV>stop"

"""Observation-token encoder: instruction-conditioned queries, the
instruction-queried token, and grid-pooled instruction-agnostic tokens.

Every weight matrix is filled from a seeded xoshiro256** stream (see
``rng``) with entries uniform in [-1/sqrt(C), 1/sqrt(C)], drawn row-major in
a fixed order: base_queries, p_q, p_v, w_q, w_k, w_v. Tokens are row
vectors; linear maps apply on the right (``row @ M``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256StarStar, derive_seed, embed_token
from .world import FrameFeatures

SUPPORTED_POOL_SIZES = (1, 4, 16, 64)


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class InstructionEmbedding:
    tokens: tuple[str, ...]
    matrix: np.ndarray  # l x C, unit-norm rows


@dataclass(frozen=True)
class EncoderParams:
    seed: int
    c: int
    m: int
    base_queries: np.ndarray  # M x C
    p_q: np.ndarray  # C x C
    p_v: np.ndarray  # C x C
    w_q: np.ndarray  # C x C
    w_k: np.ndarray  # C x C
    w_v: np.ndarray  # C x C


@dataclass(frozen=True)
class ObservationTokens:
    queried: np.ndarray  # (C,)
    agnostic: np.ndarray  # n_v x C
    n_v: int

    def __post_init__(self) -> None:
        if self.agnostic.shape[0] != self.n_v:
            raise EncoderError("agnostic token count does not match n_v")


def _fill(rng: Xoshiro256StarStar, rows: int, cols: int, bound: float) -> np.ndarray:
    out = np.empty((rows, cols), dtype=np.float64)
    for r in range(rows):
        for c in range(cols):
            out[r, c] = rng.uniform(-bound, bound)
    out.setflags(write=False)
    return out


def make_encoder_params(seed: int, c: int = 32, m: int = 8) -> EncoderParams:
    if c < 1 or m < 1:
        raise EncoderError("c and m must be positive")
    rng = Xoshiro256StarStar(derive_seed(seed, "encoder"))
    bound = 1.0 / math.sqrt(c)
    return EncoderParams(
        seed=seed,
        c=c,
        m=m,
        base_queries=_fill(rng, m, c, bound),
        p_q=_fill(rng, c, c, bound),
        p_v=_fill(rng, c, c, bound),
        w_q=_fill(rng, c, c, bound),
        w_k=_fill(rng, c, c, bound),
        w_v=_fill(rng, c, c, bound),
    )


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max subtraction) along an axis."""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Single-head attention: softmax(Q K^T) V, no scaling, no projections."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise EncoderError("attention operands must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise EncoderError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise EncoderError(f"key count {k.shape[0]} != value count {v.shape[0]}")
    if k.shape[0] < 1:
        raise EncoderError("attention needs at least one key")
    return softmax(q @ k.T, axis=1) @ v


def embed_instruction(text: str, params: EncoderParams) -> InstructionEmbedding:
    """Whitespace-tokenize, lowercase, and hash-embed an instruction."""
    words = text.lower().split()
    if not words:
        raise EncoderError("instruction is empty after tokenization")
    matrix = np.array(
        [embed_token(w, derive_seed(params.seed, "word"), params.c) for w in words],
        dtype=np.float64,
    )
    return InstructionEmbedding(tokens=tuple(words), matrix=matrix)


def _frame_matrix(x: FrameFeatures | np.ndarray) -> np.ndarray:
    m = x.data if isinstance(x, FrameFeatures) else np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise EncoderError("frame features must be a 2-D matrix")
    return m


def generate_queries(
    x: FrameFeatures | np.ndarray, instruction: InstructionEmbedding, params: EncoderParams
) -> np.ndarray:
    """Instruction-aware queries: residual base queries plus one
    cross-attention over the instruction and one over the frame patches."""
    xm = _frame_matrix(x)
    if xm.shape[1] != params.c or instruction.matrix.shape[1] != params.c:
        raise EncoderError("feature/instruction dim does not match params.c")
    b = params.base_queries
    bq = b @ params.w_q
    text_part = attention(bq, instruction.matrix @ params.w_k, instruction.matrix @ params.w_v)
    vision_part = attention(bq, xm @ params.w_k, xm @ params.w_v)
    return b + text_part + vision_part


def instruction_queried_token(
    x: FrameFeatures | np.ndarray, queries: np.ndarray, params: EncoderParams
) -> np.ndarray:
    """Mean-pooled cross-attention readout of the frame, then projected.

    Literal form: project(mean over queries of softmax(Q X^T) X). No key or
    query projections and no logit scaling here.
    """
    xm = _frame_matrix(x)
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != xm.shape[1]:
        raise EncoderError("queries must be M x C matching the frame dim")
    attended = softmax(queries @ xm.T, axis=1) @ xm
    pooled = attended.mean(axis=0)
    return pooled @ params.p_q


def grid_pool(x: FrameFeatures | np.ndarray, n_v: int) -> np.ndarray:
    """Average-pool the HxH patch grid into n_v tokens (row-major cells).

    The patch rows are interpreted as an HxH grid (H = sqrt(row count));
    n_v must be a supported perfect square whose side divides H. n_v = 4 on
    a 16x16 grid is a stride-8 2x2 partition, n_v = 64 stride 2, etc.
    """
    xm = _frame_matrix(x)
    n_patches = xm.shape[0]
    h = math.isqrt(n_patches)
    if h * h != n_patches:
        raise EncoderError(f"patch count {n_patches} is not a perfect square")
    if n_v not in SUPPORTED_POOL_SIZES:
        raise EncoderError(f"unsupported token count {n_v}; pick one of {SUPPORTED_POOL_SIZES}")
    g = math.isqrt(n_v)
    if h % g != 0:
        raise EncoderError(f"grid side {g} does not divide patch side {h}")
    stride = h // g
    c = xm.shape[1]
    view = xm.reshape(g, stride, g, stride, c)
    return view.mean(axis=(1, 3)).reshape(n_v, c)


def encode_frame(
    x: FrameFeatures | np.ndarray,
    instruction: InstructionEmbedding,
    n_v: int,
    params: EncoderParams,
) -> ObservationTokens:
    """One instruction-queried token plus n_v instruction-agnostic tokens."""
    queries = generate_queries(x, instruction, params)
    queried = instruction_queried_token(x, queries, params)
    agnostic = grid_pool(x, n_v) @ params.p_v
    return ObservationTokens(queried=queried, agnostic=agnostic, n_v=n_v)

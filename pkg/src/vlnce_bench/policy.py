"""Trainable action head: linear maps from prompt features to an action-type
distribution plus quantitative arguments, with analytic gradients.

The loss is mean cross-entropy over the four action types plus 0.1-weighted
squared error on the raw (pre-clamp) arguments; distances compare in meters
and angles in degrees/100 so both regression terms stay O(1). Weights are
seeded from the same xoshiro256** family as the encoder, drawn row-major in
the order w_type, w_dist, w_deg; biases start at zero.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass

import numpy as np

from .actions import ActionKind, LowLevelAction, format_action, parse_action
from .encoder import EncoderParams, InstructionEmbedding, ObservationTokens, grid_pool
from .encoder import embed_instruction, generate_queries, instruction_queried_token
from .prompt import ElementKind, PromptSequence, assemble_prompt, scan_prompt
from .rng import Xoshiro256StarStar, derive_seed
from .world import FrameFeatures

ARG_LOSS_WEIGHT = 0.1
DEGREE_SCALE = 100.0
DIST_CLAMP = (0.05, 1.0)
DEG_CLAMP = (5.0, 90.0)

CHECKPOINT_SCHEMA_VERSION = 1


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyParams:
    seed: int
    c: int
    w_type: np.ndarray  # 4 x 4C
    b_type: np.ndarray  # (4,)
    w_dist: np.ndarray  # (4C,)
    b_dist: float
    w_deg: np.ndarray  # (4C,)
    b_deg: float

    @property
    def feature_dim(self) -> int:
        return 4 * self.c


@dataclass(frozen=True)
class StepPrediction:
    type_logits: np.ndarray  # (4,), order (FORWARD, TURN_LEFT, TURN_RIGHT, STOP)
    raw_distance: float
    raw_degrees: float


def make_policy_params(seed: int, c: int = 32) -> PolicyParams:
    d = 4 * c
    rng = Xoshiro256StarStar(derive_seed(seed, "policy"))
    bound = 1.0 / math.sqrt(d)
    w_type = np.empty((4, d), dtype=np.float64)
    for r in range(4):
        for j in range(d):
            w_type[r, j] = rng.uniform(-bound, bound)
    w_dist = np.array([rng.uniform(-bound, bound) for _ in range(d)], dtype=np.float64)
    w_deg = np.array([rng.uniform(-bound, bound) for _ in range(d)], dtype=np.float64)
    return PolicyParams(
        seed=seed,
        c=c,
        w_type=w_type,
        b_type=np.zeros(4, dtype=np.float64),
        w_dist=w_dist,
        b_dist=0.0,
        w_deg=w_deg,
        b_deg=0.0,
    )


# -- featurization -------------------------------------------------------------


def featurize(seq: PromptSequence) -> np.ndarray:
    """4C feature vector: [current queried; mean current agnostic;
    mean history queried; mean history agnostic] (history parts zero at t=1)."""
    scan_prompt(seq)  # structural validation
    visuals = [e.vector for e in seq.elements if e.kind is ElementKind.VISUAL]
    per_hist = 1 + seq.n_hist
    n_hist_visuals = (seq.frame_count - 1) * per_hist
    hist = visuals[:n_hist_visuals]
    cur = visuals[n_hist_visuals:]
    cur_queried = np.asarray(cur[0], dtype=np.float64)
    c = cur_queried.shape[0]
    cur_agnostic = np.mean(np.asarray(cur[1:], dtype=np.float64), axis=0)
    if hist:
        hq = [hist[k * per_hist] for k in range(seq.frame_count - 1)]
        ha = [
            hist[k * per_hist + 1 + j]
            for k in range(seq.frame_count - 1)
            for j in range(seq.n_hist)
        ]
        hist_queried = np.mean(np.asarray(hq, dtype=np.float64), axis=0)
        hist_agnostic = np.mean(np.asarray(ha, dtype=np.float64), axis=0)
    else:
        hist_queried = np.zeros(c, dtype=np.float64)
        hist_agnostic = np.zeros(c, dtype=np.float64)
    return np.concatenate([cur_queried, cur_agnostic, hist_queried, hist_agnostic])


class FrameEncoder:
    """Per-frame token encoder with caching, shared by agents and training.

    Each frame is encoded once into (queried, history-size agnostic,
    current-size agnostic); prompts for successive steps reuse the cache.
    """

    def __init__(
        self,
        params: EncoderParams,
        instruction: InstructionEmbedding,
        n_hist: int = 4,
        n_cur: int = 64,
    ) -> None:
        self.params = params
        self.instruction = instruction
        self.n_hist = n_hist
        self.n_cur = n_cur
        self._cache: dict[int, tuple[ObservationTokens, ObservationTokens]] = {}

    def encode(self, frame: FrameFeatures) -> tuple[ObservationTokens, ObservationTokens]:
        """(history-budget tokens, current-budget tokens) for one frame."""
        key = id(frame)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        queries = generate_queries(frame, self.instruction, self.params)
        queried = instruction_queried_token(frame, queries, self.params)
        as_hist = ObservationTokens(
            queried=queried, agnostic=grid_pool(frame, self.n_hist) @ self.params.p_v,
            n_v=self.n_hist,
        )
        as_cur = ObservationTokens(
            queried=queried, agnostic=grid_pool(frame, self.n_cur) @ self.params.p_v,
            n_v=self.n_cur,
        )
        self._cache[key] = (as_hist, as_cur)
        return as_hist, as_cur

    def prompt_for(self, frames: list[FrameFeatures] | tuple[FrameFeatures, ...]) -> PromptSequence:
        """Prompt for a frame sequence whose last element is the current frame."""
        if not frames:
            raise PolicyError("prompt_for needs at least one frame")
        history = [self.encode(f)[0] for f in frames[:-1]]
        current = self.encode(frames[-1])[1]
        return assemble_prompt(
            history, current, list(self.instruction.tokens), self.n_hist, self.n_cur
        )


def featurize_samples(
    samples,
    enc_params: EncoderParams,
    n_hist: int = 4,
    n_cur: int = 64,
) -> list[tuple[np.ndarray, LowLevelAction]]:
    """Featurize collected step samples for training (one encoder per
    distinct instruction; frame encodings cached by object identity)."""
    encoders: dict[str, FrameEncoder] = {}
    out = []
    for s in samples:
        enc = encoders.get(s.instruction)
        if enc is None:
            enc = FrameEncoder(
                enc_params, embed_instruction(s.instruction, enc_params), n_hist, n_cur
            )
            encoders[s.instruction] = enc
        out.append((featurize(enc.prompt_for(s.frames)), s.oracle_action))
    return out


def policy_predict_fn(
    policy_params: PolicyParams,
    enc_params: EncoderParams,
    n_hist: int = 4,
    n_cur: int = 64,
):
    """Single-step predictor: StepSample -> decoded-and-reparsed action."""
    encoders: dict[str, FrameEncoder] = {}

    def fn(sample) -> LowLevelAction:
        enc = encoders.get(sample.instruction)
        if enc is None:
            enc = FrameEncoder(
                enc_params, embed_instruction(sample.instruction, enc_params), n_hist, n_cur
            )
            encoders[sample.instruction] = enc
        sentence = decode(predict(policy_params, featurize(enc.prompt_for(sample.frames))))
        return parse_action(sentence)

    return fn


# -- prediction and loss -------------------------------------------------------


def predict(params: PolicyParams, features: np.ndarray) -> StepPrediction:
    f = np.asarray(features, dtype=np.float64)
    if f.shape != (params.feature_dim,):
        raise PolicyError(f"features must have shape ({params.feature_dim},), got {f.shape}")
    return StepPrediction(
        type_logits=params.w_type @ f + params.b_type,
        raw_distance=float(params.w_dist @ f + params.b_dist),
        raw_degrees=float(params.w_deg @ f + params.b_deg),
    )


def decode(prediction: StepPrediction) -> str:
    """Argmax the type, clamp the arguments, and emit the canonical sentence."""
    idx = int(np.argmax(prediction.type_logits))
    kind = ActionKind(idx)
    if kind is ActionKind.STOP:
        return format_action(LowLevelAction(ActionKind.STOP))
    if kind is ActionKind.FORWARD:
        d = min(max(prediction.raw_distance, DIST_CLAMP[0]), DIST_CLAMP[1])
        return format_action(LowLevelAction(ActionKind.FORWARD, d))
    deg = min(max(prediction.raw_degrees, DEG_CLAMP[0]), DEG_CLAMP[1])
    return format_action(LowLevelAction(kind, deg))


def _target_arrays(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    feats = np.asarray([f for f, _ in batch], dtype=np.float64)
    types = np.array([a.kind.value for _, a in batch], dtype=np.int64)
    dist_t = np.array(
        [a.value if a.kind is ActionKind.FORWARD else 0.0 for _, a in batch], dtype=np.float64
    )
    deg_t = np.array(
        [a.value if a.kind in (ActionKind.TURN_LEFT, ActionKind.TURN_RIGHT) else 0.0
         for _, a in batch],
        dtype=np.float64,
    )
    return feats, types, dist_t, deg_t, np.arange(len(batch))


def loss(params: PolicyParams, batch: list[tuple[np.ndarray, LowLevelAction]]) -> float:
    """Mean CE over types + 0.1 * masked squared argument error (raw args)."""
    if not batch:
        raise PolicyError("loss needs a non-empty batch")
    feats, types, dist_t, deg_t, rows = _target_arrays(batch)
    logits = feats @ params.w_type.T + params.b_type
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    ce = log_z - shifted[rows, types]

    fwd_mask = (types == ActionKind.FORWARD.value).astype(np.float64)
    turn_mask = np.isin(
        types, (ActionKind.TURN_LEFT.value, ActionKind.TURN_RIGHT.value)
    ).astype(np.float64)
    raw_dist = feats @ params.w_dist + params.b_dist
    raw_deg = feats @ params.w_deg + params.b_deg
    dist_err = (raw_dist - dist_t) * fwd_mask
    deg_err = ((raw_deg - deg_t) / DEGREE_SCALE) * turn_mask
    per_sample = ce + ARG_LOSS_WEIGHT * (dist_err**2 + deg_err**2)
    return float(per_sample.mean())


def grad(params: PolicyParams, batch: list[tuple[np.ndarray, LowLevelAction]]) -> PolicyParams:
    """Analytic gradient of `loss`, shaped like PolicyParams."""
    if not batch:
        raise PolicyError("grad needs a non-empty batch")
    feats, types, dist_t, deg_t, rows = _target_arrays(batch)
    n = len(batch)
    logits = feats @ params.w_type.T + params.b_type
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    d_logits = probs
    d_logits[rows, types] -= 1.0
    d_logits /= n

    fwd_mask = (types == ActionKind.FORWARD.value).astype(np.float64)
    turn_mask = np.isin(
        types, (ActionKind.TURN_LEFT.value, ActionKind.TURN_RIGHT.value)
    ).astype(np.float64)
    raw_dist = feats @ params.w_dist + params.b_dist
    raw_deg = feats @ params.w_deg + params.b_deg
    d_raw_dist = 2.0 * ARG_LOSS_WEIGHT * (raw_dist - dist_t) * fwd_mask / n
    d_raw_deg = (
        2.0 * ARG_LOSS_WEIGHT * ((raw_deg - deg_t) / DEGREE_SCALE) * turn_mask / (DEGREE_SCALE * n)
    )
    return PolicyParams(
        seed=params.seed,
        c=params.c,
        w_type=d_logits.T @ feats,
        b_type=d_logits.sum(axis=0),
        w_dist=feats.T @ d_raw_dist,
        b_dist=float(d_raw_dist.sum()),
        w_deg=feats.T @ d_raw_deg,
        b_deg=float(d_raw_deg.sum()),
    )


def train(
    params: PolicyParams,
    dataset: list[tuple[np.ndarray, LowLevelAction]],
    lr: float,
    epochs: int,
) -> tuple[PolicyParams, list[float]]:
    """Full-batch gradient descent; returns (final params, loss trace).

    The trace has epochs+1 entries: the loss before each update plus the
    final loss. Deterministic in (params, dataset, lr, epochs).
    """
    if lr < 0:
        raise PolicyError("learning rate must be >= 0")
    if epochs < 1:
        raise PolicyError("epochs must be >= 1")
    if not dataset:
        raise PolicyError("train needs a non-empty dataset")
    trace = []
    p = params
    for _ in range(epochs):
        trace.append(loss(p, dataset))
        g = grad(p, dataset)
        p = PolicyParams(
            seed=p.seed,
            c=p.c,
            w_type=p.w_type - lr * g.w_type,
            b_type=p.b_type - lr * g.b_type,
            w_dist=p.w_dist - lr * g.w_dist,
            b_dist=p.b_dist - lr * g.b_dist,
            w_deg=p.w_deg - lr * g.w_deg,
            b_deg=p.b_deg - lr * g.b_deg,
        )
    trace.append(loss(p, dataset))
    return p, trace


# -- checkpoints ---------------------------------------------------------------


def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(s: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(s.encode("ascii"))
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return a


def save_checkpoint(path: str, params: PolicyParams, m: int) -> None:
    """Write a JSON checkpoint (matrices base64, little-endian f8, row-major)."""
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "c": params.c,
        "m": m,
        "seed": params.seed,
        "w_type": _encode_array(params.w_type),
        "b_type": _encode_array(params.b_type),
        "w_dist": _encode_array(params.w_dist),
        "b_dist": _encode_array(np.array([params.b_dist])),
        "w_deg": _encode_array(params.w_deg),
        "b_deg": _encode_array(np.array([params.b_deg])),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=0)
        f.write("\n")


def load_checkpoint(path: str) -> tuple[PolicyParams, int]:
    """Read a checkpoint; returns (params, encoder query count m)."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise PolicyError(f"unsupported checkpoint schema: {doc.get('schema_version')}")
    c = int(doc["c"])
    d = 4 * c
    params = PolicyParams(
        seed=int(doc["seed"]),
        c=c,
        w_type=_decode_array(doc["w_type"], (4, d)),
        b_type=_decode_array(doc["b_type"], (4,)),
        w_dist=_decode_array(doc["w_dist"], (d,)),
        b_dist=float(_decode_array(doc["b_dist"], (1,))[0]),
        w_deg=_decode_array(doc["w_deg"], (d,)),
        b_deg=float(_decode_array(doc["b_deg"], (1,))[0]),
    )
    return params, int(doc["m"])

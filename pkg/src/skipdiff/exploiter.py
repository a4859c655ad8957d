"""Denoising transformer trained and run under contextualized noise.

Latents live in embedding-plus-position space: condition positions (source
tokens and the separator) are pinned to their anchor values at every
diffusion level, in both training and generation, and only target
positions receive noise. Each latent-producing function re-anchors through
an exact masked select and then asserts the invariant.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, asdict
from typing import Callable, Sequence

import numpy as np

from . import nn
from .autodiff import (Tape, Tensor, backward, const, gather_rows,
                       matmul as ad_matmul, sum_ as ad_sum,
                       transpose as ad_transpose, where_mask)
from .data import EOS, PAD, SEP, EncodedBatch, Vocab
from .errors import ContractError, ParameterError, TruncationError
from .metrics import bleu
from .rng import RngStream
from .schedule import ScheduledNoise

PredictFn = Callable[[dict, "LatentState", np.ndarray], Tensor]


@dataclass(frozen=True)
class ExploiterConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    steps: int = 64          # diffusion step count
    max_len: int = 32
    ffn_mult: int = 4
    lambda_reg: float = 1.0
    rounding_loss: bool = True
    emb_scale: float = 1.0
    pos_scale: float = 0.5
    time_scale: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ParameterError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.layers < 1 or self.steps < 1 or self.max_len < 4:
            raise ParameterError("layers, steps must be >= 1 and max_len >= 4")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExploiterConfig":
        return cls(**d)


def init_exploiter_params(cfg: ExploiterConfig, vocab_size: int,
                          rng: RngStream) -> dict[str, np.ndarray]:
    d = cfg.model_dim
    p: dict[str, np.ndarray] = {
        "emb": rng.normal((vocab_size, d)) * cfg.emb_scale,
        "pos": rng.normal((cfg.max_len, d)) * cfg.pos_scale,
        "time": rng.normal((cfg.steps + 1, d)) * cfg.time_scale,
    }
    for i in range(cfg.layers):
        pre = f"block{i}"
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{pre}.attn.{name}"] = nn.init_matrix(rng, d, d)
        # no key bias: attention scores are invariant to a shared key
        # offset, so it would be a dead parameter
        for name in ("bq", "bv", "bo"):
            p[f"{pre}.attn.{name}"] = np.zeros(d)
        p[f"{pre}.ffn.w1"] = nn.init_matrix(rng, d, cfg.ffn_mult * d)
        p[f"{pre}.ffn.b1"] = np.zeros(cfg.ffn_mult * d)
        p[f"{pre}.ffn.w2"] = nn.init_matrix(rng, cfg.ffn_mult * d, d)
        p[f"{pre}.ffn.b2"] = np.zeros(d)
        for ln in ("ln1", "ln2"):
            p[f"{pre}.{ln}.g"] = np.ones(d)
            p[f"{pre}.{ln}.b"] = np.zeros(d)
    p["ln_f.g"] = np.ones(d)
    p["ln_f.b"] = np.zeros(d)
    p["head.w"] = nn.init_matrix(rng, d, d)
    p["head.b"] = np.zeros(d)
    emb = p["emb"]
    gram = np.sum((emb[:, None, :] - emb[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(gram, np.inf)
    if gram.min() <= 0.0:
        raise ContractError("embedding rows must be pairwise distinct at init")
    return p


def params_checksum(params: dict[str, np.ndarray]) -> int:
    crc = 0
    for name in sorted(params):
        crc = zlib.crc32(name.encode(), crc)
        crc = zlib.crc32(np.ascontiguousarray(params[name]).tobytes(), crc)
    return crc


def _lift(params: dict[str, np.ndarray], tape: Tape | None) -> dict[str, Tensor]:
    if tape is None:
        return {k: Tensor(v) for k, v in params.items()}
    return {k: tape.leaf(v) for k, v in params.items()}


@dataclass
class LatentState:
    """One diffusion level of a batch of latents."""

    z: Tensor
    t: np.ndarray                 # per-row level, shape [B]
    condition_mask: np.ndarray    # [B, L]
    pad_mask: np.ndarray          # [B, L]
    anchor: Tensor                # emb(ids) + pos, [B, L, d]
    z0: Tensor | None = None      # level-0 latents this state was diffused from

    @property
    def canvas_mask(self) -> np.ndarray:
        """Diffused region: everything after the condition block."""
        return ~self.condition_mask


def _assert_anchored(state: LatentState) -> None:
    cond = state.condition_mask
    if not np.array_equal(state.z.data[cond], state.anchor.data[cond]):
        raise ContractError("condition positions drifted from their anchor")


def _schedule_arrays(schedule: ScheduledNoise | Sequence[ScheduledNoise],
                     batch_size: int, steps: int) -> np.ndarray:
    """Per-row cumulative signal levels, shape [B, T+1]."""
    if isinstance(schedule, ScheduledNoise):
        if schedule.steps != steps:
            raise ContractError(f"schedule has {schedule.steps} steps, config has {steps}")
        return np.broadcast_to(schedule.alpha_bar_x, (batch_size, steps + 1)).copy()
    schedules = list(schedule)
    if len(schedules) != batch_size:
        raise ContractError(f"{len(schedules)} schedules for batch of {batch_size}")
    for s in schedules:
        if s.steps != steps:
            raise ContractError(f"schedule has {s.steps} steps, config has {steps}")
    return np.stack([s.alpha_bar_x for s in schedules], axis=0)


def _pointer_arrays(schedule: ScheduledNoise | Sequence[ScheduledNoise],
                    batch_size: int, steps: int) -> np.ndarray:
    """Per-row schedule pointers, shape [B, T+1].

    The timestep embedding indexes the pointer (the actual signal level)
    rather than the raw step index: under a contextual schedule the same
    step can sit at different levels per sentence, and level-faithful
    conditioning keeps those samples consistent. With an all-advance
    schedule the pointer equals the step index, so the fixed-schedule
    behavior is unchanged.
    """
    if isinstance(schedule, ScheduledNoise):
        return np.broadcast_to(schedule.pointer, (batch_size, steps + 1))
    return np.stack([s.pointer for s in list(schedule)], axis=0)


def _rows(t) -> np.ndarray:
    arr = np.asarray(t, dtype=np.int64)
    return arr


def embed_and_sample_z0(batch: EncodedBatch, params, schedule, rng: RngStream,
                        cfg: ExploiterConfig, tape: Tape | None = None,
                        lifted: dict[str, Tensor] | None = None) -> LatentState:
    """Level-0 latents: anchor plus beta_0 noise on target positions only."""
    pt = lifted if lifted is not None else _lift(params, tape)
    b, l = batch.ids.shape
    alpha = _schedule_arrays(schedule, b, cfg.steps)
    anchor = gather_rows(pt["emb"], batch.ids) + pt["pos"][0:l, :]
    beta0 = 1.0 - alpha[:, 0]
    eps = rng.normal((b, l, cfg.model_dim))
    noisy = anchor + const(np.sqrt(beta0)[:, None, None] * eps)
    z0 = where_mask(batch.canvas_mask[..., None], noisy, anchor)
    state = LatentState(z=z0, t=np.zeros(b, dtype=np.int64),
                        condition_mask=batch.condition_mask,
                        pad_mask=batch.pad_mask, anchor=anchor)
    state.z0 = state.z
    _assert_anchored(state)
    return state


def forward_diffuse(state: LatentState, t, schedule, rng: RngStream,
                    cfg: ExploiterConfig) -> LatentState:
    """Closed-form marginal q(z_t | z_0) on target positions."""
    b = state.z.shape[0]
    t_rows = np.broadcast_to(_rows(t), (b,)).copy()
    if t_rows.min() < 1 or t_rows.max() > cfg.steps:
        raise IndexError(f"diffusion step outside 1..{cfg.steps}")
    alpha = _schedule_arrays(schedule, b, cfg.steps)
    a_t = alpha[np.arange(b), t_rows]
    eps = rng.normal(state.z.shape)
    diffused = const(np.sqrt(a_t)[:, None, None]) * state.z \
        + const(np.sqrt(1.0 - a_t)[:, None, None] * eps)
    z_t = where_mask(state.canvas_mask[..., None], diffused, state.anchor)
    out = LatentState(z=z_t, t=t_rows, condition_mask=state.condition_mask,
                      pad_mask=state.pad_mask, anchor=state.anchor, z0=state.z)
    _assert_anchored(out)
    return out


def forward_diffuse_stepwise(state: LatentState, t: int, schedule,
                             rng: RngStream, cfg: ExploiterConfig) -> LatentState:
    """Compose t effective per-step transitions instead of the closed form.

    The chain is seeded with the level-0 marginal sqrt(a_0) z_0 +
    sqrt(1 - a_0) eps, the state the per-step transitions evolve; composing
    them then lands exactly on the closed-form marginal at level t.
    """
    b = state.z.shape[0]
    if not 1 <= t <= cfg.steps:
        raise IndexError(f"diffusion step outside 1..{cfg.steps}")
    alpha = _schedule_arrays(schedule, b, cfg.steps)
    a0 = alpha[:, 0][:, None, None]
    x = np.sqrt(a0) * state.z.data + np.sqrt(1.0 - a0) * rng.normal(state.z.shape)
    for s in range(1, t + 1):
        beta = 1.0 - alpha[:, s] / alpha[:, s - 1]
        beta = beta[:, None, None]
        x = np.sqrt(1.0 - beta) * x + np.sqrt(beta) * rng.normal(x.shape)
    z_t = where_mask(state.canvas_mask[..., None], const(x), state.anchor)
    out = LatentState(z=z_t, t=np.full(b, t, dtype=np.int64),
                      condition_mask=state.condition_mask,
                      pad_mask=state.pad_mask, anchor=state.anchor, z0=state.z)
    _assert_anchored(out)
    return out


def _predict(pt: dict[str, Tensor], z: Tensor, t_rows: np.ndarray,
             cfg: ExploiterConfig) -> Tensor:
    l = z.shape[1]
    time_rows = gather_rows(pt["time"], t_rows[:, None])  # [B, 1, d]
    x = z + pt["pos"][0:l, :] + time_rows
    for i in range(cfg.layers):
        x = nn.transformer_block(x, pt, f"block{i}", cfg.heads)
    x = nn.layer_norm(x, pt["ln_f.g"], pt["ln_f.b"])
    return nn.linear(x, pt["head.w"], pt["head.b"])


def denoise_predict(params, state: LatentState, t, cfg: ExploiterConfig,
                    schedule=None) -> np.ndarray:
    """Predicted level-0 latents for the whole sequence; deterministic.

    With a schedule, the timestep embedding indexes the schedule pointer
    at t; without one, the raw step index (the two coincide for
    all-advance schedules).
    """
    b = state.z.shape[0]
    t_rows = np.broadcast_to(_rows(t), (b,)).copy()
    if t_rows.min() < 1 or t_rows.max() > cfg.steps:
        raise IndexError(f"diffusion step outside 1..{cfg.steps}")
    if schedule is not None:
        pointer = _pointer_arrays(schedule, b, cfg.steps)
        t_rows = pointer[np.arange(b), t_rows]
    return _predict(_lift(params, None), state.z, t_rows, cfg).data


def diffusion_loss(params: dict[str, np.ndarray], batch: EncodedBatch,
                   schedule, rng: RngStream, cfg: ExploiterConfig,
                   t_rows: np.ndarray | None = None,
                   predict_fn: PredictFn | None = None
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Single-t estimate of the denoising objective, with gradients.

    Per row, t is drawn uniformly from 1..T. Rows with t >= 2 regress the
    prediction onto the sampled level-0 latents over the generation
    canvas; rows with t = 1 regress onto the clean anchor over all
    non-pad positions. Two latent-anchoring terms complete the loss: a
    prior-matching norm penalty on the level-0 latents, scaled by the
    schedule's terminal signal level (the weight the evidence bound puts
    on matching the standard-normal endpoint; a bare unscaled pull to
    zero collapses the embedding table), and a rounding cross-entropy
    that keeps embedding rows separable. All terms are means over their
    selected coordinates.
    """
    tape = Tape()
    pt = _lift(params, tape)
    loss = diffusion_loss_graph(pt, batch, schedule, rng, cfg,
                                t_rows=t_rows, predict_fn=predict_fn)
    grads_by_node = backward(tape, loss)
    grads = {name: grads_by_node[pt[name].node_id] for name in params}
    return loss.item(), grads


def diffusion_loss_graph(pt: dict[str, Tensor], batch: EncodedBatch, schedule,
                         rng: RngStream, cfg: ExploiterConfig,
                         t_rows: np.ndarray | None = None,
                         predict_fn: PredictFn | None = None) -> Tensor:
    """The loss as a graph over already-lifted parameters; one node."""
    b, l = batch.ids.shape
    z0_state = embed_and_sample_z0(batch, None, schedule, rng, cfg, lifted=pt)
    if t_rows is None:
        t_rows = rng.integers(1, cfg.steps + 1, (b,))
    else:
        t_rows = np.asarray(t_rows, dtype=np.int64)
    zt_state = forward_diffuse(z0_state, t_rows, schedule, rng, cfg)
    if predict_fn is None:
        pointer = _pointer_arrays(schedule, b, cfg.steps)
        levels = pointer[np.arange(b), t_rows]
        pred = _predict(pt, zt_state.z, levels, cfg)
    else:
        pred = predict_fn(pt, zt_state, t_rows)

    is_first = (t_rows == 1)[:, None]
    target = where_mask(is_first[..., None], z0_state.anchor, z0_state.z)
    weights = np.where(is_first, ~batch.pad_mask, batch.canvas_mask)
    loss = nn.masked_mse(pred, target, weights[..., None].astype(np.float64))
    if cfg.lambda_reg:
        alpha = _schedule_arrays(schedule, b, cfg.steps)
        scale = const(np.sqrt(alpha[:, cfg.steps])[:, None, None])
        reg = nn.masked_mse(z0_state.z * scale, const(0.0),
                            batch.canvas_mask[..., None].astype(np.float64))
        loss = loss + reg * cfg.lambda_reg
    if cfg.rounding_loss:
        logits = _rounding_logits(pt, pred, l)
        loss = loss + nn.masked_cross_entropy(
            logits, batch.ids, batch.canvas_mask.astype(np.float64))
    return loss


def _rounding_logits(pt: dict[str, Tensor], pred: Tensor, l: int) -> Tensor:
    """Negative squared distance from de-positioned predictions to embeddings."""
    depos = pred - pt["pos"][0:l, :]
    z_sq = ad_sum(depos * depos, axis=-1, keepdims=True)
    emb = pt["emb"]
    cross = ad_matmul(depos, ad_transpose(emb, (1, 0)))
    e_sq = ad_sum(emb * emb, axis=-1)
    return (cross * 2.0 - z_sq) - e_sq


def sample_step(params, state: LatentState, t: int, schedule, rng: RngStream,
                cfg: ExploiterConfig, predict_fn: PredictFn | None = None,
                t_prev: int | None = None) -> LatentState:
    """One reverse step t -> t_prev (default t-1) via the posterior mean.

    Rows whose cumulative signal level does not change between the two
    levels are passed through bit-exactly; noise is added only when the
    destination level is positive.
    """
    if not 1 <= t <= cfg.steps:
        raise IndexError(f"diffusion step outside 1..{cfg.steps}")
    t_lo = t - 1 if t_prev is None else t_prev
    if not 0 <= t_lo < t:
        raise IndexError(f"destination level {t_lo} invalid for step {t}")
    b = state.z.shape[0]
    alpha = _schedule_arrays(schedule, b, cfg.steps)
    pt = _lift(params, None)
    t_rows = np.full(b, t, dtype=np.int64)
    if predict_fn is None:
        levels = _pointer_arrays(schedule, b, cfg.steps)[:, t]
        z0_hat = _predict(pt, state.z, levels, cfg).data
    else:
        z0_hat = predict_fn(pt, state, t_rows)
        z0_hat = z0_hat.data if isinstance(z0_hat, Tensor) else np.asarray(z0_hat)

    a_hi = alpha[:, t][:, None, None]
    a_lo = alpha[:, t_lo][:, None, None]
    beta = 1.0 - a_hi / a_lo
    mu = (np.sqrt(a_lo) * beta / (1.0 - a_hi)) * z0_hat \
        + (np.sqrt(1.0 - beta) * (1.0 - a_lo) / (1.0 - a_hi)) * state.z.data
    if t_lo >= 1:
        var = beta * (1.0 - a_lo) / (1.0 - a_hi)
        mu = mu + np.sqrt(var) * rng.normal(state.z.shape)
    skip = (alpha[:, t] == alpha[:, t_lo])[:, None, None]
    nxt = np.where(skip, state.z.data, mu)
    z_next = where_mask(state.canvas_mask[..., None], const(nxt), state.anchor)
    out = LatentState(z=z_next, t=np.full(b, t_lo, dtype=np.int64),
                      condition_mask=state.condition_mask,
                      pad_mask=state.pad_mask, anchor=state.anchor, z0=state.z0)
    _assert_anchored(out)
    return out


def _step_levels(steps_total: int, num_steps: int | None) -> list[int]:
    """Decreasing level sequence T ... 0, evenly strided when shortened."""
    if num_steps is None or num_steps >= steps_total:
        return list(range(steps_total, -1, -1))
    if num_steps < 1:
        raise ParameterError(f"need at least one denoising step, got {num_steps}")
    levels = np.unique(np.round(np.linspace(steps_total, 0, num_steps + 1)).astype(int))
    return sorted(set(levels.tolist()) | {steps_total, 0}, reverse=True)


def prepare_generation_batch(srcs: list[list[str]], vocab: Vocab,
                             cfg: ExploiterConfig) -> EncodedBatch:
    """Condition-only rows: source + SEP, with the rest open for generation."""
    l = cfg.max_len
    ids = np.full((len(srcs), l), 0, dtype=np.int64)
    cond = np.zeros((len(srcs), l), dtype=bool)
    for i, src in enumerate(srcs):
        if len(src) + 2 > l:
            raise TruncationError(
                f"source of length {len(src)} leaves no room in max_len {l}")
        row = vocab.encode(list(src)) + [SEP]
        ids[i, :len(row)] = row
        cond[i, :len(row)] = True
    pad = np.zeros_like(cond)
    return EncodedBatch(ids, cond, pad)


def generate_batch(params, srcs: list[list[str]], schedule, rng: RngStream,
                   cfg: ExploiterConfig, vocab: Vocab,
                   num_steps: int | None = None,
                   predict_fn: PredictFn | None = None) -> list[list[str]]:
    """Denoise each source's target block from pure Gaussian noise."""
    batch = prepare_generation_batch(srcs, vocab, cfg)
    b, l = batch.ids.shape
    pt = _lift(params, None)
    anchor = gather_rows(pt["emb"], batch.ids) + pt["pos"][0:l, :]
    y_t = rng.normal((b, l, cfg.model_dim))
    z = where_mask(batch.canvas_mask[..., None], const(y_t), anchor)
    state = LatentState(z=z, t=np.full(b, cfg.steps, dtype=np.int64),
                        condition_mask=batch.condition_mask,
                        pad_mask=batch.pad_mask, anchor=anchor)
    _assert_anchored(state)
    levels = _step_levels(cfg.steps, num_steps)
    for hi, lo in zip(levels[:-1], levels[1:]):
        state = sample_step(params, state, hi, schedule, rng, cfg,
                            predict_fn=predict_fn, t_prev=lo)
    outputs = []
    pos = params["pos"][0:l, :]
    for i in range(b):
        mask = state.canvas_mask[i]
        latents = state.z.data[i][mask] - pos[mask]
        token_ids = round_to_tokens(latents, params["emb"])
        tokens = []
        for idx in token_ids:
            # PAD is the learned past-the-end filler, so it also terminates
            if idx == EOS or idx == PAD:
                break
            tokens.append(vocab.token_of(int(idx)))
        outputs.append(tokens)
    return outputs


def generate(params, src: list[str], schedule, rng: RngStream,
             cfg: ExploiterConfig, vocab: Vocab,
             num_steps: int | None = None,
             predict_fn: PredictFn | None = None) -> list[str]:
    return generate_batch(params, [src], schedule, rng, cfg, vocab,
                          num_steps=num_steps, predict_fn=predict_fn)[0]


def round_to_tokens(z0_target: np.ndarray, embedding: np.ndarray) -> np.ndarray:
    """Nearest embedding row per position; ties resolve to the lowest id."""
    z = np.asarray(z0_target, dtype=np.float64)
    dists = ((z[:, None, :] - embedding[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(dists, axis=1)


def mbr_select(candidates: list[list[str]]) -> list[str]:
    """Candidate with the highest mean BLEU consensus against the others."""
    if not candidates:
        raise ContractError("candidate set is empty")
    if len(candidates) == 1:
        return candidates[0]
    scores = []
    for i, cand in enumerate(candidates):
        others = [c for j, c in enumerate(candidates) if j != i]
        vals = []
        for other in others:
            if not other:
                vals.append(1.0 if not cand else 0.0)
            elif not cand:
                vals.append(0.0)
            else:
                vals.append(bleu(cand, [other]))
        scores.append(sum(vals) / len(vals))
    return candidates[int(np.argmax(scores))]

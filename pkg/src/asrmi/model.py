"""Toy encoder-decoder ASR model with CTC and attention heads.

Two encoder families play the roles of distinct architectures: a tanh RNN
(``recurrent``) and a stack of same-padded 1-D convolutions
(``convolutional``). Both feed a CTC head and a recurrent attention decoder
whose dot-product scores get a learned location term computed from the
previous step's attention weights, so it can step through the input.
"""
from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import Tensor
from .seeding import derive_rng

log = logging.getLogger(__name__)

ARCHITECTURES = ("recurrent", "convolutional")
MAGIC = b"MIAC"
FORMAT_VERSION = 1
MASK_BIAS = -1e9


class CheckpointError(ValueError):
    """Unreadable, truncated, or inconsistent checkpoint file."""


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 8
    hidden_dim: int = 48
    num_encoder_layers: int = 1
    vocab_size: int = 12
    attention_weight: float = 0.7
    architecture: str = "recurrent"
    seed: int = 0
    smoothing: float = losses.DEFAULT_SMOOTHING
    conv_width: int = 5
    location_window: int = 10

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.hidden_dim < 1 or self.input_dim < 1:
            raise ValueError("hidden_dim and input_dim must be >= 1")
        if not 1 <= self.num_encoder_layers <= 2:
            raise ValueError("num_encoder_layers must be 1 or 2")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if not 0.0 <= self.attention_weight <= 1.0:
            raise ValueError("attention_weight must be in [0, 1]")
        if self.conv_width < 1 or self.conv_width % 2 == 0:
            raise ValueError("conv_width must be a positive odd number")
        if self.location_window < 1:
            raise ValueError("location_window must be >= 1")

    @property
    def dec_vocab(self) -> int:
        return self.vocab_size + 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.config, {k: v.copy() for k, v in self.params.items()},
                          json.loads(json.dumps(self.metadata)))


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_score: float

    @property
    def confidence(self) -> float:
        return math.exp(self.log_score / max(1, len(self.tokens) + 1))


def param_specs(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], int]]:
    """name -> (shape, fan_in) in a fixed order."""
    h, v, vd = cfg.hidden_dim, cfg.vocab_size, cfg.dec_vocab
    specs: dict[str, tuple[tuple[int, ...], int]] = {}
    d_in = cfg.input_dim
    for layer in range(cfg.num_encoder_layers):
        if cfg.architecture == "recurrent":
            specs[f"enc{layer}.w_in"] = ((d_in, h), d_in)
            specs[f"enc{layer}.w_rec"] = ((h, h), h)
            specs[f"enc{layer}.b"] = ((h,), d_in)
        else:
            fan = cfg.conv_width * d_in
            specs[f"enc{layer}.w"] = ((fan, h), fan)
            specs[f"enc{layer}.b"] = ((h,), fan)
        d_in = h
    specs["ctc.w"] = ((h, v), h)
    specs["ctc.b"] = ((v,), h)
    specs["dec.emb"] = ((vd, h), vd)
    specs["dec.w_in"] = ((2 * h, h), 2 * h)
    specs["dec.w_rec"] = ((h, h), h)
    specs["dec.b"] = ((h,), 2 * h)
    specs["att.w_q"] = ((h, h), h)
    specs["att.w_k"] = ((h, h), h)
    specs["att.end"] = ((h,), h)
    specs["att.loc"] = ((cfg.location_window, 1), cfg.location_window)
    specs["out.w"] = ((2 * h, h), 2 * h)
    specs["out.b"] = ((h,), 2 * h)
    specs["out.v"] = ((h, vd), h)
    specs["out.bv"] = ((vd,), h)
    return specs


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def init_model(cfg: ModelConfig) -> Checkpoint:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameters, float32-representable."""
    params = {}
    for name, (shape, fan_in) in param_specs(cfg).items():
        s = 1.0 / math.sqrt(fan_in)
        params[name] = _f32(derive_rng(cfg.seed, "init", name).uniform(-s, s, size=shape))
    return Checkpoint(cfg, params, {"epochs": 0})


def validate_checkpoint(ckpt: Checkpoint) -> None:
    specs = param_specs(ckpt.config)
    if set(specs) != set(ckpt.params):
        missing = sorted(set(specs) - set(ckpt.params))
        extra = sorted(set(ckpt.params) - set(specs))
        raise CheckpointError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, (shape, _) in specs.items():
        arr = ckpt.params[name]
        if arr.shape != shape:
            raise CheckpointError(f"{name}: shape {arr.shape} != expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"{name}: non-finite values")


# ---------------------------------------------------------------------------
# forward


def _as_params(ckpt: Checkpoint, trainable: bool) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=trainable) for k, v in ckpt.params.items()}


def _pad_frames(frames_list: Sequence[np.ndarray]) -> tuple[np.ndarray, list[int]]:
    lengths = [int(f.shape[0]) for f in frames_list]
    t_max = max(lengths)
    out = np.zeros((len(frames_list), t_max, frames_list[0].shape[1]))
    for b, f in enumerate(frames_list):
        out[b, :f.shape[0]] = f
    return out, lengths


def _encode(p: dict[str, Tensor], cfg: ModelConfig, x: Tensor, lengths: Sequence[int]) -> Tensor:
    n_batch, t_max, _ = x.shape
    h_dim = cfg.hidden_dim
    valid = np.arange(t_max)[None, :] < np.asarray(lengths)[:, None]  # [B, T]
    ragged = not valid.all()
    h = x
    for layer in range(cfg.num_encoder_layers):
        d_in = h.shape[2]
        if cfg.architecture == "recurrent":
            proj = ad.reshape(ad.add_bias(ad.matmul(ad.reshape(h, (n_batch * t_max, d_in)),
                                                    p[f"enc{layer}.w_in"]), p[f"enc{layer}.b"]),
                              (n_batch, t_max, h_dim))
            state = ad.constant(np.zeros((n_batch, h_dim)))
            outs = []
            for t in range(t_max):
                pre = ad.add(ad.getitem(proj, (slice(None), t, slice(None))),
                             ad.matmul(state, p[f"enc{layer}.w_rec"]))
                new = ad.tanh(pre)
                if ragged:
                    live = np.broadcast_to(valid[:, t:t + 1], (n_batch, h_dim))
                    new = ad.where(live, new, state)
                state = new
                outs.append(new)
            h = ad.stack(outs, axis=1)
        else:
            half = cfg.conv_width // 2
            pad = ad.constant(np.zeros((n_batch, half, d_in)))
            padded = ad.concat([pad, h, pad], axis=1) if half else h
            windows = ad.concat([ad.getitem(padded, (slice(None), slice(k, k + t_max), slice(None)))
                                 for k in range(cfg.conv_width)], axis=2)
            flat = ad.reshape(windows, (n_batch * t_max, cfg.conv_width * d_in))
            h = ad.reshape(ad.tanh(ad.add_bias(ad.matmul(flat, p[f"enc{layer}.w"]),
                                               p[f"enc{layer}.b"])),
                           (n_batch, t_max, h_dim))
            if ragged:
                h = ad.mul(h, np.broadcast_to(valid[:, :, None], h.shape).astype(float))
    return h


class _DecoderState:
    __slots__ = ("s", "ctx", "att")

    def __init__(self, s, ctx, att):
        self.s, self.ctx, self.att = s, ctx, att


class _Memory:
    """Encoder outputs prepared for attention."""

    def __init__(self, p: dict[str, Tensor], cfg: ModelConfig, enc: Tensor, lengths):
        n_batch, t_enc, h_dim = enc.shape
        t_max = t_enc + 1
        lengths = np.asarray(lengths)
        # one extra slot per utterance, right after its last frame, holds a
        # learned end-of-input vector the decoder can attend to before stopping
        valid = np.arange(t_enc)[None, :] < lengths[:, None]
        end_slot = np.zeros((n_batch, t_max, h_dim))
        end_slot[np.arange(n_batch), lengths, :] = 1.0
        padded = ad.concat([ad.mul(enc, np.broadcast_to(valid[:, :, None], enc.shape).astype(float)),
                            ad.constant(np.zeros((n_batch, 1, h_dim)))], axis=1)
        end = ad.broadcast_to(ad.reshape(p["att.end"], (1, 1, h_dim)), (n_batch, t_max, h_dim))
        values = ad.add(padded, ad.mul(end, end_slot))
        self.values = values
        keys = ad.reshape(ad.matmul(ad.reshape(values, (n_batch * t_max, h_dim)), p["att.w_k"]),
                          (n_batch, t_max, h_dim))
        self.keys_t = ad.transpose(keys, (0, 2, 1))
        self.mask_bias = np.where(np.arange(t_max)[None, :] <= lengths[:, None], 0.0, MASK_BIAS)
        # shift[t', t*K + j] = 1 iff t - t' == j: location features are a
        # learned filter over how far each frame lies past the last focus
        window = cfg.location_window
        shift = np.zeros((t_max, t_max, window))
        for j in range(window):
            idx = np.arange(t_max - j)
            shift[idx, idx + j, j] = 1.0
        self.shift = shift.reshape(t_max, t_max * window)
        self.window = window
        self.t_max = t_max
        self.h_dim = h_dim

    def select(self, rows: np.ndarray) -> "_Memory":
        """Memory for a batch that repeats rows of the current one (no-grad use)."""
        m = object.__new__(_Memory)
        m.values = ad.constant(self.values.data[rows])
        m.keys_t = ad.constant(self.keys_t.data[rows])
        m.mask_bias = self.mask_bias[rows]
        m.shift, m.window, m.t_max, m.h_dim = self.shift, self.window, self.t_max, self.h_dim
        return m


def _window_bias(prev_att: np.ndarray, mem: _Memory) -> np.ndarray:
    """Restrict attention to [peak, peak + window) of the previous step (0 at start)."""
    start = np.where(prev_att.any(axis=1), prev_att.argmax(axis=1), 0)
    t = np.arange(mem.t_max)[None, :]
    inside = (t >= start[:, None]) & (t < start[:, None] + mem.window)
    return np.where(inside, mem.mask_bias, MASK_BIAS)


def _initial_state(n_batch: int, mem: _Memory) -> _DecoderState:
    z = ad.constant(np.zeros((n_batch, mem.h_dim)))
    return _DecoderState(z, z, ad.constant(np.zeros((n_batch, mem.t_max))))


def _decoder_step(p: dict[str, Tensor], cfg: ModelConfig, mem: _Memory, prev_tokens: np.ndarray,
                  st: _DecoderState) -> tuple[Tensor, _DecoderState]:
    n_batch = len(prev_tokens)
    h_dim = mem.h_dim
    onehot = np.zeros((n_batch, cfg.dec_vocab))
    onehot[np.arange(n_batch), prev_tokens] = 1.0
    emb = ad.matmul(onehot, p["dec.emb"])
    inp = ad.concat([emb, st.ctx], axis=1)
    s = ad.tanh(ad.add_bias(ad.add(ad.matmul(inp, p["dec.w_in"]), ad.matmul(st.s, p["dec.w_rec"])),
                            p["dec.b"]))
    q = ad.reshape(ad.matmul(s, p["att.w_q"]), (n_batch, 1, h_dim))
    scores = ad.reshape(ad.bmm(q, mem.keys_t), (n_batch, mem.t_max))
    scores = ad.scale(scores, 1.0 / math.sqrt(h_dim))
    loc = ad.reshape(ad.matmul(ad.reshape(ad.matmul(st.att, mem.shift),
                                          (n_batch * mem.t_max, mem.window)), p["att.loc"]),
                     (n_batch, mem.t_max))
    scores = ad.add(ad.add(scores, loc), _window_bias(st.att.data, mem))
    att = ad.exp(ad.log_softmax(scores, axis=-1))
    ctx = ad.reshape(ad.bmm(ad.reshape(att, (n_batch, 1, mem.t_max)), mem.values),
                     (n_batch, h_dim))
    o = ad.tanh(ad.add_bias(ad.matmul(ad.concat([s, ctx], axis=1), p["out.w"]), p["out.b"]))
    logp = ad.log_softmax(ad.add_bias(ad.matmul(o, p["out.v"]), p["out.bv"]), axis=-1)
    return logp, _DecoderState(s, ctx, att)


def forward_batch(ckpt: Checkpoint, frames: Tensor, lengths: Sequence[int],
                  targets: Sequence[Sequence[int]] | None = None,
                  params: dict[str, Tensor] | None = None) -> tuple[Tensor, Tensor | None]:
    """Batched forward pass.

    ``frames`` is [B, T, F] (zero padded past ``lengths``). Returns CTC
    log-probabilities [B, T, V] and, when ``targets`` are given, teacher-forced
    decoder log-probabilities [B, U, V'] with U = longest target + 1.
    """
    cfg = ckpt.config
    frames = ad._as_tensor(frames)
    if frames.ndim != 3 or frames.shape[2] != cfg.input_dim:
        raise ad.ShapeError("forward (frames must be [B, T, input_dim])", frames.shape)
    n_batch, t_max, _ = frames.shape
    p = params if params is not None else _as_params(ckpt, trainable=False)
    enc = _encode(p, cfg, frames, lengths)
    flat = ad.reshape(enc, (n_batch * t_max, cfg.hidden_dim))
    ctc_logits = ad.add_bias(ad.matmul(flat, p["ctc.w"]), p["ctc.b"])
    ctc_lp = ad.reshape(ad.log_softmax(ctc_logits, axis=-1), (n_batch, t_max, cfg.vocab_size))
    if targets is None:
        return ctc_lp, None
    if len(targets) != n_batch:
        raise ValueError(f"{len(targets)} targets for batch of {n_batch}")
    u_max = max(len(t) for t in targets) + 1
    sos = losses.sos_id(cfg.dec_vocab)
    eos = losses.eos_id(cfg.dec_vocab)
    inputs = np.full((n_batch, u_max), eos)
    for b, tgt in enumerate(targets):
        inputs[b, 0] = sos
        inputs[b, 1:len(tgt) + 1] = tgt
    mem = _Memory(p, cfg, enc, lengths)
    st = _initial_state(n_batch, mem)
    steps = []
    for u in range(u_max):
        logp, st = _decoder_step(p, cfg, mem, inputs[:, u], st)
        steps.append(logp)
    return ctc_lp, ad.stack(steps, axis=1)


def forward(ckpt: Checkpoint, frames, target: Sequence[int] | None = None
            ) -> tuple[Tensor, Tensor | None]:
    """Single utterance: CTC log-probs [T, V] and decoder log-probs [U, V'] (if target)."""
    frames = ad._as_tensor(frames)
    if frames.ndim != 2:
        raise ad.ShapeError("forward (frames must be [T, input_dim])", frames.shape)
    batched = ad.reshape(frames, (1, *frames.shape))
    ctc_lp, dec_lp = forward_batch(ckpt, batched, [frames.shape[0]],
                                   None if target is None else [list(target)])
    ctc_lp = ad.reshape(ctc_lp, ctc_lp.shape[1:])
    if dec_lp is not None:
        dec_lp = ad.reshape(dec_lp, dec_lp.shape[1:])
    return ctc_lp, dec_lp


def loss_pair_batch(ckpt: Checkpoint, frames: Tensor, lengths: Sequence[int],
                    targets: Sequence[Sequence[int]], params: dict[str, Tensor] | None = None
                    ) -> tuple[Tensor, Tensor, np.ndarray]:
    """(attention KL [B], CTC [B], feasible mask [B])."""
    ctc_lp, dec_lp = forward_batch(ckpt, frames, lengths, targets, params)
    ctc, feasible = losses.ctc_loss_batch(ctc_lp, targets, lengths)
    att = losses.attention_kl_batch(dec_lp, targets, ckpt.config.smoothing)
    return att, ctc, feasible


def combined_batch(ckpt: Checkpoint, att: Tensor, ctc: Tensor) -> Tensor:
    return losses.combined_loss(att, ctc, ckpt.config.attention_weight)


# ---------------------------------------------------------------------------
# training


def _adam(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: dict, lr: float,
          beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    for name in params:
        g = grads[name]
        m = state.setdefault(("m", name), np.zeros_like(g))
        v = state.setdefault(("v", name), np.zeros_like(g))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)


def train(ckpt: Checkpoint, utterances: Sequence, epochs: int, lr: float = 5e-3,
          batch_size: int = 16, seed: int = 0, clip_norm: float = 5.0,
          fingerprint: str | None = None) -> Checkpoint:
    """Adam on the combined loss; returns a new checkpoint with the loss history.

    ``utterances`` need ``utterance_id``, ``target`` and ``frames`` attributes.
    Example order per epoch is a seeded permutation of the id-sorted set.
    """
    cfg = ckpt.config
    data = sorted(utterances, key=lambda u: u.utterance_id)
    for u in data:
        if u.frames.shape[1] != cfg.input_dim:
            raise ValueError(f"{u.utterance_id}: frame width {u.frames.shape[1]} != {cfg.input_dim}")
        if any(not 1 <= t < cfg.vocab_size for t in u.target):
            raise ValueError(f"{u.utterance_id}: token outside vocabulary")
    out = ckpt.copy()
    if epochs <= 0 or not data:
        return out
    params = {k: v.copy() for k, v in out.params.items()}
    opt: dict = {}
    history = list(out.metadata.get("loss_history", []))
    for epoch in range(epochs):
        order = derive_rng(seed, "epoch", epoch).permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(data), batch_size):
            batch = [data[i] for i in order[start:start + batch_size]]
            x, lengths = _pad_frames([u.frames for u in batch])
            targets = [list(u.target) for u in batch]
            p = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
            with ad.Tape() as tape:
                att, ctc, feasible = loss_pair_batch(out, ad.constant(x), lengths, targets, p)
                if not feasible.all():
                    raise ValueError("training batch contains CTC-infeasible utterances")
                loss = ad.mean(losses.combined_loss(att, ctc, cfg.attention_weight))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch {start // batch_size}")
            grads = tape.backward(loss)
            g = {k: grads[p[k]] for k in params}
            norm = math.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
            if clip_norm and norm > clip_norm:
                g = {k: v * (clip_norm / norm) for k, v in g.items()}
            _adam(params, g, opt, lr)
            total += value * len(batch)
            count += len(batch)
        history.append(total / count)
        log.info("epoch %d loss %.4f", epoch + 1, history[-1])
    out.params = {k: _f32(v) for k, v in params.items()}
    out.metadata = {**out.metadata, "epochs": int(out.metadata.get("epochs", 0)) + epochs,
                    "loss_history": history, "final_loss": history[-1],
                    "train_seed": seed, "lr": lr, "batch_size": batch_size}
    if fingerprint is not None:
        out.metadata["dataset_fingerprint"] = fingerprint
    validate_checkpoint(out)
    return out


# ---------------------------------------------------------------------------
# decoding


def beam_decode(ckpt: Checkpoint, frames, beam_size: int = 8, k: int = 4,
                max_len: int | None = None) -> list[Hypothesis]:
    """Attention-decoder beam search; returns up to ``k`` finished hypotheses.

    Scores are summed log-probabilities including the end symbol. Ties break
    on the token sequence (lexicographic). Search stops once ``k`` finished
    hypotheses score at least as well as the best live one.
    """
    if not beam_size >= k >= 1:
        raise ValueError(f"need beam_size >= k >= 1, got beam_size={beam_size}, k={k}")
    cfg = ckpt.config
    frames = np.asarray(frames, dtype=np.float64)
    max_len = frames.shape[0] if max_len is None else max_len
    sos = losses.sos_id(cfg.dec_vocab)
    eos = losses.eos_id(cfg.dec_vocab)
    expand = list(range(1, cfg.vocab_size)) + [eos]
    with ad.no_grad():
        p = _as_params(ckpt, trainable=False)
        enc = _encode(p, cfg, ad.constant(frames[None]), [frames.shape[0]])
        base = _Memory(p, cfg, enc, [frames.shape[0]])
        live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
        state = _initial_state(1, base)
        finished: list[tuple[tuple[int, ...], float]] = []
        for step in range(max_len + 1):
            mem = base.select(np.zeros(len(live), dtype=int))
            prev = np.array([h[0][-1] if h[0] else sos for h in live])
            logp, new_state = _decoder_step(p, cfg, mem, prev, state)
            lp = logp.data
            if step == max_len:
                finished += [(toks, score + lp[i, eos]) for i, (toks, score) in enumerate(live)]
                break
            cands = []
            for i, (toks, score) in enumerate(live):
                for c in expand:
                    cands.append((score + lp[i, c], toks, c, i))
            cands.sort(key=lambda c: (-c[0], c[1] + ((c[2],) if c[2] != eos else ()), c[2] == eos))
            keep = cands[:beam_size]
            next_live, rows = [], []
            for score, toks, c, i in keep:
                if c == eos:
                    finished.append((toks, float(score)))
                else:
                    next_live.append((toks + (c,), float(score)))
                    rows.append(i)
            if not next_live:
                break
            finished.sort(key=lambda h: (-h[1], h[0]))
            if len(finished) >= k and finished[k - 1][1] >= max(s for _, s in next_live):
                break
            idx = np.array(rows)
            state = _DecoderState(ad.constant(new_state.s.data[idx]), ad.constant(new_state.ctx.data[idx]),
                                  ad.constant(new_state.att.data[idx]))
            live = next_live
    finished.sort(key=lambda h: (-h[1], h[0]))
    return [Hypothesis(toks, float(score)) for toks, score in finished[:k]]


def greedy_token_accuracy(ckpt: Checkpoint, utterances: Sequence) -> float:
    """1 - (total edits / total reference tokens) under beam-1 decoding, floored at 0."""
    from .error_features import levenshtein

    edits = ref = 0
    for u in utterances:
        hyp = beam_decode(ckpt, u.frames, beam_size=1, k=1)[0]
        edits += levenshtein(u.target, hyp.tokens).edits
        ref += len(u.target)
    return max(0.0, 1.0 - edits / max(1, ref))


# ---------------------------------------------------------------------------
# checkpoint I/O


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    validate_checkpoint(ckpt)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    header = json.dumps({"config": ckpt.config.to_dict(), "metadata": ckpt.metadata},
                        sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name in param_specs(ckpt.config):
        arr = ckpt.params[name]
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.asarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos} (need {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic (not a MIAC checkpoint)")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint config: {exc}") from None
    (n_params,) = r.unpack("<I")
    params = {}
    for _ in range(n_params):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8", errors="replace")
        (rank,) = r.unpack("<I")
        if rank > 8:
            raise CheckpointError(f"{name}: implausible rank {rank}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(dims)) if rank else 1
        vals = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float64)
        params[name] = vals.reshape(dims)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last parameter")
    ckpt = Checkpoint(cfg, params, header.get("metadata", {}))
    validate_checkpoint(ckpt)
    return ckpt


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())

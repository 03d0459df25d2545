"""CTC and attention (label-smoothed KL) losses.

Blank id is 0 in the CTC vocabulary of size V. The attention decoder works
over V' = V + 2 classes: the CTC ids, then start-of-sequence (V) and
end-of-sequence (V + 1).
"""
from __future__ import annotations

import itertools
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BLANK = 0
DEFAULT_SMOOTHING = 0.1
BRUTE_FORCE_MAX_T = 8
BRUTE_FORCE_MAX_V = 4


class CTCLoss(NamedTuple):
    loss: Tensor
    feasible: bool


def sos_id(v_dec: int) -> int:
    return v_dec - 2


def eos_id(v_dec: int) -> int:
    return v_dec - 1


def ctc_min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per label plus a blank between repeats."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_feasible(target: Sequence[int], n_frames: int) -> bool:
    return ctc_min_frames(target) <= n_frames


def _extended(target: Sequence[int]) -> list[int]:
    ext = [BLANK]
    for tok in target:
        ext += [int(tok), BLANK]
    return ext


def _check_target(target: Sequence[int], v: int) -> None:
    for tok in target:
        if not 1 <= tok < v:
            raise ValueError(f"target token {tok} outside [1, {v - 1}]")


def ctc_loss_batch(logprobs: Tensor, targets: Sequence[Sequence[int]],
                   lengths: Sequence[int] | None = None) -> tuple[Tensor, np.ndarray]:
    """Negative log-likelihood per utterance for a [B, T, V] batch.

    Runs the forward recursion over blank-extended labels in log space using
    autodiff ops, so the gradient comes from the tape. Infeasible targets
    yield +inf and a False entry in the returned feasibility mask.
    """
    logprobs = ad._as_tensor(logprobs)
    if logprobs.ndim != 3:
        raise ad.ShapeError("ctc_loss_batch", logprobs.shape)
    n_batch, t_max, v = logprobs.shape
    if len(targets) != n_batch:
        raise ValueError(f"{len(targets)} targets for batch of {n_batch}")
    lengths = [t_max] * n_batch if lengths is None else [int(n) for n in lengths]
    if any(not 1 <= n <= t_max for n in lengths):
        raise ValueError(f"frame lengths {lengths} outside [1, {t_max}]")
    for tgt in targets:
        _check_target(tgt, v)

    exts = [_extended(tgt) for tgt in targets]
    s_lens = np.array([len(e) for e in exts])
    n_states = int(s_lens.max())
    ext = np.zeros((n_batch, n_states), dtype=np.intp)
    for b, e in enumerate(exts):
        ext[b, :len(e)] = e

    # log transition matrix [B, from, to]
    log_trans = np.full((n_batch, n_states, n_states), -np.inf)
    for b, e in enumerate(exts):
        for s in range(len(e)):
            log_trans[b, s, s] = 0.0
            if s >= 1:
                log_trans[b, s - 1, s] = 0.0
            if s >= 2 and e[s] != BLANK and e[s] != e[s - 2]:
                log_trans[b, s - 2, s] = 0.0

    emit = ad.gather(logprobs, np.broadcast_to(ext[:, None, :], (n_batch, t_max, n_states)))
    init = np.full((n_batch, n_states), -np.inf)
    init[:, 0] = 0.0
    if n_states > 1:
        init[s_lens > 1, 1] = 0.0
    alpha = ad.add(ad.getitem(emit, (slice(None), 0, slice(None))), init)
    ragged = any(n != t_max for n in lengths)
    frame_len = np.array(lengths)[:, None]
    for t in range(1, t_max):
        prev = ad.broadcast_to(ad.reshape(alpha, (n_batch, n_states, 1)),
                               (n_batch, n_states, n_states))
        step = ad.logsumexp(ad.add(prev, log_trans), axis=1)
        new = ad.add(step, ad.getitem(emit, (slice(None), t, slice(None))))
        if ragged:
            live = np.broadcast_to(frame_len > t, (n_batch, n_states))
            alpha = ad.where(live, new, alpha)
        else:
            alpha = new

    last = np.stack([s_lens - 1, np.maximum(s_lens - 2, 0)], axis=1)
    end_bias = np.zeros((n_batch, 2))
    end_bias[s_lens == 1, 1] = -np.inf
    final = ad.add(ad.gather(alpha, last), end_bias)
    loss = ad.neg(ad.logsumexp(final, axis=-1))
    feasible = np.array([ctc_feasible(tgt, n) for tgt, n in zip(targets, lengths)])
    return loss, feasible


def ctc_loss(logprobs, target: Sequence[int]) -> CTCLoss:
    """CTC loss for a single [T, V] log-probability matrix."""
    logprobs = ad._as_tensor(logprobs)
    if logprobs.ndim != 2:
        raise ad.ShapeError("ctc_loss", logprobs.shape)
    batched = ad.reshape(logprobs, (1, *logprobs.shape))
    loss, feasible = ctc_loss_batch(batched, [list(target)])
    return CTCLoss(ad.reshape(loss, ()), bool(feasible[0]))


def ctc_brute_force(logprobs, target: Sequence[int]) -> float:
    """-log P(target) by enumerating every frame labelling (test oracle)."""
    lp = np.asarray(logprobs.data if isinstance(logprobs, Tensor) else logprobs, dtype=float)
    n_frames, v = lp.shape
    if n_frames > BRUTE_FORCE_MAX_T or v > BRUTE_FORCE_MAX_V:
        raise ValueError(f"brute force limited to T<={BRUTE_FORCE_MAX_T}, V<={BRUTE_FORCE_MAX_V}; "
                         f"got T={n_frames}, V={v}")
    target = tuple(int(t) for t in target)
    total = []
    for path in itertools.product(range(v), repeat=n_frames):
        collapsed = [k for k, _ in itertools.groupby(path)]
        if tuple(k for k in collapsed if k != BLANK) == target:
            total.append(np.sum(lp[np.arange(n_frames), path]))
    if not total:
        return float("inf")
    vals = np.array(total)
    m = vals.max()
    if m == -np.inf:
        return float("inf")
    return float(-(m + np.log(np.sum(np.exp(vals - m)))))


def smoothed_targets(targets: Sequence[Sequence[int]], v_dec: int, smoothing: float,
                     u_max: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Label-smoothed target distributions [B, U, V'] and validity mask [B, U]."""
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    lens = [len(t) + 1 for t in targets]
    u_max = max(lens) if u_max is None else u_max
    q = np.zeros((len(targets), u_max, v_dec))
    mask = np.zeros((len(targets), u_max))
    eos = eos_id(v_dec)
    for b, tgt in enumerate(targets):
        labels = list(tgt) + [eos]
        for u, lab in enumerate(labels):
            q[b, u, :] = smoothing / v_dec
            q[b, u, lab] += 1.0 - smoothing
            mask[b, u] = 1.0
    return q, mask


def attention_kl_batch(dec_logprobs: Tensor, targets: Sequence[Sequence[int]],
                       smoothing: float = DEFAULT_SMOOTHING) -> Tensor:
    """Per-utterance mean over positions of KL(q_u || p_u) for a [B, U, V'] batch."""
    dec_logprobs = ad._as_tensor(dec_logprobs)
    if dec_logprobs.ndim != 3:
        raise ad.ShapeError("attention_kl_batch", dec_logprobs.shape)
    n_batch, u_max, v_dec = dec_logprobs.shape
    if len(targets) != n_batch:
        raise ValueError(f"{len(targets)} targets for batch of {n_batch}")
    for tgt in targets:
        _check_target(tgt, v_dec - 2)
    if max(len(t) + 1 for t in targets) != u_max:
        raise ValueError(f"decoder positions {u_max} != longest target + 1")
    q, mask = smoothed_targets(targets, v_dec, smoothing, u_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_entropy = np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0).sum(-1)
    cross = ad.sum(ad.mul(dec_logprobs, q), axis=-1)
    per_pos = ad.sub(neg_entropy, cross)
    weights = mask / mask.sum(axis=1, keepdims=True)
    return ad.sum(ad.mul(per_pos, weights), axis=-1)


def attention_kl_loss(dec_logprobs, target: Sequence[int],
                      smoothing: float = DEFAULT_SMOOTHING) -> Tensor:
    """Attention loss for a single [U, V'] matrix with U = len(target) + 1."""
    dec_logprobs = ad._as_tensor(dec_logprobs)
    if dec_logprobs.ndim != 2:
        raise ad.ShapeError("attention_kl_loss", dec_logprobs.shape)
    if dec_logprobs.shape[0] != len(target) + 1:
        raise ValueError(f"expected {len(target) + 1} decoder positions, got {dec_logprobs.shape[0]}")
    batched = ad.reshape(dec_logprobs, (1, *dec_logprobs.shape))
    return ad.reshape(attention_kl_batch(batched, [list(target)], smoothing), ())


def combined_loss(att, ctc, att_weight: float):
    """att_weight * att + (1 - att_weight) * ctc; works on floats and tensors."""
    if not 0.0 <= att_weight <= 1.0:
        raise ValueError(f"att_weight must be in [0, 1], got {att_weight}")
    # avoid 0 * inf when one side is an infeasible CTC loss
    if att_weight == 1.0:
        return att
    if att_weight == 0.0:
        return ctc
    if isinstance(att, Tensor) or isinstance(ctc, Tensor):
        return ad.add(ad.scale(att, att_weight), ad.scale(ctc, 1.0 - att_weight))
    return att_weight * att + (1.0 - att_weight) * ctc

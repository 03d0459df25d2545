"""Loss features under Gaussian noise at fixed SNRs and under L-inf PGD perturbations.

The frame matrix is treated as the input signal. All draws for one utterance
are batched so a single forward pass covers every (SNR, run) or every radius.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import model as asr
from .seeding import derive_rng

LOSS_CEILING = 1e4
LOSS_NAMES = ("att", "ctc")


def default_snrs_db() -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(0.0, 50.0, 8))


def default_radii() -> tuple[float, ...]:
    fine = [round(0.001 * i, 3) for i in range(1, 10)]
    coarse = [round(0.01 * i, 2) for i in range(1, 8)]
    return tuple(fine + coarse)


@dataclass(frozen=True)
class GaussianConfig:
    snrs_db: tuple[float, ...] = field(default_factory=default_snrs_db)
    runs_per_snr: int = 4
    seed: int = 0

    def __post_init__(self):
        if not self.snrs_db:
            raise ValueError("snrs_db must be nonempty")
        if self.runs_per_snr < 1:
            raise ValueError("runs_per_snr must be >= 1")


@dataclass(frozen=True)
class AdvConfig:
    radii: tuple[float, ...] = field(default_factory=default_radii)
    step_size: float = 1.0
    steps: int = 1
    seed: int = 0

    def __post_init__(self):
        r = list(self.radii)
        if not r or any(e < 0 for e in r) or any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("radii must be nonempty, non-negative and strictly increasing")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def db_to_linear(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


def scale_noise_to_snr(x: np.ndarray, delta: np.ndarray, snr_linear: float) -> np.ndarray:
    """Rescale ``delta`` so that ||x||^2 / ||delta||^2 == snr_linear."""
    ex = float(np.sum(np.square(x)))
    ed = float(np.sum(np.square(delta)))
    if ex <= 0.0 or ed <= 0.0:
        raise ValueError("scale_noise_to_snr needs non-zero signal and noise energy")
    if snr_linear <= 0.0:
        raise ValueError("snr_linear must be positive")
    return np.sqrt(ex / (snr_linear * ed)) * delta


def measured_snr_db(x: np.ndarray, delta: np.ndarray) -> float:
    return 10.0 * np.log10(np.sum(np.square(x)) / np.sum(np.square(delta)))


def clamp_losses(values: np.ndarray) -> np.ndarray:
    """Replace +inf / NaN / overflow by the finite ceiling."""
    v = np.asarray(values, dtype=np.float64)
    return np.where(np.isfinite(v) & (v < LOSS_CEILING), v, LOSS_CEILING)


def loss_pairs(ckpt: asr.Checkpoint, frames: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """[B, 2] (attention KL, CTC) for a batch of equal-length copies of one utterance."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[None]
    n = frames.shape[0]
    with ad.no_grad():
        att, ctc, _ = asr.loss_pair_batch(ckpt, ad.constant(frames), [frames.shape[1]] * n,
                                          [list(target)] * n)
    return np.stack([att.data, ctc.data], axis=1)


def clean_losses(ckpt: asr.Checkpoint, x: np.ndarray, target: Sequence[int]) -> np.ndarray:
    return clamp_losses(loss_pairs(ckpt, x, target)[0])


def gaussian_noises(x: np.ndarray, cfg: GaussianConfig, utterance_id: str) -> np.ndarray:
    """[|S|, N, T, F] scaled noise, one seeded draw per (snr, run)."""
    out = np.empty((len(cfg.snrs_db), cfg.runs_per_snr, *x.shape))
    for i, snr_db in enumerate(cfg.snrs_db):
        for n in range(cfg.runs_per_snr):
            delta = derive_rng(cfg.seed, "gauss", utterance_id, i, n).standard_normal(x.shape)
            out[i, n] = scale_noise_to_snr(x, delta, db_to_linear(snr_db))
    return out


def gaussian_features(ckpt: asr.Checkpoint, x: np.ndarray, target: Sequence[int],
                      cfg: GaussianConfig, utterance_id: str = "") -> np.ndarray:
    """Per SNR (ascending as configured): [att mean, att std, ctc mean, ctc std]."""
    x = np.asarray(x, dtype=np.float64)
    noise = gaussian_noises(x, cfg, utterance_id)
    n_snr, n_run = noise.shape[:2]
    batch = (x[None, None] + noise).reshape(n_snr * n_run, *x.shape)
    vals = clamp_losses(loss_pairs(ckpt, batch, target)).reshape(n_snr, n_run, 2)
    mean = vals.mean(axis=1)
    std = vals.std(axis=1)
    return np.stack([mean[:, 0], std[:, 0], mean[:, 1], std[:, 1]], axis=1).reshape(-1)


def _input_gradients(ckpt: asr.Checkpoint, batch: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """d(combined loss)/d(input) for each copy in a [B, T, F] batch."""
    n = batch.shape[0]
    xt = ad.Tensor(batch, requires_grad=True)
    with ad.Tape() as tape:
        att, ctc, _ = asr.loss_pair_batch(ckpt, xt, [batch.shape[1]] * n, [list(target)] * n)
        # copies share no parameters with each other's inputs, so the gradient
        # of the sum holds every copy's own gradient
        loss = ad.sum(asr.combined_batch(ckpt, att, ctc))
    return tape.backward(loss)[xt]


def pgd_batch(ckpt: asr.Checkpoint, x: np.ndarray, target: Sequence[int],
              radii: Sequence[float], eta: float, steps: int, init: np.ndarray) -> np.ndarray:
    """Run sign-gradient ascent for every radius at once; returns [R, T, F] deltas."""
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(radii, dtype=np.float64)[:, None, None]
    delta = np.clip(np.asarray(init, dtype=np.float64), -eps, eps)
    for _ in range(steps):
        g = np.sign(_input_gradients(ckpt, x[None] + delta, target))
        delta = np.clip(delta + eta * g, -eps, eps)
    return delta


def uniform_init(shape, radii: Sequence[float], seed: int, utterance_id: str) -> np.ndarray:
    out = np.empty((len(radii), *shape))
    for i, eps in enumerate(radii):
        out[i] = derive_rng(seed, "pgd", utterance_id, i).uniform(-eps, eps, size=shape)
    return out


def pgd_perturb(ckpt: asr.Checkpoint, x: np.ndarray, target: Sequence[int], epsilon: float,
                eta: float = 1.0, steps: int = 1, seed: int = 0,
                utterance_id: str = "") -> np.ndarray:
    """Untargeted L-inf PGD from a uniform start; returns delta with |delta|_inf <= epsilon."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    init = uniform_init(x.shape, [epsilon], seed, utterance_id)
    return pgd_batch(ckpt, x, target, [epsilon], eta, steps, init)[0]


def adversarial_features(ckpt: asr.Checkpoint, x: np.ndarray, target: Sequence[int],
                         cfg: AdvConfig, utterance_id: str = "") -> np.ndarray:
    """Per radius (ascending): [att, ctc] at x + delta_eps."""
    x = np.asarray(x, dtype=np.float64)
    init = uniform_init(x.shape, cfg.radii, cfg.seed, utterance_id)
    delta = pgd_batch(ckpt, x, target, cfg.radii, cfg.step_size, cfg.steps, init)
    return clamp_losses(loss_pairs(ckpt, x[None] + delta, target)).reshape(-1)


def gaussian_columns(cfg: GaussianConfig) -> list[str]:
    return [f"gf.snr{db:g}.{loss}.{stat}" for db in cfg.snrs_db
            for loss in LOSS_NAMES for stat in ("mean", "std")]


def adversarial_columns(cfg: AdvConfig) -> list[str]:
    return [f"af.eps{eps:g}.{loss}" for eps in cfg.radii for loss in LOSS_NAMES]

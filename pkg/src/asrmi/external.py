"""Grey-box auditing from exported model outputs.

Per utterance ``<id>`` a logits directory holds:

* ``<id>.milg``      CTC log-probabilities [T, V]
* ``<id>.dec.milg``  teacher-forced decoder log-probabilities [U, V'] (attention loss)
* ``<id>.nbest.jsonl`` optional n-best list, one ``{"tokens": [...], "log_score": x}`` per line

MILG layout (little endian): magic ``MILG``, u16 version, u32 T, u32 V, then
T*V float32 values, row-major.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from . import error_features as errf
from . import losses
from . import model as asr
from . import perturb
from .features import FAMILIES, GRADIENT_FAMILIES, MODEL_FAMILIES, check_tag

MILG_MAGIC = b"MILG"
MILG_VERSION = 1
_HEADER = struct.Struct("<4sHII")


class MILGError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class AccessLevelError(PermissionError):
    """A feature family needs more model access than exported outputs provide."""


def milg_bytes(logprobs: np.ndarray) -> bytes:
    lp = np.asarray(logprobs)
    if lp.ndim != 2:
        raise ValueError(f"MILG payload must be 2-d, got shape {lp.shape}")
    t, v = lp.shape
    return _HEADER.pack(MILG_MAGIC, MILG_VERSION, t, v) + np.asarray(lp, dtype="<f4").tobytes()


def write_milg(path: str | os.PathLike, logprobs: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(milg_bytes(logprobs))


def parse_milg(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise MILGError("truncated magic", len(data))
    if data[:4] != MILG_MAGIC:
        raise MILGError(f"bad magic {data[:4]!r}", 0)
    if len(data) < _HEADER.size:
        raise MILGError("truncated header", len(data))
    _, version, t, v = _HEADER.unpack_from(data)
    if version != MILG_VERSION:
        raise MILGError(f"unsupported version {version}", 4)
    if t == 0 or v == 0:
        raise MILGError(f"empty matrix T={t}, V={v}", 6)
    need = _HEADER.size + 4 * t * v
    if len(data) != need:
        raise MILGError(f"payload size {len(data) - _HEADER.size} != 4*T*V = {4 * t * v}",
                        min(len(data), need))
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64).reshape(t, v)


def read_milg(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_milg(fh.read())


def read_nbest(path: str | os.PathLike) -> list[asr.Hypothesis]:
    hyps = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                hyps.append(asr.Hypothesis(tuple(int(t) for t in rec["tokens"]),
                                           float(rec["log_score"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MILGError(f"{path}:{lineno}: bad n-best record: {exc}", 0) from None
    hyps.sort(key=lambda h: (-h.log_score, h.tokens))
    return hyps


def write_nbest(path: str | os.PathLike, hyps: Sequence[asr.Hypothesis]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h in hyps:
            fh.write(json.dumps({"tokens": list(h.tokens), "log_score": h.log_score}) + "\n")


def export_outputs(ckpt: asr.Checkpoint, utterances: Sequence, out_dir: str | os.PathLike,
                   nbest: bool = True, beam_size: int = 8, k: int = errf.DEFAULT_TOP_K) -> None:
    """Write the grey-box view of ``ckpt`` on each utterance into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for u in utterances:
        ctc_lp, dec_lp = asr.forward(ckpt, u.frames, u.target)
        write_milg(out / f"{u.utterance_id}.milg", ctc_lp.data)
        write_milg(out / f"{u.utterance_id}.dec.milg", dec_lp.data)
        if nbest:
            write_nbest(out / f"{u.utterance_id}.nbest.jsonl",
                        asr.beam_decode(ckpt, u.frames, beam_size=beam_size, k=k))


def check_access(tag: str) -> None:
    check_tag(tag)
    fams = set(FAMILIES[tag])
    if fams & GRADIENT_FAMILIES:
        raise AccessLevelError(
            f"feature set {tag!r} needs adversarial perturbations, which require white-box "
            "gradient access to the model; exported logits give grey-box access only")
    if fams & MODEL_FAMILIES:
        raise AccessLevelError(
            f"feature set {tag!r} needs the model to be re-run on noisy inputs; exported "
            "logits give grey-box access only")


def grey_box_blocks(logits_dir: str | os.PathLike, utterance, families: Sequence[str],
                    smoothing: float = losses.DEFAULT_SMOOTHING,
                    top_k: int = errf.DEFAULT_TOP_K) -> dict[str, np.ndarray]:
    d = Path(logits_dir)
    uid = utterance.utterance_id
    y = list(utterance.target)
    out: dict[str, np.ndarray] = {}
    if "losses" in families:
        ctc_lp = read_milg(d / f"{uid}.milg")
        dec_lp = read_milg(d / f"{uid}.dec.milg")
        ctc = losses.ctc_loss(ctc_lp, y).loss.item()
        att = losses.attention_kl_loss(dec_lp, y, smoothing).item()
        out["losses"] = perturb.clamp_losses([att, ctc])
    if "errors" in families:
        path = d / f"{uid}.nbest.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"{path}: n-best sidecar required for error features")
        hyps = read_nbest(path)
        if not hyps:
            raise MILGError(f"{path}: empty n-best list", 0)
        out["errors"] = errf.error_block(y, hyps, top_k)
    return out

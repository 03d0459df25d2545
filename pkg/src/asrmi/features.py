"""Per-utterance MI feature extraction and the on-disk feature file."""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import error_features as errf
from . import model as asr
from . import perturb
from .forest import FEATURE_SET_TAGS, MIExample

FEATURE_FILE_FORMAT = "asrmi-features"
FEATURE_FILE_VERSION = 1
LOSS_COLUMNS = ["loss.att", "loss.ctc"]

FAMILIES = {
    "errors": ("errors",),
    "losses": ("losses",),
    "losses+GF": ("losses", "gf"),
    "losses+AF": ("losses", "af"),
    "losses+GF+AF": ("losses", "gf", "af"),
}
GRADIENT_FAMILIES = {"af"}
MODEL_FAMILIES = {"gf", "af"}


class LayoutError(ValueError):
    """Feature vectors with different column layouts were mixed."""


@dataclass(frozen=True)
class FeatureConfig:
    top_k: int = errf.DEFAULT_TOP_K
    beam_size: int = 8
    gaussian: perturb.GaussianConfig = field(default_factory=perturb.GaussianConfig)
    adversarial: perturb.AdvConfig = field(default_factory=perturb.AdvConfig)

    def __post_init__(self):
        if not self.beam_size >= self.top_k >= 1:
            raise ValueError("need beam_size >= top_k >= 1")


def check_tag(tag: str) -> None:
    if tag not in FAMILIES:
        raise ValueError(f"unknown feature set {tag!r}; expected one of {FEATURE_SET_TAGS}")


def family_columns(family: str, cfg: FeatureConfig) -> list[str]:
    if family == "errors":
        return errf.error_columns(cfg.top_k)
    if family == "losses":
        return list(LOSS_COLUMNS)
    if family == "gf":
        return perturb.gaussian_columns(cfg.gaussian)
    if family == "af":
        return perturb.adversarial_columns(cfg.adversarial)
    raise ValueError(f"unknown feature family {family!r}")


def layout(tag: str, cfg: FeatureConfig) -> list[str]:
    check_tag(tag)
    return [c for fam in FAMILIES[tag] for c in family_columns(fam, cfg)]


def layout_fingerprint(columns: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(columns).encode()).hexdigest()[:16]


def families_for(tags: Iterable[str]) -> list[str]:
    fams: list[str] = []
    for tag in tags:
        check_tag(tag)
        fams += [f for f in FAMILIES[tag] if f not in fams]
    return fams


def extract_utterance(ckpt: asr.Checkpoint, utt, families: Sequence[str],
                      cfg: FeatureConfig) -> dict[str, np.ndarray]:
    """Feature blocks keyed by family for one utterance (``frames``, ``target``, ``utterance_id``)."""
    x = np.asarray(utt.frames, dtype=np.float64)
    y = list(utt.target)
    out: dict[str, np.ndarray] = {}
    if "errors" in families:
        hyps = asr.beam_decode(ckpt, x, beam_size=cfg.beam_size, k=cfg.top_k)
        out["errors"] = errf.error_block(y, hyps, cfg.top_k)
    if "losses" in families:
        out["losses"] = perturb.clean_losses(ckpt, x, y)
    if "gf" in families:
        out["gf"] = perturb.gaussian_features(ckpt, x, y, cfg.gaussian, utt.utterance_id)
    if "af" in families:
        out["af"] = perturb.adversarial_features(ckpt, x, y, cfg.adversarial, utt.utterance_id)
    return out


def extract_all(ckpt: asr.Checkpoint, utterances: Sequence, families: Sequence[str],
                cfg: FeatureConfig, threads: int = 1) -> dict[str, dict[str, np.ndarray]]:
    """Blocks for every utterance keyed by utterance id; independent of worker scheduling."""
    utts = sorted(utterances, key=lambda u: u.utterance_id)
    if threads <= 1:
        return {u.utterance_id: extract_utterance(ckpt, u, families, cfg) for u in utts}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        blocks = list(pool.map(lambda u: extract_utterance(ckpt, u, families, cfg), utts))
    return {u.utterance_id: b for u, b in zip(utts, blocks)}


def assemble(blocks: dict[str, np.ndarray], tag: str) -> np.ndarray:
    check_tag(tag)
    return np.concatenate([blocks[f] for f in FAMILIES[tag]])


def make_examples(blocks: dict[str, dict[str, np.ndarray]], labelled: Sequence[tuple[str, int]],
                  speakers: dict[str, str], tag: str) -> list[MIExample]:
    return [MIExample(assemble(blocks[uid], tag), int(label), speakers[uid], uid, tag)
            for uid, label in labelled]


# ---------------------------------------------------------------------------
# feature files


@dataclass
class FeatureFile:
    feature_set: str
    columns: list[str]
    examples: list[MIExample]
    meta: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return layout_fingerprint(self.columns)

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.array([e.features for e in self.examples], dtype=np.float64)
        y = np.array([e.label for e in self.examples], dtype=np.int64)
        return X, y


def write_features(ff: FeatureFile, path: str | os.PathLike, append: bool = False) -> None:
    """Write (or append to) a feature file; appending requires an identical layout."""
    rows = list(ff.examples)
    if append and os.path.exists(path):
        old = read_features(path)
        if old.fingerprint != ff.fingerprint or old.feature_set != ff.feature_set:
            raise LayoutError(f"{path}: existing layout {old.feature_set}/{old.fingerprint} "
                              f"!= new {ff.feature_set}/{ff.fingerprint}")
        new_ids = {e.utterance_id for e in rows}
        rows = [e for e in old.examples if e.utterance_id not in new_ids] + rows
    rows.sort(key=lambda e: e.utterance_id)
    body = {
        "format": FEATURE_FILE_FORMAT, "version": FEATURE_FILE_VERSION,
        "feature_set": ff.feature_set, "columns": ff.columns,
        "layout_fingerprint": ff.fingerprint, "meta": ff.meta,
        "rows": [{"utterance_id": e.utterance_id, "speaker_id": e.speaker_id,
                  "label": int(e.label), "features": [float(v) for v in e.features]}
                 for e in rows],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, sort_keys=True)
        fh.write("\n")


def read_features(path: str | os.PathLike) -> FeatureFile:
    try:
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
    except json.JSONDecodeError as exc:
        raise LayoutError(f"{path}: not a feature file ({exc})") from None
    if body.get("format") != FEATURE_FILE_FORMAT:
        raise LayoutError(f"{path}: not an {FEATURE_FILE_FORMAT} file")
    cols = list(body["columns"])
    if layout_fingerprint(cols) != body.get("layout_fingerprint"):
        raise LayoutError(f"{path}: layout fingerprint does not match columns")
    tag = body["feature_set"]
    examples = []
    for r in body["rows"]:
        feats = np.asarray(r["features"], dtype=np.float64)
        if feats.shape != (len(cols),):
            raise LayoutError(f"{path}: row {r['utterance_id']} has {feats.size} values, "
                              f"expected {len(cols)}")
        examples.append(MIExample(feats, int(r["label"]), r["speaker_id"], r["utterance_id"], tag))
    return FeatureFile(tag, cols, examples, body.get("meta", {}))


def check_same_layout(train: FeatureFile, test: FeatureFile) -> None:
    if train.feature_set != test.feature_set or train.fingerprint != test.fingerprint:
        raise LayoutError(f"train layout {train.feature_set}/{train.fingerprint} != "
                          f"test layout {test.feature_set}/{test.fingerprint}")

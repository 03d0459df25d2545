"""Synthetic speaker/utterance corpus and membership-inference split manifests.

Each frame is ``token_scale * token_mean + speaker_offset + N(0, jitter^2)``,
so a speaker's identity is present in every frame it produces.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .seeding import derive_rng

SPLIT_NAMES = ("asr_train", "mi_train_pos", "mi_train_neg", "mi_test_pos", "mi_test_neg")
LEVELS = ("sample", "speaker")
MANIFEST_FORMAT = "asrmi-manifest"
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    """Malformed, empty, or tampered manifest / split file."""


class SplitError(ValueError):
    """A split could not be built or violates a membership constraint."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        super().__init__(f"split constraint '{constraint}' failed" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    offset: np.ndarray
    token_means: np.ndarray = field(repr=False)
    token_scales: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    speaker_id: str
    target: tuple[int, ...]
    frames: np.ndarray = field(repr=False)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass(frozen=True)
class Corpus:
    profiles: tuple[SpeakerProfile, ...]
    utterances: tuple[Utterance, ...]
    vocab_size: int
    feat_dim: int

    def by_id(self) -> dict[str, Utterance]:
        return {u.utterance_id: u for u in self.utterances}

    @property
    def fingerprint(self) -> str:
        return corpus_fingerprint(self.utterances)


def corpus_fingerprint(utterances: Iterable[Utterance]) -> str:
    h = hashlib.sha256()
    for u in sorted(utterances, key=lambda u: u.utterance_id):
        h.update(u.utterance_id.encode())
        h.update(b"\0" + u.speaker_id.encode() + b"\0")
        h.update(np.asarray(u.target, dtype="<i4").tobytes())
        h.update(np.asarray(u.frames.shape, dtype="<i4").tobytes())
        h.update(np.ascontiguousarray(u.frames, dtype="<f8").tobytes())
    return h.hexdigest()


def _draw_offsets(rng: np.random.Generator, n: int, dim: int, scale: float,
                  min_dist: float) -> np.ndarray:
    offsets: list[np.ndarray] = []
    while len(offsets) < n:
        cand = rng.normal(0.0, scale, size=dim)
        if all(np.linalg.norm(cand - o) >= min_dist for o in offsets):
            offsets.append(cand)
    return np.array(offsets)


def gen_corpus(n_speakers: int = 40, utt_per_speaker: int = 30, vocab_size: int = 12,
               feat_dim: int = 8, seed: int = 0, *, jitter: float = 0.3,
               token_spread: float = 1.0, offset_scale: float = 1.0, min_offset_dist: float = 0.5,
               min_len: int = 3, max_len: int = 8,
               min_frames_per_token: int = 3, max_frames_per_token: int = 5) -> Corpus:
    if n_speakers < 4:
        raise ValueError("n_speakers must be >= 4")
    if vocab_size < 4:
        raise ValueError("vocab_size must be >= 4")
    rng = np.random.default_rng(seed)
    token_means = rng.normal(0.0, token_spread, size=(vocab_size, feat_dim))
    token_means[0] = 0.0  # blank never emitted
    token_scales = rng.uniform(0.8, 1.2, size=vocab_size)
    offsets = _draw_offsets(rng, n_speakers, feat_dim, offset_scale, min_offset_dist)

    profiles = []
    utterances = []
    for s in range(n_speakers):
        spk = f"spk{s:03d}"
        profiles.append(SpeakerProfile(spk, offsets[s], token_means, token_scales))
        for j in range(utt_per_speaker):
            n_tok = int(rng.integers(min_len, max_len + 1))
            target = []
            for _ in range(n_tok):
                # no immediate repeats: frames carry no boundary cue between equal tokens
                choices = [t for t in range(1, vocab_size) if not target or t != target[-1]]
                target.append(int(choices[rng.integers(len(choices))]))
            counts = rng.integers(min_frames_per_token, max_frames_per_token + 1, size=n_tok)
            rows = np.repeat(np.array(target), counts)
            frames = (token_scales[rows, None] * token_means[rows] + offsets[s]
                      + rng.normal(0.0, jitter, size=(rows.size, feat_dim)))
            utterances.append(Utterance(f"{spk}-utt{j:03d}", spk, tuple(target), frames))
    return Corpus(tuple(profiles), tuple(utterances), vocab_size, feat_dim)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSizes:
    """How many utterances go where.

    ``asr_utts_per_speaker`` utterances of each training speaker go to the ASR
    training set. At speaker level only ``train_speakers`` speakers are seen
    by the model. ``None`` MI sizes take the largest balanced split of the
    available pools, halved between MI train and MI test.
    """
    asr_utts_per_speaker: int = 15
    train_speakers: int | None = None
    mi_train_per_class: int | None = None
    mi_test_per_class: int | None = None


@dataclass(frozen=True)
class SplitManifest:
    level: str
    asr_train: tuple[str, ...]
    mi_train_pos: tuple[str, ...]
    mi_train_neg: tuple[str, ...]
    mi_test_pos: tuple[str, ...]
    mi_test_neg: tuple[str, ...]
    fingerprint: str = ""

    def lists(self) -> dict[str, list[str]]:
        return {name: list(getattr(self, name)) for name in SPLIT_NAMES}

    def canonical(self) -> str:
        body = {"level": self.level, **self.lists()}
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def compute_fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def mi_set(self, part: str) -> list[tuple[str, int]]:
        """(utterance_id, label) pairs for ``part`` in {'train', 'test'}, sorted by id."""
        pos = getattr(self, f"mi_{part}_pos")
        neg = getattr(self, f"mi_{part}_neg")
        return sorted([(u, 1) for u in pos] + [(u, 0) for u in neg])


def _speaker_of(utt_id: str, speakers: dict[str, str]) -> str:
    return speakers[utt_id]


def validate_split(m: SplitManifest, speakers: dict[str, str]) -> None:
    """Raise :class:`SplitError` naming the first violated membership constraint."""
    if m.level not in LEVELS:
        raise SplitError("level", m.level)
    for name in SPLIT_NAMES:
        ids = getattr(m, name)
        if len(set(ids)) != len(ids):
            raise SplitError(f"{name}_unique")
        unknown = [u for u in ids if u not in speakers]
        if unknown:
            raise SplitError(f"{name}_known", f"unknown ids {unknown[:3]}")
    train = set(m.asr_train)
    spk = lambda ids: {_speaker_of(u, speakers) for u in ids}  # noqa: E731
    train_spk = spk(train)
    for part in ("train", "test"):
        pos = getattr(m, f"mi_{part}_pos")
        neg = getattr(m, f"mi_{part}_neg")
        if len(pos) != len(neg) or not pos:
            raise SplitError(f"mi_{part}_balanced", f"{len(pos)} pos vs {len(neg)} neg")
        if m.level == "sample":
            if not set(pos) <= train:
                raise SplitError(f"mi_{part}_pos_in_asr_train")
            if set(neg) & train:
                raise SplitError(f"mi_{part}_neg_disjoint_asr_train")
            if not spk(neg) <= train_spk:
                raise SplitError(f"mi_{part}_neg_speakers_seen")
        else:
            if set(pos) & train:
                raise SplitError(f"mi_{part}_pos_disjoint_asr_train")
            if not spk(pos) <= train_spk:
                raise SplitError(f"mi_{part}_pos_speakers_seen")
            if spk(neg) & train_spk:
                raise SplitError(f"mi_{part}_neg_speakers_unseen")
    train_ids = set(m.mi_train_pos) | set(m.mi_train_neg)
    test_ids = set(m.mi_test_pos) | set(m.mi_test_neg)
    if train_ids & test_ids:
        raise SplitError("mi_train_test_disjoint")
    if m.fingerprint and m.fingerprint != m.compute_fingerprint():
        raise SplitError("fingerprint")


def _shuffled(ids: Sequence[str], seed: int, *tags) -> list[str]:
    ids = sorted(ids)
    perm = derive_rng(seed, *tags).permutation(len(ids))
    return [ids[i] for i in perm]


def _balanced(pos_pool: list[str], neg_pool: list[str], sizes: SplitSizes
              ) -> tuple[int, int]:
    avail = min(len(pos_pool), len(neg_pool))
    n_train = sizes.mi_train_per_class
    n_test = sizes.mi_test_per_class
    if n_train is None and n_test is None:
        n_train = avail // 2
        n_test = avail - n_train
    elif n_train is None:
        n_train = avail - n_test
    elif n_test is None:
        n_test = avail - n_train
    if n_train < 1 or n_test < 1:
        raise SplitError("mi_sizes_positive", f"train={n_train}, test={n_test}")
    if n_train + n_test > len(pos_pool):
        raise SplitError("positive_pool_size",
                         f"need {n_train + n_test}, have {len(pos_pool)}")
    if n_train + n_test > len(neg_pool):
        raise SplitError("negative_pool_size",
                         f"need {n_train + n_test}, have {len(neg_pool)}")
    return n_train, n_test


def build_splits(utterances: Sequence[Utterance], level: str, sizes: SplitSizes,
                 seed: int) -> SplitManifest:
    """Build a validated membership split; independent of input order."""
    if level not in LEVELS:
        raise SplitError("level", level)
    speakers = {u.utterance_id: u.speaker_id for u in utterances}
    by_spk: dict[str, list[str]] = {}
    for uid, spk in sorted(speakers.items()):
        by_spk.setdefault(spk, []).append(uid)
    spk_ids = sorted(by_spk)
    k = sizes.asr_utts_per_speaker

    if level == "sample":
        seen = spk_ids
    else:
        n_seen = sizes.train_speakers if sizes.train_speakers is not None else len(spk_ids) // 2
        if not 1 <= n_seen < len(spk_ids):
            raise SplitError("train_speakers_range", f"{n_seen} of {len(spk_ids)}")
        seen = sorted(_shuffled(spk_ids, seed, "speakers")[:n_seen])
    seen_set = set(seen)

    asr_train: list[str] = []
    held_out: list[str] = []
    for spk in seen:
        if not 1 <= k < len(by_spk[spk]):
            raise SplitError("asr_utts_per_speaker",
                             f"{k} requested, speaker {spk} has {len(by_spk[spk])}")
        order = _shuffled(by_spk[spk], seed, "asr", spk)
        asr_train += order[:k]
        held_out += order[k:]

    if level == "sample":
        pos_pool, neg_pool = asr_train, held_out
    else:
        pos_pool = held_out
        neg_pool = [u for s in spk_ids if s not in seen_set for u in by_spk[s]]

    pos = _shuffled(pos_pool, seed, "pos")
    neg = _shuffled(neg_pool, seed, "neg")
    n_train, n_test = _balanced(pos, neg, sizes)
    manifest = SplitManifest(
        level=level,
        asr_train=tuple(sorted(asr_train)),
        mi_train_pos=tuple(sorted(pos[:n_train])),
        mi_train_neg=tuple(sorted(neg[:n_train])),
        mi_test_pos=tuple(sorted(pos[n_train:n_train + n_test])),
        mi_test_neg=tuple(sorted(neg[n_train:n_train + n_test])),
    )
    manifest = SplitManifest(**{**manifest.__dict__, "fingerprint": manifest.compute_fingerprint()})
    validate_split(manifest, speakers)
    return manifest


def partition_corpus(utterances: Sequence[Utterance], level: str, seed: int
                     ) -> tuple[list[Utterance], list[Utterance]]:
    """Split into disjoint (shadow, target) sub-corpora.

    Sample level halves every speaker's utterances so both halves keep the
    full speaker set; speaker level halves the speakers.
    """
    by_spk: dict[str, list[Utterance]] = {}
    for u in sorted(utterances, key=lambda u: u.utterance_id):
        by_spk.setdefault(u.speaker_id, []).append(u)
    shadow: list[Utterance] = []
    target: list[Utterance] = []
    if level == "sample":
        for spk, utts in sorted(by_spk.items()):
            perm = derive_rng(seed, "partition", spk).permutation(len(utts))
            half = len(utts) // 2
            shadow += [utts[i] for i in perm[:half]]
            target += [utts[i] for i in perm[half:]]
    else:
        spks = _shuffled(list(by_spk), seed, "partition")
        half = len(spks) // 2
        for i, spk in enumerate(spks):
            (shadow if i < half else target).extend(by_spk[spk])
    key = lambda u: u.utterance_id  # noqa: E731
    return sorted(shadow, key=key), sorted(target, key=key)


# ---------------------------------------------------------------------------
# file I/O


def _utterance_record(u: Utterance) -> dict:
    return {"utterance_id": u.utterance_id, "speaker_id": u.speaker_id,
            "target": list(u.target), "frames": u.frames.tolist()}


def save_manifest(utterances: Sequence[Utterance], path: str | os.PathLike) -> str:
    """Write utterances as JSON lines behind a header carrying their fingerprint."""
    utts = sorted(utterances, key=lambda u: u.utterance_id)
    fp = corpus_fingerprint(utts)
    header = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION,
              "count": len(utts), "fingerprint": fp}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for u in utts:
            fh.write(json.dumps(_utterance_record(u), sort_keys=True) + "\n")
    return fp


def load_manifest(path: str | os.PathLike) -> list[Utterance]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: bad header: {exc}") from None
    if header.get("format") != MANIFEST_FORMAT or header.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: not an {MANIFEST_FORMAT} v{MANIFEST_VERSION} file")
    utts = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            frames = np.asarray(rec["frames"], dtype=np.float64)
            if frames.ndim != 2:
                raise ValueError("frames must be a 2-d array")
            utts.append(Utterance(str(rec["utterance_id"]), str(rec["speaker_id"]),
                                  tuple(int(t) for t in rec["target"]), frames))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
    if len(utts) != header.get("count"):
        raise ManifestError(f"{path}: expected {header.get('count')} records, found {len(utts)}")
    if corpus_fingerprint(utts) != header.get("fingerprint"):
        raise ManifestError(f"{path}: fingerprint mismatch (file modified?)")
    return utts


def save_split(manifest: SplitManifest, path: str | os.PathLike) -> None:
    body = {"level": manifest.level, **manifest.lists(),
            "fingerprint": manifest.compute_fingerprint()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_split(path: str | os.PathLike) -> SplitManifest:
    try:
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from None
    try:
        m = SplitManifest(level=body["level"],
                          **{name: tuple(body[name]) for name in SPLIT_NAMES},
                          fingerprint=body["fingerprint"])
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: missing field {exc}") from None
    if m.fingerprint != m.compute_fingerprint():
        raise ManifestError(f"{path}: split fingerprint mismatch")
    return m

"""End-to-end membership-inference experiments and audit reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import data as ds
from . import features as feats
from . import forest as rf
from . import metrics as mt
from . import model as asr
from . import perturb

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusParams:
    n_speakers: int = 40
    utt_per_speaker: int = 30
    vocab_size: int = 12
    feat_dim: int = 8
    seed: int = 0
    token_spread: float = 1.0
    offset_scale: float = 1.0


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 30
    lr: float = 5e-3
    batch_size: int = 16
    seed: int = 0


def default_split_sizes() -> dict[str, ds.SplitSizes]:
    return {"sample": ds.SplitSizes(asr_utts_per_speaker=8, mi_train_per_class=150,
                                    mi_test_per_class=150),
            "speaker": ds.SplitSizes(asr_utts_per_speaker=20, train_speakers=20,
                                     mi_train_per_class=100, mi_test_per_class=100)}


def cross_model_split_sizes() -> dict[str, ds.SplitSizes]:
    """Sizes that fit one half of the default corpus (shadow and target each get a half)."""
    return {"sample": ds.SplitSizes(asr_utts_per_speaker=8, mi_train_per_class=70,
                                    mi_test_per_class=70),
            "speaker": ds.SplitSizes(asr_utts_per_speaker=20, train_speakers=10,
                                     mi_train_per_class=50, mi_test_per_class=50)}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rerun an experiment.

    ``shadow_model=None`` means the target model doubles as its own shadow
    (the same-model setting); otherwise shadow and target are trained on
    disjoint halves of the corpus.
    """
    corpus: CorpusParams = field(default_factory=CorpusParams)
    target_model: asr.ModelConfig = field(default_factory=asr.ModelConfig)
    shadow_model: asr.ModelConfig | None = None
    training: TrainParams = field(default_factory=TrainParams)
    levels: tuple[str, ...] = ds.LEVELS
    feature_sets: tuple[str, ...] = rf.FEATURE_SET_TAGS
    split_sizes: dict[str, ds.SplitSizes] = field(default_factory=default_split_sizes)
    split_seed: int = 0
    features: feats.FeatureConfig = field(default_factory=feats.FeatureConfig)
    n_trees: int = 100
    threshold: float = 0.5
    fpr_targets: tuple[float, ...] = mt.DEFAULT_FPR_TARGETS
    seeds: tuple[int, ...] = (0, 1, 2)
    threads: int = 1

    def __post_init__(self):
        for level in self.levels:
            if level not in ds.LEVELS:
                raise ConfigError(f"unknown level {level!r}")
            if level not in self.split_sizes:
                raise ConfigError(f"no split sizes for level {level!r}")
        for tag in self.feature_sets:
            if tag not in feats.FAMILIES:
                raise ConfigError(f"unknown feature set {tag!r}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a nonempty list of distinct integers")
        if any(not 0 < f < 1 for f in self.fpr_targets):
            raise ConfigError("fpr_targets must lie in (0, 1)")
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        for m in (self.target_model, self.shadow_model):
            if m is not None and (m.input_dim != self.corpus.feat_dim
                                  or m.vocab_size != self.corpus.vocab_size):
                raise ConfigError("model input_dim/vocab_size must match the corpus")

    @classmethod
    def cross_architecture(cls, **kw) -> "ExperimentConfig":
        """Convolutional shadow attacking a recurrent target on disjoint halves."""
        kw.setdefault("target_model", asr.ModelConfig(architecture="recurrent"))
        kw.setdefault("shadow_model", asr.ModelConfig(architecture="convolutional", seed=1))
        kw.setdefault("split_sizes", cross_model_split_sizes())
        return cls(**kw)

    @property
    def same_model(self) -> bool:
        return self.shadow_model is None

    def to_dict(self) -> dict:
        return {
            "corpus": dataclasses.asdict(self.corpus),
            "target_model": self.target_model.to_dict(),
            "shadow_model": None if self.shadow_model is None else self.shadow_model.to_dict(),
            "training": dataclasses.asdict(self.training),
            "levels": list(self.levels),
            "feature_sets": list(self.feature_sets),
            "split_sizes": {k: dataclasses.asdict(v) for k, v in sorted(self.split_sizes.items())},
            "split_seed": self.split_seed,
            "features": {"top_k": self.features.top_k, "beam_size": self.features.beam_size,
                         "gaussian": {"snrs_db": list(self.features.gaussian.snrs_db),
                                      "runs_per_snr": self.features.gaussian.runs_per_snr,
                                      "seed": self.features.gaussian.seed},
                         "adversarial": {"radii": list(self.features.adversarial.radii),
                                         "step_size": self.features.adversarial.step_size,
                                         "steps": self.features.adversarial.steps,
                                         "seed": self.features.adversarial.seed}},
            "n_trees": self.n_trees, "threshold": self.threshold,
            "fpr_targets": list(self.fpr_targets), "seeds": list(self.seeds),
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            kw: dict = {}
            if "corpus" in d:
                kw["corpus"] = CorpusParams(**d["corpus"])
            if "target_model" in d:
                kw["target_model"] = asr.ModelConfig.from_dict(d["target_model"])
            if d.get("shadow_model") is not None:
                kw["shadow_model"] = asr.ModelConfig.from_dict(d["shadow_model"])
            if "training" in d:
                kw["training"] = TrainParams(**d["training"])
            if "split_sizes" in d:
                kw["split_sizes"] = {k: ds.SplitSizes(**v) for k, v in d["split_sizes"].items()}
            if "features" in d:
                f = d["features"]
                g = f.get("gaussian", {})
                a = f.get("adversarial", {})
                kw["features"] = feats.FeatureConfig(
                    top_k=f.get("top_k", 4), beam_size=f.get("beam_size", 8),
                    gaussian=perturb.GaussianConfig(
                        **{**g, **({"snrs_db": tuple(g["snrs_db"])} if "snrs_db" in g else {})}),
                    adversarial=perturb.AdvConfig(
                        **{**a, **({"radii": tuple(a["radii"])} if "radii" in a else {})}))
            for key in ("levels", "feature_sets", "fpr_targets", "seeds"):
                if key in d:
                    kw[key] = tuple(d[key])
            for key in ("split_seed", "n_trees", "threshold", "threads"):
                if key in d:
                    kw[key] = d[key]
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Reseed corpus, splits, model init, training and perturbations."""
        f = self.features
        return dataclasses.replace(
            self,
            corpus=dataclasses.replace(self.corpus, seed=seed),
            target_model=dataclasses.replace(self.target_model, seed=seed),
            shadow_model=None if self.shadow_model is None
            else dataclasses.replace(self.shadow_model, seed=seed + 1),
            training=dataclasses.replace(self.training, seed=seed),
            split_seed=seed,
            features=dataclasses.replace(
                f, gaussian=dataclasses.replace(f.gaussian, seed=seed),
                adversarial=dataclasses.replace(f.adversarial, seed=seed)))


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return ExperimentConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# stages


def make_corpus(cfg: ExperimentConfig) -> ds.Corpus:
    c = cfg.corpus
    return ds.gen_corpus(c.n_speakers, c.utt_per_speaker, c.vocab_size, c.feat_dim, c.seed,
                         token_spread=c.token_spread, offset_scale=c.offset_scale)


def make_splits(cfg: ExperimentConfig, corpus: ds.Corpus, level: str) -> dict[str, ds.SplitManifest]:
    """{'target': split} in the same-model setting, else {'shadow': ..., 'target': ...}."""
    sizes = cfg.split_sizes[level]
    if cfg.same_model:
        return {"target": ds.build_splits(corpus.utterances, level, sizes, cfg.split_seed)}
    shadow_utts, target_utts = ds.partition_corpus(corpus.utterances, level, cfg.split_seed)
    out = {"shadow": ds.build_splits(shadow_utts, level, sizes, cfg.split_seed),
           "target": ds.build_splits(target_utts, level, sizes, cfg.split_seed)}
    if set(out["shadow"].asr_train) & set(out["target"].asr_train):
        raise ds.SplitError("shadow_target_disjoint")
    return out


def model_config(cfg: ExperimentConfig, role: str) -> asr.ModelConfig:
    if role == "shadow" and not cfg.same_model:
        return cfg.shadow_model
    return cfg.target_model


def train_role(cfg: ExperimentConfig, corpus: ds.Corpus, split: ds.SplitManifest, role: str,
               epochs: int | None = None) -> tuple[asr.Checkpoint, dict]:
    by_id = corpus.by_id()
    train_utts = [by_id[u] for u in split.asr_train]
    t = cfg.training
    n_epochs = t.epochs if epochs is None else epochs
    start = time.process_time()
    ckpt = asr.train(asr.init_model(model_config(cfg, role)), train_utts, n_epochs, t.lr,
                     t.batch_size, t.seed, fingerprint=ds.corpus_fingerprint(train_utts))
    acc = asr.greedy_token_accuracy(ckpt, train_utts) if n_epochs > 0 else None
    train_log = {"role": role, "level": split.level, "epochs": n_epochs,
                 "loss_history": ckpt.metadata.get("loss_history", []),
                 "train_greedy_token_accuracy": acc,
                 "cpu_seconds": time.process_time() - start}
    log.info("trained %s model (%s level): loss %s, greedy acc %s", role, split.level,
             train_log["loss_history"][-1:] or None, acc)
    return ckpt, train_log


def extract_blocks(cfg: ExperimentConfig, ckpt: asr.Checkpoint, corpus: ds.Corpus,
                   ids: Sequence[str], tags: Sequence[str]) -> dict[str, dict[str, np.ndarray]]:
    by_id = corpus.by_id()
    return feats.extract_all(ckpt, [by_id[u] for u in ids], feats.families_for(tags),
                             cfg.features, threads=cfg.threads)


def _summary(values: Sequence[float]) -> tuple[float, float | None]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), (float(arr.std()) if arr.size > 1 else None)


def train_forests(train: Sequence[rf.MIExample], seeds: Sequence[int],
                  n_trees: int = 100) -> list[rf.Forest]:
    return [rf.rf_train(train, n_trees=n_trees, seed=seed) for seed in seeds]


def score_forests(forests: Sequence[rf.Forest], test: Sequence[rf.MIExample], tag: str,
                  level: str, threshold: float = 0.5, fpr_targets=mt.DEFAULT_FPR_TARGETS,
                  columns: Sequence[str] | None = None, n_train: int | None = None
                  ) -> tuple[dict, list[dict]]:
    """Score the test set with each forest and summarise over seeds.

    Returns (result entry, per-utterance score rows).
    """
    widths = {len(e.features) for e in test} | {f.n_features for f in forests}
    if len(widths) != 1:
        raise feats.LayoutError(f"forest/test feature widths differ: {sorted(widths)}")
    test = sorted(test, key=lambda e: e.utterance_id)
    X_test = np.array([e.features for e in test])
    y_test = np.array([e.label for e in test])
    per_seed, rows = [], []
    for forest in forests:
        scores = rf.rf_score(forest, X_test)
        rep = mt.evaluate_scores(scores, y_test, fpr_targets, threshold, tag, level)
        per_seed.append({"seed": forest.seed, **rep.to_dict()})
        rows += [{"level": level, "feature_set": tag, "seed": forest.seed,
                  "utterance_id": e.utterance_id, "speaker_id": e.speaker_id,
                  "label": int(e.label), "score": float(s)} for e, s in zip(test, scores)]
    mean, std = {}, {}
    for key in ("accuracy", "auc"):
        mean[key], std[key] = _summary([p[key] for p in per_seed])
    mean["tpr_at_fpr"], std["tpr_at_fpr"] = {}, {}
    for f in per_seed[0]["tpr_at_fpr"]:
        mean["tpr_at_fpr"][f], std["tpr_at_fpr"][f] = _summary([p["tpr_at_fpr"][f] for p in per_seed])
    entry = {
        "level": level, "feature_set": tag, "n_seeds": len(forests),
        "n_features": widths.pop(), "n_train": n_train, "n_test": len(test),
        "layout_fingerprint": feats.layout_fingerprint(columns) if columns else None,
        "mean": mean, "std": std if len(forests) > 1 else None, "per_seed": per_seed,
    }
    if level == "speaker":
        entry["speaker_mean_scores"] = speaker_mean_scores(rows)
    return entry, rows


def evaluate_examples(train: Sequence[rf.MIExample], test: Sequence[rf.MIExample], tag: str,
                      level: str, seeds: Sequence[int], n_trees: int = 100,
                      threshold: float = 0.5, fpr_targets=mt.DEFAULT_FPR_TARGETS,
                      columns: Sequence[str] | None = None
                      ) -> tuple[dict, list[dict], list[rf.Forest]]:
    """Train one forest per seed, score the test set, and summarise."""
    widths = {len(e.features) for e in train} | {len(e.features) for e in test}
    if len(widths) != 1:
        raise feats.LayoutError(f"train/test feature widths differ: {sorted(widths)}")
    forests = train_forests(train, seeds, n_trees)
    entry, rows = score_forests(forests, test, tag, level, threshold, fpr_targets, columns,
                                n_train=len(train))
    return entry, rows, forests


def forests_to_bundle(forests: Sequence[rf.Forest]) -> bytes:
    return b"".join(rf.forest_to_bytes(f) for f in forests)


def forests_from_bundle(data: bytes) -> list[rf.Forest]:
    """Split a concatenation of length-prefixed forest records."""
    out, pos = [], 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise rf.ForestError(f"truncated forest bundle at byte {pos}")
        n = int.from_bytes(data[pos:pos + 4], "little")
        end = pos + 4 + n
        if end > len(data):
            raise rf.ForestError(f"truncated forest record at byte {pos}")
        out.append(rf.forest_from_bytes(data[pos:end]))
        pos = end
    return out


def speaker_mean_scores(rows: Sequence[dict]) -> dict[str, dict]:
    """Mean utterance score per speaker (inspection only; metrics stay per utterance)."""
    acc: dict[str, list] = {}
    for r in rows:
        acc.setdefault(r["speaker_id"], []).append((r["score"], r["label"]))
    return {spk: {"mean_score": float(np.mean([s for s, _ in v])), "label": int(v[0][1]),
                  "n": len(v)} for spk, v in sorted(acc.items())}


def new_report(cfg_dict: dict | None) -> dict:
    return {"tool": "asrmi", "version": __version__,
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "config": cfg_dict, "results": [], "scores": [], "training": []}


def run_experiment(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> dict:
    """Synthesize, train, extract and evaluate every configured (level, feature set)."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    corpus = make_corpus(cfg)
    report = new_report(cfg.to_dict())
    report["corpus_fingerprint"] = corpus.fingerprint
    speakers = {u.utterance_id: u.speaker_id for u in corpus.utterances}
    bundle: list[bytes] = []
    for level in cfg.levels:
        splits = make_splits(cfg, corpus, level)
        target, tlog = train_role(cfg, corpus, splits["target"], "target")
        report["training"].append(tlog)
        if cfg.same_model:
            shadow, shadow_split = target, splits["target"]
        else:
            shadow, slog = train_role(cfg, corpus, splits["shadow"], "shadow")
            report["training"].append(slog)
            shadow_split = splits["shadow"]
        if out is not None:
            asr.save_checkpoint(target, out / f"model_target_{level}.ckpt")
            if not cfg.same_model:
                asr.save_checkpoint(shadow, out / f"model_shadow_{level}.ckpt")
        train_lab = shadow_split.mi_set("train")
        test_lab = splits["target"].mi_set("test")
        train_blocks = extract_blocks(cfg, shadow, corpus, [u for u, _ in train_lab], cfg.feature_sets)
        test_blocks = extract_blocks(cfg, target, corpus, [u for u, _ in test_lab], cfg.feature_sets)
        for tag in cfg.feature_sets:
            columns = feats.layout(tag, cfg.features)
            train_ex = feats.make_examples(train_blocks, train_lab, speakers, tag)
            test_ex = feats.make_examples(test_blocks, test_lab, speakers, tag)
            entry, rows, forests = evaluate_examples(
                train_ex, test_ex, tag, level, cfg.seeds, cfg.n_trees, cfg.threshold,
                cfg.fpr_targets, columns)
            entry["shadow_architecture"] = model_config(cfg, "shadow").architecture
            entry["target_architecture"] = cfg.target_model.architecture
            report["results"].append(entry)
            report["scores"] += rows
            bundle.append(forests_to_bundle(forests))
            log.info("%s %-13s acc %.3f auc %.3f", level, tag, entry["mean"]["accuracy"],
                     entry["mean"]["auc"])
    if out is not None:
        write_report(report, out / "report.json")
        write_roc_csvs(report, out)
        (out / "forests.bin").write_bytes(b"".join(bundle))
    return report


def audit_external(train_dir: str | os.PathLike, test_dir: str | os.PathLike,
                   utterances: Sequence[ds.Utterance], train_lab: Sequence[tuple[str, int]],
                   test_lab: Sequence[tuple[str, int]], tag: str, level: str,
                   seeds: Sequence[int] = (0, 1, 2), n_trees: int = 100, threshold: float = 0.5,
                   fpr_targets=mt.DEFAULT_FPR_TARGETS, top_k: int = 4,
                   smoothing: float = 0.1) -> dict:
    """Audit from exported logits only; gradient or model-dependent families are refused."""
    from . import external
    external.check_access(tag)
    fams = feats.FAMILIES[tag]
    by_id = {u.utterance_id: u for u in utterances}
    speakers = {u.utterance_id: u.speaker_id for u in utterances}

    def blocks(d, lab):
        missing = [u for u, _ in lab if u not in by_id]
        if missing:
            raise ds.ManifestError(f"{len(missing)} labelled ids missing from manifest, "
                                   f"e.g. {missing[0]}")
        return {u: external.grey_box_blocks(d, by_id[u], fams, smoothing, top_k) for u, _ in lab}

    train_ex = feats.make_examples(blocks(train_dir, train_lab), train_lab, speakers, tag)
    test_ex = feats.make_examples(blocks(test_dir, test_lab), test_lab, speakers, tag)
    cols = feats.layout(tag, feats.FeatureConfig(top_k=top_k, beam_size=max(top_k, 8)))
    entry, rows, _ = evaluate_examples(train_ex, test_ex, tag, level, seeds, n_trees, threshold,
                                       fpr_targets, cols)
    entry["access"] = "grey-box"
    report = new_report({"mode": "audit-external", "feature_set": tag, "level": level,
                         "seeds": list(seeds), "n_trees": n_trees, "threshold": threshold,
                         "fpr_targets": list(fpr_targets), "top_k": top_k,
                         "smoothing": smoothing})
    report["results"].append(entry)
    report["scores"] = rows
    return report


# ---------------------------------------------------------------------------
# report I/O


_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}
_METRICS = {
    "type": "object",
    "required": ["accuracy", "auc", "tpr_at_fpr"],
    "properties": {"accuracy": _NUM, "auc": _NUM,
                   "tpr_at_fpr": {"type": "object", "additionalProperties": _NUM}},
}
_METRICS_OR_NULL = {
    "type": ["object", "null"],
    "properties": {"accuracy": _NUM_OR_NULL, "auc": _NUM_OR_NULL,
                   "tpr_at_fpr": {"type": "object", "additionalProperties": _NUM_OR_NULL}},
}

#: JSON Schema (draft 2020-12) for audit reports written by this package.
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["tool", "version", "created", "config", "results", "scores"],
    "properties": {
        "tool": {"const": "asrmi"},
        "version": {"type": "string"},
        "created": {"type": "string"},
        "config": {"type": ["object", "null"]},
        "corpus_fingerprint": {"type": "string"},
        "training": {"type": "array", "items": {"type": "object"}},
        "results": {"type": "array", "minItems": 1, "items": {
            "type": "object",
            "required": ["level", "feature_set", "n_seeds", "n_features", "n_test",
                         "mean", "std", "per_seed"],
            "properties": {
                "level": {"enum": list(ds.LEVELS)},
                "feature_set": {"enum": list(rf.FEATURE_SET_TAGS)},
                "n_seeds": {"type": "integer", "minimum": 1},
                "n_features": {"type": "integer", "minimum": 1},
                "n_train": {"type": ["integer", "null"]},
                "n_test": {"type": "integer", "minimum": 2},
                "layout_fingerprint": {"type": ["string", "null"]},
                "mean": _METRICS,
                "std": _METRICS_OR_NULL,
                "per_seed": {"type": "array", "minItems": 1, "items": {
                    "type": "object",
                    "required": ["seed", "accuracy", "auc", "tpr_at_fpr", "roc", "n_pos", "n_neg"],
                    "properties": {
                        "seed": {"type": "integer"}, "accuracy": _NUM, "auc": _NUM,
                        "tpr_at_fpr": {"type": "object", "additionalProperties": _NUM},
                        "roc": {"type": "array", "items": {
                            "type": "array", "minItems": 3, "maxItems": 3,
                            "prefixItems": [_NUM, _NUM, _NUM_OR_NULL]}},
                        "n_pos": {"type": "integer", "minimum": 1},
                        "n_neg": {"type": "integer", "minimum": 1},
                    }}},
                "speaker_mean_scores": {"type": "object"},
            }}},
        "scores": {"type": "array", "items": {
            "type": "object",
            "required": ["level", "feature_set", "seed", "utterance_id", "speaker_id",
                         "label", "score"],
            "properties": {"label": {"enum": [0, 1]},
                           "score": {"type": "number", "minimum": 0, "maximum": 1}}}},
    },
}


def write_report(report: dict, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_report(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_roc_csvs(report: dict, out_dir: str | os.PathLike) -> list[Path]:
    """One CSV per (level, feature set) with the first seed's ROC curve."""
    paths = []
    for entry in report["results"]:
        first = entry["per_seed"][0]
        safe = entry["feature_set"].replace("+", "_")
        path = Path(out_dir) / f"roc_{entry['level']}_{safe}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr", "threshold"])
            for fpr, tpr, thr in first["roc"]:
                w.writerow([fpr, tpr, "inf" if thr is None else thr])
        paths.append(path)
    return paths


def recompute_from_scores(report: dict) -> list[dict]:
    """Per-seed metrics rebuilt from the embedded score table, in results order."""
    fprs = [float(f) for f in (report.get("config") or {}).get("fpr_targets",
                                                              mt.DEFAULT_FPR_TARGETS)]
    thr = (report.get("config") or {}).get("threshold", 0.5)
    out = []
    for entry in report["results"]:
        for ps in entry["per_seed"]:
            rows = [r for r in report["scores"] if r["level"] == entry["level"]
                    and r["feature_set"] == entry["feature_set"] and r["seed"] == ps["seed"]]
            rep = mt.evaluate_scores([r["score"] for r in rows], [r["label"] for r in rows],
                                     fprs, thr, entry["feature_set"], entry["level"])
            out.append({"seed": ps["seed"], **rep.to_dict()})
    return out


def strip_volatile(report: dict) -> dict:
    """Copy without wall-clock fields, for determinism comparisons."""
    r = json.loads(json.dumps(report))
    r.pop("created", None)
    for t in r.get("training", []):
        t.pop("cpu_seconds", None)
    return r


def format_report(report: dict) -> str:
    lines = [f"{'level':8} {'features':13} {'acc':>13} {'auc':>13} {'tpr@0.1':>13} {'tpr@0.01':>13}"]

    def cell(entry, key, sub=None):
        m = entry["mean"][key] if sub is None else entry["mean"][key][sub]
        s = None if entry["std"] is None else (entry["std"][key] if sub is None
                                               else entry["std"][key][sub])
        return f"{100 * m:6.1f}" + (f"±{100 * s:4.1f}" if s is not None else " " * 5)

    for e in report["results"]:
        tprs = list(e["mean"]["tpr_at_fpr"])
        lines.append(f"{e['level']:8} {e['feature_set']:13} {cell(e, 'accuracy'):>13} "
                     f"{cell(e, 'auc'):>13} "
                     + " ".join(f"{cell(e, 'tpr_at_fpr', f):>13}" for f in tprs))
    return "\n".join(lines)

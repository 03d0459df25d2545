"""Command-line interface: staged audit pipeline plus one-shot ``run``.

Stage outputs live under ``--out-dir``::

    corpus.jsonl
    splits/<level>_<role>.json
    models/<role>_<level>.ckpt, models/<role>_<level>.log.json
    features/<role>_<level>_<split>_<tag>.json
    forests/<level>_<tag>.bin
    reports/<level>_<tag>.json, reports/roc_<level>_<tag>.csv
    logits/<role>_<level>_<split>/
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import data as ds
from . import external
from . import features as feats
from . import forest as rf
from . import metrics as mt
from . import model as asr
from . import pipeline as pl

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SPLITS = ("train", "test")
ROLES = ("target", "shadow")

log = logging.getLogger("asrmi")


def _safe(tag: str) -> str:
    return tag.replace("+", "_")


class Layout:
    def __init__(self, root: Path, cfg: pl.ExperimentConfig):
        self.root = root
        self.cfg = cfg

    def role(self, role: str) -> str:
        """The shadow role collapses onto the target in the same-model setting."""
        return "target" if self.cfg.same_model else role

    def default_role(self, split: str) -> str:
        return self.role("shadow" if split == "train" else "target")

    @property
    def corpus(self) -> Path:
        return self.root / "corpus.jsonl"

    def split(self, level: str, role: str) -> Path:
        return self.root / "splits" / f"{level}_{self.role(role)}.json"

    def model(self, role: str, level: str) -> Path:
        return self.root / "models" / f"{self.role(role)}_{level}.ckpt"

    def features(self, role: str, level: str, split: str, tag: str) -> Path:
        return self.root / "features" / f"{self.role(role)}_{level}_{split}_{_safe(tag)}.json"

    def forests(self, level: str, tag: str) -> Path:
        return self.root / "forests" / f"{level}_{_safe(tag)}.bin"

    def report(self, level: str, tag: str) -> Path:
        return self.root / "reports" / f"{level}_{_safe(tag)}.json"

    def logits(self, role: str, level: str, split: str) -> Path:
        return self.root / "logits" / f"{self.role(role)}_{level}_{split}"


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found at {path}; run the earlier stage first")
    return path


def _load_corpus(lay: Layout) -> ds.Corpus:
    utts = ds.load_manifest(_require(lay.corpus, "corpus manifest"))
    c = lay.cfg.corpus
    return ds.Corpus((), tuple(utts), c.vocab_size, c.feat_dim)


def _labelled(lay: Layout, level: str, role: str, split: str) -> list[tuple[str, int]]:
    manifest = ds.load_split(_require(lay.split(level, role), "split manifest"))
    return manifest.mi_set(split)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: pl.ExperimentConfig, lay: Layout) -> int:
    corpus = pl.make_corpus(cfg)
    lay.root.mkdir(parents=True, exist_ok=True)
    fp = ds.save_manifest(corpus.utterances, lay.corpus)
    print(f"corpus {fp} ({len(corpus.utterances)} utterances) -> {lay.corpus}")
    for level in cfg.levels:
        for role, split in pl.make_splits(cfg, corpus, level).items():
            path = lay.split(level, role)
            path.parent.mkdir(parents=True, exist_ok=True)
            ds.save_split(split, path)
            print(f"split {level}/{role} {split.fingerprint} -> {path}")
    return EXIT_OK


def cmd_train_asr(args, cfg, lay) -> int:
    corpus = _load_corpus(lay)
    split = ds.load_split(_require(lay.split(args.level, args.role), "split manifest"))
    ckpt, train_log = pl.train_role(cfg, corpus, split, lay.role(args.role), args.epochs)
    path = lay.model(args.role, args.level)
    path.parent.mkdir(parents=True, exist_ok=True)
    asr.save_checkpoint(ckpt, path)
    _write_json(path.with_suffix(".log.json"), train_log)
    print(f"model -> {path} (train greedy token accuracy {train_log['train_greedy_token_accuracy']})")
    return EXIT_OK


def cmd_extract(args, cfg, lay) -> int:
    role = args.role or lay.default_role(args.split)
    corpus = _load_corpus(lay)
    model_path = Path(args.model) if args.model else lay.model(role, args.level)
    ckpt = asr.load_checkpoint(_require(model_path, "checkpoint"))
    lab = _labelled(lay, args.level, role, args.split)
    blocks = pl.extract_blocks(cfg, ckpt, corpus, [u for u, _ in lab], [args.feature_set])
    speakers = {u.utterance_id: u.speaker_id for u in corpus.utterances}
    ff = feats.FeatureFile(args.feature_set, feats.layout(args.feature_set, cfg.features),
                           feats.make_examples(blocks, lab, speakers, args.feature_set),
                           {"model": str(model_path), "level": args.level, "split": args.split})
    out = Path(args.output) if args.output else lay.features(role, args.level, args.split,
                                                             args.feature_set)
    out.parent.mkdir(parents=True, exist_ok=True)
    feats.write_features(ff, out, append=args.append)
    print(f"{len(ff.examples)} x {len(ff.columns)} features -> {out}")
    return EXIT_OK


def _train_features(args, lay) -> feats.FeatureFile:
    path = Path(args.train_features) if args.train_features else lay.features(
        "shadow", args.level, "train", args.feature_set)
    return feats.read_features(_require(path, "training features"))


def cmd_train_mi(args, cfg, lay) -> int:
    ff = _train_features(args, lay)
    if ff.feature_set != args.feature_set:
        raise feats.LayoutError(f"feature file holds {ff.feature_set!r}, not {args.feature_set!r}")
    forests = pl.train_forests(ff.examples, cfg.seeds, cfg.n_trees)
    out = lay.forests(args.level, args.feature_set)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(pl.forests_to_bundle(forests))
    print(f"{len(forests)} forests ({cfg.n_trees} trees each) -> {out}")
    return EXIT_OK


def cmd_evaluate(args, cfg, lay) -> int:
    train_ff = _train_features(args, lay)
    test_path = Path(args.test_features) if args.test_features else lay.features(
        "target", args.level, "test", args.feature_set)
    test_ff = feats.read_features(_require(test_path, "test features"))
    feats.check_same_layout(train_ff, test_ff)
    forest_path = Path(args.forests) if args.forests else lay.forests(args.level, args.feature_set)
    forests = pl.forests_from_bundle(_require(forest_path, "forest bundle").read_bytes())
    entry, rows = pl.score_forests(forests, test_ff.examples, args.feature_set, args.level,
                                   cfg.threshold, cfg.fpr_targets, test_ff.columns,
                                   n_train=len(train_ff.examples))
    report = pl.new_report(cfg.to_dict())
    report["results"].append(entry)
    report["scores"] = rows
    return _emit_report(report, lay.report(args.level, args.feature_set))


def cmd_audit_external(args, cfg, lay) -> int:
    external.check_access(args.feature_set)
    utts = ds.load_manifest(Path(args.manifest) if args.manifest else _require(lay.corpus, "corpus"))
    if args.train_split or args.test_split:
        train_lab = ds.load_split(args.train_split or args.test_split).mi_set("train")
        test_lab = ds.load_split(args.test_split or args.train_split).mi_set("test")
    else:
        train_lab = _labelled(lay, args.level, lay.default_role("train"), "train")
        test_lab = _labelled(lay, args.level, "target", "test")
    report = pl.audit_external(args.train_logits, args.test_logits, utts, train_lab, test_lab,
                               args.feature_set, args.level, cfg.seeds, cfg.n_trees,
                               cfg.threshold, cfg.fpr_targets, cfg.features.top_k,
                               cfg.target_model.smoothing)
    out = lay.root / "reports" / f"external_{args.level}_{_safe(args.feature_set)}.json"
    return _emit_report(report, out)


def cmd_export_logits(args, cfg, lay) -> int:
    role = args.role or lay.default_role(args.split)
    ckpt = asr.load_checkpoint(_require(lay.model(role, args.level), "checkpoint"))
    by_id = _load_corpus(lay).by_id()
    lab = _labelled(lay, args.level, role, args.split)
    out = Path(args.output) if args.output else lay.logits(role, args.level, args.split)
    external.export_outputs(ckpt, [by_id[u] for u, _ in lab], out, nbest=not args.no_nbest,
                            beam_size=cfg.features.beam_size, k=cfg.features.top_k)
    print(f"{len(lab)} utterances -> {out}")
    return EXIT_OK


def cmd_run(args, cfg, lay) -> int:
    report = pl.run_experiment(cfg, lay.root)
    print(pl.format_report(report))
    print(f"report -> {lay.root / 'report.json'}")
    return EXIT_OK


def cmd_report(args, cfg, lay) -> int:
    merged = None
    for path in args.reports:
        rep = pl.read_report(path)
        if merged is None:
            merged = rep
        else:
            merged["results"] += rep["results"]
            merged["scores"] += rep["scores"]
    if args.check:
        want = [p for e in merged["results"] for p in e["per_seed"]]
        for got, exp in zip(pl.recompute_from_scores(merged), want):
            if got["auc"] != exp["auc"] or got["accuracy"] != exp["accuracy"]:
                raise mt.MetricsError(f"metrics for seed {exp['seed']} do not recompute "
                                      "from the embedded score table")
    print(pl.format_report(merged))
    return EXIT_OK


def _emit_report(report: dict, path: Path) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    pl.write_report(report, path)
    pl.write_roc_csvs(report, path.parent)
    print(pl.format_report(report))
    print(f"report -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Flags accepted before or after the subcommand.

    The subcommand copy uses SUPPRESS defaults so it never overwrites a value
    given before the subcommand name.
    """
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=d(None), help="experiment config (JSON)")
    common.add_argument("--seed", type=int, default=d(None),
                        help="reseed corpus, splits, models and perturbations")
    common.add_argument("--out-dir", default=d("asrmi-out"), help="stage output directory")
    common.add_argument("--threads", type=int, default=d(None),
                        help="feature-extraction worker threads")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asrmi", parents=[_global_flags(False)],
                                description="Membership-inference audits of toy ASR models.")
    p.add_argument("--version", action="version", version=f"asrmi {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    common = _global_flags(True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    def level(sp):
        sp.add_argument("--level", choices=ds.LEVELS, default="sample")

    def tag(sp):
        sp.add_argument("--feature-set", choices=rf.FEATURE_SET_TAGS, default="losses")

    add("synth", cmd_synth, "generate the corpus and split manifests")

    sp = add("train-asr", cmd_train_asr, "train a target or shadow ASR model")
    sp.add_argument("--role", choices=ROLES, default="target")
    sp.add_argument("--epochs", type=int)
    level(sp)

    sp = add("extract", cmd_extract, "extract MI features for one split")
    sp.add_argument("--split", choices=SPLITS, required=True)
    sp.add_argument("--role", choices=ROLES, help="defaults: train->shadow, test->target")
    sp.add_argument("--model", help="checkpoint path (defaults to the role's model)")
    sp.add_argument("--append", action="store_true", help="merge into an existing feature file")
    sp.add_argument("-o", "--output")
    level(sp)
    tag(sp)

    sp = add("train-mi", cmd_train_mi, "fit one random forest per seed on shadow features")
    sp.add_argument("--train-features")
    level(sp)
    tag(sp)

    sp = add("evaluate", cmd_evaluate, "score target features and write an audit report")
    sp.add_argument("--train-features")
    sp.add_argument("--test-features")
    sp.add_argument("--forests")
    level(sp)
    tag(sp)

    sp = add("audit-external", cmd_audit_external, "grey-box audit from exported logits")
    sp.add_argument("--train-logits", required=True)
    sp.add_argument("--test-logits", required=True)
    sp.add_argument("--manifest", help="corpus manifest with targets (default: out-dir corpus)")
    sp.add_argument("--train-split", help="split file providing mi_train labels")
    sp.add_argument("--test-split", help="split file providing mi_test labels")
    level(sp)
    tag(sp)

    sp = add("export-logits", cmd_export_logits, "write MILG logits and n-best sidecars")
    sp.add_argument("--split", choices=SPLITS, required=True)
    sp.add_argument("--role", choices=ROLES)
    sp.add_argument("--no-nbest", action="store_true")
    sp.add_argument("-o", "--output")
    level(sp)

    add("run", cmd_run, "run the whole experiment end to end")

    sp = add("report", cmd_report, "print one or more audit reports as a table")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--check", action="store_true",
                    help="verify metrics recompute from the embedded scores")
    return p


def _config(args) -> pl.ExperimentConfig:
    cfg = pl.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise pl.ConfigError("--threads must be >= 1")
        cfg = pl.dataclasses.replace(cfg, threads=args.threads)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg, Layout(Path(args.out_dir), cfg))
    except (pl.ConfigError, ds.SplitError, external.AccessLevelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ds.ManifestError, asr.CheckpointError, external.MILGError, feats.LayoutError,
            rf.ForestError, mt.MetricsError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (asr.TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

import json

import jsonschema
import pytest

from asrmi import cli
from asrmi import pipeline as pl
from test_pipeline import TINY


@pytest.fixture(scope="module")
def staged(tmp_path_factory):
    """Run the staged CLI flow once on the tiny config (same-model, sample level)."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.json"
    cfg_path.write_text(json.dumps(TINY))
    out = root / "out"

    def run(*argv):
        return cli.main(["--config", str(cfg_path), "--out-dir", str(out), *argv])

    codes = {"synth": run("synth"), "train": run("train-asr")}
    for tag in ("losses", "errors"):
        for split in ("train", "test"):
            codes[f"extract-{tag}-{split}"] = run("extract", "--split", split, "--feature-set", tag)
        codes[f"train-mi-{tag}"] = run("train-mi", "--feature-set", tag)
        codes[f"evaluate-{tag}"] = run("evaluate", "--feature-set", tag)
    for split in ("train", "test"):
        codes[f"export-{split}"] = run("export-logits", "--split", split)
    codes["external"] = run("audit-external", "--train-logits", str(out / "logits/target_sample_train"),
                            "--test-logits", str(out / "logits/target_sample_test"))
    return run, out, codes, cfg_path


def test_staged_flow_succeeds(staged):
    _, out, codes, _ = staged
    assert all(c == 0 for c in codes.values()), codes
    for rel in ("corpus.jsonl", "splits/sample_target.json", "splits/speaker_target.json",
                "models/target_sample.ckpt", "models/target_sample.log.json",
                "features/target_sample_train_losses.json", "forests/sample_losses.bin",
                "reports/sample_losses.json", "reports/roc_sample_losses.csv",
                "reports/external_sample_losses.json"):
        assert (out / rel).exists(), rel


def test_staged_reports_validate(staged):
    _, out, _, _ = staged
    for name in ("sample_losses", "sample_errors", "external_sample_losses"):
        rep = pl.read_report(out / "reports" / f"{name}.json")
        jsonschema.validate(rep, pl.REPORT_SCHEMA)


def test_external_losses_match_staged_losses(staged):
    _, out, _, _ = staged
    a = pl.read_report(out / "reports/sample_losses.json")
    b = pl.read_report(out / "reports/external_sample_losses.json")
    sa = {(r["seed"], r["utterance_id"]): r["score"] for r in a["scores"]}
    sb = {(r["seed"], r["utterance_id"]): r["score"] for r in b["scores"]}
    assert sa.keys() == sb.keys()
    # float32 logits move losses by < 1e-6; forest thresholds almost never sit in that gap
    same = sum(sa[k] == sb[k] for k in sa)
    assert same / len(sa) >= 0.95


def test_report_check_merges_and_recomputes(staged, capsys):
    run, out, _, _ = staged
    code = run("report", "--check", str(out / "reports/sample_losses.json"),
               str(out / "reports/sample_errors.json"))
    assert code == 0
    assert "losses" in capsys.readouterr().out


def test_report_check_detects_tampering(staged, tmp_path):
    run, out, _, _ = staged
    rep = pl.read_report(out / "reports/sample_losses.json")
    rep["results"][0]["per_seed"][0]["auc"] = 0.123
    bad = tmp_path / "bad.json"
    pl.write_report(rep, bad)
    assert run("report", "--check", str(bad)) == cli.EXIT_DATA


def test_synth_is_repeatable(staged, tmp_path, capsys):
    _, out, _, cfg_path = staged
    capsys.readouterr()
    assert cli.main(["--config", str(cfg_path), "--out-dir", str(tmp_path / "a" / "b"), "synth"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["synth", "--config", str(cfg_path), "--out-dir", str(tmp_path / "c")]) == 0
    second = capsys.readouterr().out
    fp = lambda text: [ln.split()[2] for ln in text.splitlines()]  # noqa: E731
    assert fp(first) == fp(second)
    assert (tmp_path / "a" / "b" / "corpus.jsonl").read_bytes() == (out / "corpus.jsonl").read_bytes()


def test_gradient_features_rejected_for_external(staged):
    run, out, _, _ = staged
    code = run("audit-external", "--feature-set", "losses+AF",
               "--train-logits", str(out / "logits/target_sample_train"),
               "--test-logits", str(out / "logits/target_sample_test"))
    assert code == cli.EXIT_CONFIG


def test_layout_mismatch_on_evaluate(staged):
    run, out, _, _ = staged
    code = run("evaluate", "--feature-set", "losses",
               "--test-features", str(out / "features/target_sample_test_errors.json"))
    assert code == cli.EXIT_DATA


def test_append_with_other_layout_rejected(staged):
    run, out, _, _ = staged
    code = run("extract", "--split", "test", "--feature-set", "errors", "--append",
               "-o", str(out / "features/target_sample_test_losses.json"))
    assert code == cli.EXIT_DATA


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert cli.main(["--config", str(bad), "--out-dir", str(tmp_path), "synth"]) == cli.EXIT_CONFIG


def test_infeasible_sizes_exit_code_names_constraint(tmp_path, capsys):
    cfg = json.loads(json.dumps(TINY))
    cfg["split_sizes"]["sample"]["mi_train_per_class"] = 500
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["--config", str(path), "--out-dir", str(tmp_path), "synth"]) == cli.EXIT_CONFIG
    assert "pool_size" in capsys.readouterr().err


def test_missing_inputs_exit_code(tmp_path):
    assert cli.main(["--out-dir", str(tmp_path), "train-asr"]) == cli.EXIT_DATA


def test_corrupt_checkpoint_exit_code(staged, tmp_path):
    run, out, _, _ = staged
    ckpt = tmp_path / "broken.ckpt"
    ckpt.write_bytes((out / "models/target_sample.ckpt").read_bytes()[:100])
    assert run("extract", "--split", "test", "--model", str(ckpt),
               "-o", str(tmp_path / "f.json")) == cli.EXIT_DATA


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(staged, tmp_path):
    _, out, _, _ = staged
    cfg = json.loads(json.dumps(TINY))
    cfg["training"] = {"epochs": 2, "lr": 1e300}
    path = tmp_path / "nan.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["--config", str(path), "--out-dir", str(out), "train-asr",
                     "--level", "speaker"]) == cli.EXIT_NUMERIC


def test_flags_after_subcommand_and_threads(tmp_path):
    assert cli.main(["synth", "--out-dir", str(tmp_path), "--threads", "0"]) == cli.EXIT_CONFIG

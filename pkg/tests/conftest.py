import time

import numpy as np
import pytest

from asrmi import data as ds
from asrmi import model as asr
from asrmi import pipeline as pl

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """The seeded default experiment (same-model, both levels, every feature set)."""
    out = tmp_path_factory.mktemp("default_run")
    start = time.process_time()
    report = pl.run_experiment(pl.ExperimentConfig(), out)
    return report, out, time.process_time() - start


@pytest.fixture(scope="session")
def desk(default_run):
    """Corpus, sample-level split and trained target model of the default run."""
    _, out, _ = default_run
    cfg = pl.ExperimentConfig()
    corpus = pl.make_corpus(cfg)
    split = pl.make_splits(cfg, corpus, "sample")["target"]
    ckpt = asr.load_checkpoint(out / "model_target_sample.ckpt")
    return cfg, corpus, split, ckpt


@pytest.fixture(scope="session")
def desk_train_utts(desk):
    _, corpus, split, _ = desk
    by_id = corpus.by_id()
    return [by_id[u] for u in split.asr_train]


@pytest.fixture(scope="session")
def tiny_corpus():
    return ds.gen_corpus(n_speakers=6, utt_per_speaker=6, seed=3)


@pytest.fixture(scope="session")
def tiny_model(tiny_corpus):
    """A small model trained briefly; enough for shape and contract tests."""
    cfg = asr.ModelConfig(hidden_dim=12, seed=5)
    return asr.train(asr.init_model(cfg), tiny_corpus.utterances[:12], epochs=2, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

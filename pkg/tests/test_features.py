import numpy as np
import pytest

from asrmi import features as fx
from asrmi.forest import FEATURE_SET_TAGS


@pytest.mark.parametrize("tag,width", [("errors", 28), ("losses", 2), ("losses+GF", 34),
                                       ("losses+AF", 34), ("losses+GF+AF", 66)])
def test_layout_widths(tag, width):
    cols = fx.layout(tag, fx.FeatureConfig())
    assert len(cols) == width and len(set(cols)) == width


def test_layout_is_data_independent_and_fingerprinted():
    a = fx.layout("losses+GF+AF", fx.FeatureConfig())
    assert a[:2] == fx.LOSS_COLUMNS and a[2].startswith("gf.") and a[-1].startswith("af.")
    fps = {fx.layout_fingerprint(fx.layout(t, fx.FeatureConfig())) for t in FEATURE_SET_TAGS}
    assert len(fps) == len(FEATURE_SET_TAGS)


def test_unknown_tag():
    with pytest.raises(ValueError):
        fx.layout("losses+XF", fx.FeatureConfig())


def test_extracted_widths_match_layout(tiny_model, tiny_corpus):
    cfg = fx.FeatureConfig()
    u = tiny_corpus.utterances[0]
    blocks = fx.extract_utterance(tiny_model, u, fx.families_for(FEATURE_SET_TAGS), cfg)
    for tag in FEATURE_SET_TAGS:
        vec = fx.assemble(blocks, tag)
        assert vec.shape == (len(fx.layout(tag, cfg)),) and np.all(np.isfinite(vec))


def test_extraction_is_thread_independent(tiny_model, tiny_corpus):
    cfg = fx.FeatureConfig()
    utts = tiny_corpus.utterances[:6]
    fams = ["errors", "losses", "gf"]
    a = fx.extract_all(tiny_model, utts, fams, cfg, threads=1)
    b = fx.extract_all(tiny_model, list(reversed(utts)), fams, cfg, threads=3)
    assert list(a) == list(b)
    for uid in a:
        for fam in fams:
            np.testing.assert_array_equal(a[uid][fam], b[uid][fam])


def feature_file(tag, cols, ids, offset=0.0):
    from asrmi.forest import MIExample
    ex = [MIExample(np.arange(len(cols), dtype=float) + i + offset, i % 2, "spk", uid, tag)
          for i, uid in enumerate(ids)]
    return fx.FeatureFile(tag, cols, ex, {"role": "test"})


def test_feature_file_round_trip_and_append(tmp_path):
    cols = fx.layout("losses", fx.FeatureConfig())
    path = tmp_path / "f.json"
    fx.write_features(feature_file("losses", cols, ["b", "a"]), path)
    back = fx.read_features(path)
    assert [e.utterance_id for e in back.examples] == ["a", "b"]
    fx.write_features(feature_file("losses", cols, ["c", "a"], offset=10), path, append=True)
    merged = fx.read_features(path)
    assert [e.utterance_id for e in merged.examples] == ["a", "b", "c"]
    assert merged.examples[0].features[0] == 11.0  # replaced by the newer row


def test_append_layout_mismatch(tmp_path):
    cfg = fx.FeatureConfig()
    path = tmp_path / "f.json"
    fx.write_features(feature_file("losses", fx.layout("losses", cfg), ["a"]), path)
    other = feature_file("errors", fx.layout("errors", cfg), ["b"])
    with pytest.raises(fx.LayoutError):
        fx.write_features(other, path, append=True)
    with pytest.raises(fx.LayoutError):
        fx.check_same_layout(fx.read_features(path), other)


def test_corrupt_feature_file(tmp_path):
    path = tmp_path / "f.json"
    path.write_text("{not json")
    with pytest.raises(fx.LayoutError):
        fx.read_features(path)

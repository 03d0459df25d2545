import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asrmi import metrics
from oracles import direct_accuracy, pair_count_auc, sweep_tpr_at_fpr


def random_sets(n_sets=100, seed=0):
    """Seeded scored sets (n <= 500) with plenty of tied scores."""
    rng = np.random.default_rng(seed)
    for _ in range(n_sets):
        n = int(rng.integers(2, 501))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        grid = int(rng.choice([5, 50, 10**6]))
        # integer numerators: equal scores are exact ties, distinct ones stay apart
        s = (rng.integers(0, grid, size=n) + (grid // 5) * y) / grid
        yield s, y


def test_accuracy_examples():
    assert metrics.accuracy([0.6, 0.4], [1, 0]) == 1.0
    assert metrics.accuracy([0.6, 0.6], [1, 0]) == 0.5
    rng = np.random.default_rng(5)
    s, y = rng.random(100), rng.integers(0, 2, 100)
    assert metrics.accuracy(s, y) == direct_accuracy(s, y)


def test_roc_auc_examples():
    assert metrics.auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert metrics.auc([0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75
    assert metrics.auc([0.3] * 6, [1, 0, 1, 0, 1, 0]) == 0.5


def test_roc_points_start_at_origin_and_are_monotone():
    pts = metrics.roc_curve([0.9, 0.4, 0.6, 0.2, 0.4], [1, 1, 0, 0, 0])
    assert pts[0] == (0.0, 0.0, float("inf")) and pts[-1][:2] == (1.0, 1.0)
    f = [p[0] for p in pts]
    t = [p[1] for p in pts]
    assert f == sorted(f) and t == sorted(t)


def test_tpr_at_fpr_examples():
    s, y = [0.9, 0.5, 0.8, 0.2], [1, 1, 0, 0]
    assert metrics.tpr_at_fpr(s, y, 0.01) == 0.5
    assert metrics.tpr_at_fpr([0.9, 0.8, 0.1], [1, 1, 0], 0.01) == 1.0
    assert metrics.tpr_at_fpr(s, y, 0.999) == sweep_tpr_at_fpr(s, y, 0.999)
    # nothing qualifies except +inf
    assert metrics.tpr_at_fpr([0.1, 0.9], [1, 0], 0.1) == 0.0


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_tpr_at_fpr_rejects_target(bad):
    with pytest.raises(metrics.MetricsError):
        metrics.tpr_at_fpr([0.1, 0.9], [0, 1], bad)


def test_invalid_sets():
    with pytest.raises(metrics.MetricsError):
        metrics.auc([0.1, 0.2], [1, 1])
    with pytest.raises(metrics.MetricsError):
        metrics.accuracy([], [])
    with pytest.raises(metrics.MetricsError):
        metrics.accuracy([0.1], [2])
    with pytest.raises(metrics.MetricsError):
        metrics.accuracy([0.1, 0.2], [1])


def test_auc_matches_pair_count_oracle():
    for s, y in random_sets():
        assert abs(metrics.auc(s, y) - pair_count_auc(s, y)) <= 1e-12


def test_tpr_at_fpr_matches_sweep_oracle():
    for s, y in random_sets():
        for target in (0.1, 0.01, 0.37):
            assert metrics.tpr_at_fpr(s, y, target) == sweep_tpr_at_fpr(s, y, target)


def test_monotone_transform_invariance():
    for s, y in random_sets():
        t = np.exp(3.0 * s) + 7.0
        assert np.unique(t).size == np.unique(s).size  # transform kept every tie class
        a, b = metrics.roc_curve(s, y), metrics.roc_curve(t, y)
        assert [p[:2] for p in a] == [p[:2] for p in b]
        assert metrics.auc(s, y) == metrics.auc(t, y)
        for target in (0.1, 0.01):
            assert metrics.tpr_at_fpr(s, y, target) == metrics.tpr_at_fpr(t, y, target)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=2, max_size=60, unique=True), st.data())
def test_auc_complement_without_ties(vals, data):
    y = data.draw(st.lists(st.integers(0, 1), min_size=len(vals), max_size=len(vals)))
    y[0], y[1] = 0, 1
    s = np.array(vals, dtype=float)
    assert metrics.auc(s, y) + metrics.auc(-s, y) == pytest.approx(1.0, abs=1e-12)


def test_tpr_nondecreasing_in_target():
    for s, y in random_sets(20, seed=1):
        vals = [metrics.tpr_at_fpr(s, y, f) for f in np.linspace(0.01, 0.99, 25)]
        assert vals == sorted(vals)


def test_evaluate_scores_report():
    r = metrics.evaluate_scores([0.9, 0.5, 0.8, 0.2], [1, 1, 0, 0], feature_set_tag="losses")
    assert (r.n_pos, r.n_neg) == (2, 2)
    assert set(r.tpr_at_fpr) == {0.1, 0.01}
    d = r.to_dict()
    assert d["roc"][0][2] is None and d["feature_set"] == "losses"

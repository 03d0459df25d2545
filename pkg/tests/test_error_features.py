import functools
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asrmi import error_features as errf
from asrmi.model import Hypothesis
from oracles import edit_distances_bfs


def exhaustive_min_edits(ref, hyp):
    """Minimum unit-cost alignment by recursion over every alignment (no DP table)."""

    @functools.lru_cache(maxsize=None)
    def go(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(go(i + 1, j + 1) + (ref[i] != hyp[j]), go(i + 1, j) + 1, go(i, j + 1) + 1)

    return go(0, 0)


def all_sequences(alphabet, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def test_levenshtein_examples():
    assert errf.levenshtein("abc", "abc") == errf.EditCounts(0, 0, 0)
    c = errf.levenshtein("abc", "axc")
    assert (c.substitutions, c.insertions, c.deletions) == (1, 0, 0)
    assert errf.levenshtein("ab", "").deletions == 2
    assert errf.levenshtein("", "ab").insertions == 2


def test_levenshtein_tie_break_prefers_substitution():
    c = errf.levenshtein([1, 2], [3])
    assert (c.substitutions, c.deletions, c.insertions) == (1, 1, 0)


def test_levenshtein_exhaustive_small():
    seqs = list(all_sequences((0, 1, 2), 3))
    for r in seqs:
        for h in seqs:
            assert errf.levenshtein(r, h).edits == exhaustive_min_edits(r, h)


def test_levenshtein_matches_bfs_all_pairs_len5():
    seqs, dist = edit_distances_bfs((0, 1, 2), 5)
    for i, r in enumerate(seqs):
        row = dist[i]
        for j, h in enumerate(seqs):
            c = errf.levenshtein(r, h)
            assert c.edits == row[j]
            assert len(r) - c.deletions + c.insertions == len(h)


@given(st.lists(st.integers(0, 2), max_size=6), st.lists(st.integers(0, 2), max_size=6))
def test_levenshtein_symmetry_and_bounds(r, h):
    a, b = errf.levenshtein(r, h), errf.levenshtein(h, r)
    assert a.edits == b.edits
    assert a.substitutions == b.substitutions
    assert (a.insertions, a.deletions) == (b.deletions, b.insertions)
    assert abs(len(r) - len(h)) <= a.edits <= max(len(r), len(h))
    # counts must reproduce the hypothesis length
    assert len(r) - a.deletions + a.insertions == len(h)


def test_error_block_examples():
    hyp = Hypothesis((1, 2, 3), -0.3)
    block = errf.error_block([1, 2, 3], [hyp], k=1)
    np.testing.assert_allclose(block, [0, 0, 0, 0, 0, 1, hyp.confidence])
    block = errf.error_block([1, 2, 3, 4], [Hypothesis((1, 2), -1.0)], k=1)
    assert block[0] == 0.5 and block[4] == 0.5 and block[5] == 0.5


def test_error_block_padding_repeats_last():
    hyps = [Hypothesis((1,), -0.1), Hypothesis((2,), -0.5)]
    block = errf.error_block([1], hyps, k=4).reshape(4, 7)
    np.testing.assert_array_equal(block[2], block[1])
    np.testing.assert_array_equal(block[3], block[1])


@given(st.lists(st.integers(1, 5), max_size=6),
       st.lists(st.lists(st.integers(1, 5), max_size=6), min_size=1, max_size=6),
       st.integers(1, 5))
def test_error_block_length(ref, hyp_tokens, k):
    hyps = [Hypothesis(tuple(t), -float(i)) for i, t in enumerate(hyp_tokens)]
    block = errf.error_block(ref, hyps, k)
    assert block.shape == (7 * k,)
    assert np.all(block[np.arange(7 * k) % 7 != 6] >= 0)


def test_error_block_empty_reference():
    block = errf.error_block([], [Hypothesis((1, 2), -1.0)], k=1)
    assert block[0] == 2.0 and block[5] == 2.0


def test_error_block_needs_hypotheses():
    with pytest.raises(ValueError):
        errf.error_block([1], [], k=4)


def test_columns():
    cols = errf.error_columns(4)
    assert len(cols) == 28 and cols[6] == "err.h1.confidence"

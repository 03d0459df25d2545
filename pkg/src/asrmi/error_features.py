"""Transcription-error features over the top-K beam hypotheses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Errors are counted over model tokens (the toy vocabulary units play the role of words).
ERROR_UNIT = "token"
DEFAULT_TOP_K = 4
ERROR_FIELDS = ("wer", "edits_norm", "subs_norm", "ins_norm", "del_norm", "len_ratio", "confidence")


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    insertions: int
    deletions: int

    @property
    def edits(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def levenshtein(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Unit-cost minimum edit alignment of ``hyp`` against ``ref``.

    Among equal-cost alignments the one with the most substitutions wins,
    which pins (S, I, D) uniquely and keeps the counts symmetric under
    swapping ref and hyp. The backtrace prefers substitution (or match),
    then deletion, then insertion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    # cost key: edits * BIG + indels, so ties on edits go to fewer indels
    big = n + m + 1
    step = big + 1
    d = [[j * step for j in range(m + 1)]]
    for i in range(1, n + 1):
        prev, row = d[-1], [i * step]
        r = ref[i - 1]
        for j in range(1, m + 1):
            row.append(min(prev[j - 1] + big * (r != hyp[j - 1]), prev[j] + step, row[j - 1] + step))
        d.append(row)
    i, j = n, m
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + big * (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + step:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(int(s), int(ins), int(dels))


def hypothesis_errors(ref: Sequence[int], tokens: Sequence[int], confidence: float) -> list[float]:
    e = levenshtein(ref, tokens)
    denom = max(1, len(ref))
    return [e.edits / denom, e.edits / denom, e.substitutions / denom,
            e.insertions / denom, e.deletions / denom, len(tokens) / denom, float(confidence)]


def error_block(ref: Sequence[int], hyps: Sequence, k: int = DEFAULT_TOP_K) -> np.ndarray:
    """7*k error features; missing hypotheses repeat the last available block.

    ``hyps`` are objects with ``tokens`` and ``confidence``, best first.
    """
    if not hyps:
        raise ValueError("error_block needs at least one hypothesis")
    blocks = [hypothesis_errors(ref, h.tokens, h.confidence) for h in hyps[:k]]
    while len(blocks) < k:
        blocks.append(list(blocks[-1]))
    return np.array(blocks, dtype=np.float64).reshape(-1)


def error_columns(k: int = DEFAULT_TOP_K) -> list[str]:
    return [f"err.h{r + 1}.{name}" for r in range(k) for name in ERROR_FIELDS]

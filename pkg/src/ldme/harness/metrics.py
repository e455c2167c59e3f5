"""Scoring helpers for planted instances."""

from __future__ import annotations

import itertools
import math

import numpy as np

__all__ = ["min_list_error", "clustering_accuracy", "contingency"]


def min_list_error(hyps, mu_star) -> float:
    """min over the list of ||mu_hat - mu_star||; +inf for an empty list."""
    L = np.asarray(hyps, dtype=np.float64)
    if L.size == 0:
        return math.inf
    L = np.atleast_2d(L)
    return float(np.min(np.linalg.norm(L - np.asarray(mu_star, dtype=np.float64)[None, :], axis=1)))


def contingency(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Counts C[t, p] over points with truth label t >= 0 and prediction p >= 0."""
    ok = (pred >= 0) & (truth >= 0)
    kt = int(truth.max()) + 1 if np.any(truth >= 0) else 0
    kp = int(pred.max()) + 1 if np.any(pred >= 0) else 0
    C = np.zeros((kt, kp), dtype=np.int64)
    np.add.at(C, (truth[ok], pred[ok]), 1)
    return C


def _best_assignment(C: np.ndarray) -> int:
    """Largest total overlap of a one-to-one matching between rows and columns."""
    kt, kp = C.shape
    if kt == 0 or kp == 0:
        return 0
    if min(kt, kp) <= 10 and max(kt, kp) <= 10:
        if kt <= kp:
            return max(sum(C[i, p[i]] for i in range(kt)) for p in itertools.permutations(range(kp), kt))
        return max(sum(C[p[j], j] for j in range(kp)) for p in itertools.permutations(range(kt), kp))
    # greedy max-overlap matching for larger label sets
    total, used_r, used_c = 0, set(), set()
    for flat in np.argsort(-C, axis=None, kind="stable"):
        r, c = divmod(int(flat), kp)
        if r in used_r or c in used_c or C[r, c] == 0:
            continue
        total += int(C[r, c])
        used_r.add(r)
        used_c.add(c)
    return total


def clustering_accuracy(pred, truth) -> float:
    """Fraction of labeled-truth points whose predicted label agrees after the
    best relabeling.  Points with truth -1 are excluded; predictions of -1
    count as wrong.  Symmetric when neither argument uses -1."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("labelings must cover the same index set")
    denom = int(np.sum(truth >= 0))
    if denom == 0:
        return 1.0
    return _best_assignment(contingency(pred, truth)) / denom

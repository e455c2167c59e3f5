"""Robust mean estimation with a minority of outliers via soft downweighting.

Each round scores every point by its energy along the top of the spectrum of
the weighted covariance (a high matrix power, sketched with random sign
probes) and multiplies its weight by ``(1 - s_i / s_max)^K``, with the
smallest ``K`` that makes the weighted score mass fall below a constant times
the sketched trace of the covariance power.  Rounds stop once the operator
norm of the weighted covariance is small.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import (
    Dataset,
    LdmeError,
    Params,
    SketchSet,
    build_sketch,
    node_rng,
    op_norm_estimate,
    power_exponent,
    trace_sq_estimate,
    weighted_mean,
)

logger = logging.getLogger(__name__)

__all__ = [
    "FilterFixpoint",
    "RobustMeanResult",
    "compute_scores",
    "downweight",
    "criterion_value",
    "find_min_k",
    "robust_mean",
    "MAX_K",
]

MAX_K = 2**62


class FilterFixpoint(LdmeError):
    """Every score is zero, so no downweighting is possible."""


@dataclass
class RobustMeanResult:
    mean: np.ndarray
    weights: np.ndarray
    iterations: int
    op_norm: float
    warnings: List[str] = field(default_factory=list)
    history: List[dict] = field(default_factory=list)


def compute_scores(ds: Dataset, w: np.ndarray, sketch: SketchSet) -> np.ndarray:
    """s_i = (1/N) sum_j <v_j, X_i - mu_w>^2; points with zero weight score 0."""
    w = np.asarray(w, dtype=np.float64)
    mu = weighted_mean(ds, w)
    Z = ds.points - mu
    proj = Z @ sketch.images.T
    s = np.mean(proj * proj, axis=1)
    s[w <= 0] = 0.0
    return s


def downweight(w: np.ndarray, scores: np.ndarray, K: int) -> np.ndarray:
    """w_i <- (1 - s_i / s_max)^K w_i with s_max over the supported points."""
    w = np.asarray(w, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    sup = w > 0
    smax = float(s[sup].max()) if np.any(sup) else 0.0
    if smax <= 0.0:
        raise FilterFixpoint("filter fixpoint: all scores are zero")
    if K == 0:
        return w.copy()
    base = np.clip(1.0 - s / smax, 0.0, 1.0)
    with np.errstate(under="ignore"):
        out = w * base ** float(K)
    out[~sup] = 0.0
    out[sup & (s >= smax)] = 0.0
    return out


def criterion_value(w: np.ndarray, scores: np.ndarray, K: int) -> float:
    """sum_i w'_i s_i after downweighting with exponent K."""
    return float(np.dot(downweight(w, scores, K), scores))


def find_min_k(w: np.ndarray, scores: np.ndarray, target: float, budget: int = 200) -> int:
    """Smallest K >= 0 with criterion_value(w, s, K) <= target.

    Doubling search for an upper bracket, then bisection.  The criterion is
    nonincreasing in K since every factor (1 - s_i/s_max) lies in [0, 1].
    """
    evals = 0

    def ok(K: int) -> bool:
        nonlocal evals
        evals += 1
        if evals > budget:
            raise LdmeError(f"find_min_k exceeded its budget of {budget} evaluations (K={K}, target={target:.6g})")
        return criterion_value(w, scores, K) <= target

    if ok(0):
        return 0
    hi = 1
    while not ok(hi):
        if hi >= MAX_K:
            raise LdmeError(f"find_min_k: criterion still fails at K={MAX_K} (target={target:.6g})")
        hi = min(hi * 2, MAX_K)
    lo = hi // 2  # fails (or is 0, which failed above)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _preprocess(ds: Dataset, eps: float, params: Params) -> np.ndarray:
    """Indices of the largest gap component (the inlier majority stays whole)."""
    from .multifilter import naive_cluster_plus

    comps = naive_cluster_plus(ds, params.delta, 1.0 - eps, params.seed, (0x6F73,), params.c_naive, params.sigma)
    return max(comps, key=lambda c: c.size)


def robust_mean(ds: Dataset, eps: float, params: Optional[Params] = None, preprocess: bool = True) -> RobustMeanResult:
    """Filter soft weights until the weighted covariance has small operator norm.

    Stops when the power-iteration estimate of the norm of
    sum_i w_i (X_i - mu_w)(X_i - mu_w)^T is at most ``params.op_norm_stop``
    (in units of sigma^2).  The number of rounds is capped at
    c_depth * ceil(log2 d)^2; reaching the cap returns the round with the
    smallest norm and a warning.
    """
    params = Params() if params is None else params
    if not (0.0 <= eps < 0.5):
        raise LdmeError(f"eps must lie in [0, 1/2), got {eps}")
    n, d = ds.n, ds.d
    warn: List[str] = []
    w = np.zeros(n)
    keep = _preprocess(ds, eps, params) if preprocess else np.arange(n)
    w[keep] = 1.0 / n
    p = power_exponent(d)
    n_dir = params.n_dir(d)
    stop = params.op_norm_stop * params.sigma**2
    cap = max(1, int(math.ceil(params.c_depth * max(p, 1) ** 2)))
    history: List[dict] = []
    best = (math.inf, w.copy())
    for t in range(cap):
        sup = np.flatnonzero(w > 0)
        lam = op_norm_estimate(ds, sup, w, iters=64, tol=1e-3, rng=node_rng(params.seed, (0x6F6E, t)))
        if lam < best[0]:
            best = (lam, w.copy())
        if lam <= stop:
            return RobustMeanResult(weighted_mean(ds, w), w, t, lam, warn, history)
        sk = build_sketch(ds, sup, p, n_dir, node_rng(params.seed, (0x6F73, t)), weights=w)
        # A common rescaling of all images leaves the criterion unchanged and
        # keeps the p-th power of a large covariance in range.
        scale = lam**p if lam > 0 else 1.0
        sk = SketchSet(sk.probes, sk.images / scale, sk.power)
        s = compute_scores(ds, w, sk)
        target = params.filter_const * trace_sq_estimate(sk)
        try:
            K = find_min_k(w, s, target, params.k_budget)
        except FilterFixpoint:
            warn.append("filter fixpoint reached before the norm target")
            break
        if K == 0:
            # Sketch noise can make the criterion pass while the norm is still
            # above the stop level; take one unit step so the round is not wasted.
            K = 1
        w_new = downweight(w, s, K)
        history.append({"round": t, "op_norm": lam, "K": K, "criterion": float(np.dot(w_new, s)), "target": target})
        w = w_new
        if not np.any(w > 0):
            warn.append("all weight removed")
            break
    else:
        warn.append(f"round cap {cap} reached; returning the iterate with the smallest norm")
    lam, w = best
    return RobustMeanResult(weighted_mean(ds, w), w, len(history), lam, warn, history)

"""Multifilter for inliers with sub-Gaussian tails.

Every node of the tree is cut along a handful of sketched directions so that,
along each direction, every child lies inside a short interval.  Splits use
two overlapping halves around a threshold near the median; the overlap keeps
the inlier core intact on at least one side while the size potential
``sum |child|^(1+beta)`` strictly decreases.
"""

from __future__ import annotations

import logging
import math
import warnings as _warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels as K
from ._tree import (
    LayerStat,
    gap_components,
    naive_dirs,
    naive_threshold,
    run_tree,
    sketch_directions,
)
from .core import (
    Dataset,
    LdmeError,
    Params,
    Projected1D,
    node_rng,
    power_exponent,
    project_1d,
)

logger = logging.getLogger(__name__)

__all__ = [
    "One",
    "Two",
    "GaussSplitOutcome",
    "MultifilterResult",
    "gaussian_k_max",
    "gaussian_split_or_cluster",
    "gaussian_1d_partition",
    "gaussian_partition",
    "fast_gaussian_multifilter",
    "naive_cluster",
]


@dataclass(frozen=True)
class One:
    """Cluster outcome: the window [lo, hi) of the sorted projections."""

    lo: int
    hi: int


@dataclass(frozen=True)
class Two:
    """Split outcome: left = {Y <= tau + r|v|}, right = {Y >= tau - r|v|}."""

    tau: float
    r: float
    left: Tuple[int, int]
    right: Tuple[int, int]


GaussSplitOutcome = Union[One, Two]


@dataclass
class MultifilterResult:
    hypotheses: np.ndarray
    layer_stats: List[LayerStat] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    leaves: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return self.hypotheses.shape[0]


def gaussian_k_max(alpha: float, delta_q: float, beta: float, c_k: float = 4.0) -> int:
    """Number of thresholds on each side of the median: ceil(c_k log2 log2(3 + 1/(alpha dq)) / beta)."""
    return max(1, int(math.ceil(c_k * math.log2(math.log2(3.0 + 1.0 / (alpha * delta_q))) / beta)))


def _unit(p1d: Projected1D) -> np.ndarray:
    return p1d.values / p1d.v_norm


def gaussian_split_or_cluster(
    p1d: Projected1D,
    params: Params,
    Delta_q: float,
    R: Optional[float] = None,
    window: Optional[Tuple[int, int]] = None,
    alpha: Optional[float] = None,
) -> GaussSplitOutcome:
    """One step of the Gaussian 1-D partition on a window of ``p1d``.

    Projections are taken along the unit direction of ``p1d``.  ``R`` defaults
    to the Gaussian radius for the dimension of the direction vector.
    """
    alpha = params.alpha if alpha is None else alpha
    R = params.radius_gaussian(max(2, p1d.dim)) if R is None else R
    lo, hi = (0, p1d.m) if window is None else window
    if hi <= lo:
        raise LdmeError("degenerate node: empty window")
    y = _unit(p1d)
    olo, ohi, one = K.gauss_one_window(y, lo, hi, alpha * Delta_q, R)
    if one:
        return One(olo, ohi)
    kmax = gaussian_k_max(alpha, Delta_q, params.beta, params.c_k)
    f, tau, r, nl, nr = K.gauss_split_scan(y, lo, hi, params.beta, R, kmax)
    if not f:
        raise LdmeError("internal contradiction: no threshold satisfies the size bound")
    return Two(tau=float(tau) * p1d.v_norm, r=float(r), left=(lo, lo + int(nl)), right=(hi - int(nr), hi))


@dataclass
class _GaussCtx:
    ds: Dataset
    alpha: float
    beta: float
    R: float
    kmax: int
    alpha_dq: float
    n_dir: int
    p: int
    seed: int
    record: Optional[list] = None


def _gauss_ctx(ds: Dataset, params: Params, alpha: float) -> _GaussCtx:
    d = ds.d
    n_dir = params.n_dir(d)
    C = params.quantile_C(d) * n_dir
    dq = 1.0 / (C * ds.n)
    return _GaussCtx(
        ds=ds,
        alpha=alpha,
        beta=params.beta,
        R=params.radius_gaussian(d),
        kmax=gaussian_k_max(alpha, dq, params.beta, params.c_k),
        alpha_dq=alpha * dq,
        n_dir=n_dir,
        p=power_exponent(d),
        seed=params.seed,
    )


def _gauss_1d(ctx: _GaussCtx, y: np.ndarray, loc: np.ndarray) -> List[np.ndarray]:
    """Children (as subsets of ``loc``) of one node along projections ``y``."""
    order = np.argsort(y, kind="stable")
    ys = np.ascontiguousarray(y[order])
    leaves, splits, _, err = K.gauss_partition_windows(ys, ctx.alpha_dq, ctx.beta, ctx.R, ctx.kmax, ctx.record is not None)
    if err:
        raise LdmeError("internal contradiction: no threshold satisfies the size bound")
    if ctx.record is not None:
        ctx.record.append({"m": ys.size, "splits": splits, "leaves": leaves.copy(), "y": ys})
    sorted_loc = loc[order]
    return [np.sort(sorted_loc[lo:hi]) for lo, hi, _ in leaves]


def gaussian_1d_partition(ds: Dataset, sub, v, params: Params, record: Optional[list] = None) -> List[np.ndarray]:
    """Children of ``sub`` whose projections on ``v`` each span at most R|v|."""
    sub = np.asarray(sub, dtype=np.int64)
    ctx = _gauss_ctx(ds, params, params.alpha)
    ctx.record = record
    p1d = project_1d(ds, sub, v)
    y = ds.points[sub] @ (np.asarray(v, dtype=np.float64) / p1d.v_norm)
    return _gauss_1d(ctx, y, sub)


def _gauss_partition_rows(ctx: _GaussCtx, rows: np.ndarray, rng: np.random.Generator, dirs_out: Optional[list] = None):
    ds = ctx.ds
    if rows.size <= 1:
        return [rows]
    X = ds.points[rows]
    Xc = X - X.mean(axis=0)
    V = sketch_directions(Xc, ctx.p, ctx.n_dir, rng)
    if dirs_out is not None:
        dirs_out.append(V)
    P = np.ascontiguousarray(Xc @ V.T)
    j0 = K.gauss_first_active_direction(P, ctx.alpha_dq, ctx.R) if ctx.record is None else 0
    current = [np.arange(rows.size)]
    for j in range(j0, V.shape[0]):
        if not np.any(V[j]):
            continue
        nxt: List[np.ndarray] = []
        for loc in current:
            nxt.extend(_gauss_1d(ctx, P[loc, j], loc))
        current = nxt
    return [rows[c] for c in current if c.size]


def gaussian_partition(
    ds: Dataset,
    sub,
    params: Params,
    path: Sequence[int] = (),
    alpha: Optional[float] = None,
    record: Optional[list] = None,
    dirs_out: Optional[list] = None,
) -> List[np.ndarray]:
    """Compose the 1-D partition over N_dir sketched directions of the node."""
    ctx = _gauss_ctx(ds, params, params.alpha if alpha is None else alpha)
    ctx.record = record
    rows = np.asarray(sub, dtype=np.int64)
    return _gauss_partition_rows(ctx, rows, node_rng(params.seed, tuple(path)), dirs_out)


def naive_cluster(ds: Dataset, delta: float, alpha: float = 0.1, seed: int = 0, c_naive: float = 8.0, sigma: float = 1.0) -> List[np.ndarray]:
    """Split the data at wide empty gaps along random directions.

    Inlier projections on any unit direction deviate from their mean by at
    most sqrt(alpha n) in aggregate, so no gap inside the inlier set can exceed
    2 sqrt(alpha n); cutting at wider gaps never separates inliers.
    """
    rng = node_rng(seed, (0x6E61,))
    return gap_components(ds.points, naive_dirs(ds.n, delta, c_naive), naive_threshold(alpha, ds.n, sigma), rng)


def _clamp_alpha(alpha: float, d: int, warn: List[str]) -> float:
    lo, hi = 1.0 / max(d, 2), 0.49
    if alpha < lo or alpha > hi:
        a = min(max(alpha, lo), hi)
        warn.append(f"alpha={alpha:.4g} outside the analyzed range [{lo:.4g}, {hi}]; clamped to {a:.4g}")
        return a
    return alpha


def fast_gaussian_multifilter(ds: Dataset, params: Params) -> MultifilterResult:
    """Naive clustering followed by a depth-D Gaussian multifilter tree per component."""
    warn: List[str] = []
    n, d = ds.n, ds.d
    D, capped = params.depth(d)
    if capped:
        warn.append(f"tree depth capped at {D} layers")
    alpha_n = params.alpha * n
    comps = naive_cluster(ds, params.delta, params.alpha, params.seed, params.c_naive, params.sigma)
    stats: List[LayerStat] = []
    leaves: List[np.ndarray] = []
    for ci, comp in enumerate(comps):
        if comp.size < alpha_n / 2.0:
            continue
        sub_warn: List[str] = []
        a_i = _clamp_alpha(params.alpha * n / comp.size, d, sub_warn)
        ctx = _gauss_ctx(ds, params, a_i)

        def part(rows, path, ctx=ctx):
            return _gauss_partition_rows(ctx, rows, node_rng(params.seed, path))

        leaves.extend(run_tree(comp, (1, ci), D, alpha_n / 2.0, params.beta, part, stats))
    if not leaves:
        warn.append("no node survived to the final layer")
        return MultifilterResult(np.empty((0, d)), stats, warn, [])
    hyps = np.array([ds.points[l].mean(axis=0) for l in leaves])
    return MultifilterResult(hyps, stats, warn, leaves)

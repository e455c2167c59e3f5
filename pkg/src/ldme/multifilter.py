"""Fast multifilter for inliers with bounded covariance.

Each node is refined along sketched directions of its covariance power.  Along
one direction a node either becomes a cluster (after a randomized repair that
sheds far-out points until its directional variance is small) or is split
into two overlapping halves.  A split is accepted only if it lowers the size
potential and sheds at least a 2 gamma / r^2 fraction on each side.

Unit directions
---------------
Every condition in the 1-D steps is homogeneous in the direction ``v``: the
thresholds scale with ``|v|``, variances with ``|v|^2``.  The implementation
therefore normalizes ``v`` once and runs every comparison with ``|v| = 1``;
public helpers that take a :class:`Projected1D` translate back to the caller's
scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels as K
from ._tree import LayerStat, gap_components, naive_dirs, naive_threshold, run_tree, sketch_directions
from .core import (
    Dataset,
    LdmeError,
    Params,
    Projected1D,
    node_rng,
    num_directions,
    power_exponent,
    project_1d,
)
from .gaussian_mf import MultifilterResult, _clamp_alpha

logger = logging.getLogger(__name__)

__all__ = [
    "SplitFound",
    "TailBound",
    "Cluster",
    "Split",
    "Trace",
    "MultifilterResult",
    "split_or_tail_bound",
    "rand_drop",
    "fixing",
    "split_or_cluster",
    "one_d_partition",
    "partition",
    "naive_cluster_plus",
    "iterate_post_process",
    "fast_multifilter",
    "bounded_diameter_tree",
    "rand_drop_delta",
    "fix_loop_cap",
    "supergeometric_sum",
    "supergeometric_max_terms",
]


# ---------------------------------------------------------------------------
# outcome types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitFound:
    tau: float
    r: float


@dataclass(frozen=True)
class TailBound:
    value: float


@dataclass(frozen=True)
class Cluster:
    fixed: np.ndarray


@dataclass(frozen=True)
class Split:
    tau: float
    r: float
    left: np.ndarray
    right: np.ndarray


SplitDecision = Union[Cluster, Split]


@dataclass
class Trace:
    """Optional record of every decision, used by the invariant checks."""

    partitions: List[Tuple[int, List[int]]] = field(default_factory=list)
    splits: List[dict] = field(default_factory=list)
    tails: List[dict] = field(default_factory=list)
    fixes: List[dict] = field(default_factory=list)
    directions: List[dict] = field(default_factory=list)  # per partition call: rows, V, R, n_div, kids


# ---------------------------------------------------------------------------
# context
# ---------------------------------------------------------------------------


def rand_drop_delta(d: int, delta: float, c_fix: float = 8.0) -> Tuple[float, int]:
    """Per-call failure budget of the random dropout and the repair loop cap.

    The loop runs at most N = ceil(c_fix log2 d log2(d/delta)) times and each
    dropout gets delta / (2N).
    """
    N = fix_loop_cap(d, delta, c_fix)
    return delta / (2.0 * N), N


def fix_loop_cap(d: int, delta: float, c_fix: float = 8.0) -> int:
    lg = max(math.log2(max(d, 2)), 1.0)
    return max(1, int(math.ceil(c_fix * lg * math.log2(max(d, 2) / delta))))


@dataclass
class _Ctx:
    ds: Dataset
    alpha: float  # clamped, drives gamma, R, quantile interval and sweep
    alpha_n: float  # model value of |S| (global alpha times global n)
    beta: float
    gamma: float
    R: float
    delta: float
    d: int
    seed: int
    c_fix: float
    c_dir: float
    n_div: int  # divisor of the unnormalized covariance (size of the tree's universe)
    n_dir: int
    trace: Optional[Trace] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.n_div


def _make_ctx(
    ds: Dataset,
    params: Params,
    alpha: float,
    delta: float,
    trace: Optional[Trace] = None,
    n_div: Optional[int] = None,
    n_dir: Optional[int] = None,
    alpha_n: Optional[float] = None,
) -> _Ctx:
    """Context for 1-D steps; ``delta`` is the failure budget of one 1-D step."""
    sub = params.with_(alpha=alpha)
    return _Ctx(
        ds=ds,
        alpha=alpha,
        alpha_n=params.alpha * ds.n if alpha_n is None else alpha_n,
        beta=params.beta,
        gamma=sub.gamma_value(),
        R=sub.radius_bounded_cov(ds.d, delta),
        delta=delta,
        d=ds.d,
        seed=params.seed,
        c_fix=params.c_fix,
        c_dir=params.c_dir,
        n_div=ds.n if n_div is None else int(n_div),
        n_dir=16 if n_dir is None else int(n_dir),
        trace=trace,
    )


# ---------------------------------------------------------------------------
# 1-D steps
# ---------------------------------------------------------------------------


def split_or_tail_bound(p1d: Projected1D, params: Params, tau0: float, gamma: Optional[float] = None) -> Union[SplitFound, TailBound]:
    """Walk thresholds from ``tau0`` toward the median looking for a split.

    Returns the first ``(tau, r)`` whose overlapping halves satisfy the size
    and shedding bounds, or a certified bound on the tail mass beyond
    ``tau0``.  ``tau`` is on the caller's scale; ``r`` is in units of |v|.
    """
    g = params.gamma_value() if gamma is None else gamma
    y = p1d.values / p1d.v_norm
    f, ts, r, nl, nr, bnd = K.split_or_tail_bound(y, 0, y.size, tau0 / p1d.v_norm, g, params.beta)
    if f:
        return SplitFound(tau=float(ts) * p1d.v_norm, r=float(r))
    return TailBound(value=float(bnd))


def rand_drop(sub, scores, delta_rd: float, rng: np.random.Generator) -> np.ndarray:
    """Keep each point independently with probability 1 - s_i / s_max.

    ``delta_rd`` is the failure budget the caller reserved for this call; it
    does not change the sampling itself.
    """
    sub = np.asarray(sub, dtype=np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return sub
    smax = float(s.max())
    if smax <= 0.0:
        return sub
    keep = rng.random(s.size) < 1.0 - s / smax
    return sub[keep]


def _var(y: np.ndarray, n: int) -> float:
    if y.size <= 1:
        return 0.0
    return float(np.sum((y - y.mean()) ** 2)) / n


def _fix_sorted(ctx: _Ctx, ys: np.ndarray, loc: np.ndarray, rng_key: Tuple[int, ...]) -> np.ndarray:
    """Repair a cluster candidate given its sorted unit projections ``ys``.

    ``loc`` carries the member labels aligned with ``ys``.  Returns the kept
    labels (unsorted).
    """
    n = ctx.n
    R2h = 0.5 * ctx.R * ctx.R
    slack = K.SLACK * max(1.0, float(np.max(np.abs(ys)))) ** 2 if ys.size else 0.0
    pre = _var(ys, n)
    if pre <= R2h + slack:
        return loc
    m = ys.size
    med, c, _, _ = K.interval_stats(ys, 0, m, ctx.alpha)
    lo_e, hi_e = med - c, med + c
    s = np.where(ys < lo_e, (ys - lo_e) ** 2, np.where(ys > hi_e, (ys - hi_e) ** 2, 0.0))
    keep = s < 12.0 * ctx.alpha_n
    y_out, loc_out, s_out = ys[keep], loc[keep], s[keep]
    delta_rd, cap = rand_drop_delta(ctx.d, ctx.delta, ctx.c_fix)
    it = 0
    capped = False
    while _var(y_out, n) > R2h + slack:
        if it >= cap:
            capped = True
            ctx.warnings.append("repair loop cap reached; returning current set")
            break
        if not s_out.size or s_out.max() <= 0.0:
            capped = True
            ctx.warnings.append("repair stalled: all remaining scores are zero")
            break
        rng = node_rng(ctx.seed, rng_key + (it,))
        idx = rand_drop(np.arange(y_out.size), s_out, delta_rd, rng)
        y_out, loc_out, s_out = y_out[idx], loc_out[idx], s_out[idx]
        it += 1
    if ctx.trace is not None:
        ctx.trace.fixes.append(
            {
                "m": m,
                "pre_var": pre,
                "post_var": _var(y_out, n),
                "bound": R2h,
                "iterations": it,
                "capped": capped,
                "kept": int(y_out.size),
            }
        )
    return loc_out


def fixing(ds: Dataset, sub, v, params: Params, path: Sequence[int] = (), alpha: Optional[float] = None, delta: Optional[float] = None, trace: Optional[Trace] = None) -> np.ndarray:
    """Shed far-out points of ``sub`` along ``v`` until the variance is at most R^2|v|^2/2."""
    sub = np.asarray(sub, dtype=np.int64)
    ctx = _make_ctx(ds, params, params.alpha if alpha is None else alpha, params.delta if delta is None else delta, trace)
    if sub.size == 0:
        return sub
    p1d = project_1d(ds, sub, v)
    ys = p1d.values / p1d.v_norm
    out = _fix_sorted(ctx, ys, p1d.perm, tuple(path) + (0x66,))
    return np.sort(out)


def split_or_cluster(ds: Dataset, sub, v, params: Params, path: Sequence[int] = (), alpha: Optional[float] = None, delta: Optional[float] = None, trace: Optional[Trace] = None) -> SplitDecision:
    """One step of the bounded-covariance 1-D partition on the node ``sub``."""
    sub = np.asarray(sub, dtype=np.int64)
    ctx = _make_ctx(ds, params, params.alpha if alpha is None else alpha, params.delta if delta is None else delta, trace)
    p1d = project_1d(ds, sub, v)
    ys = np.ascontiguousarray(p1d.values / p1d.v_norm)
    m = ys.size
    ps, pss = K.prefix_moments(ys, ys[K.median_pos(0, m)])
    ok, fix = K.cluster_check(ys, ps, pss, 0, m, float(ctx.n), ctx.alpha, ctx.R)
    if ok:
        if fix:
            return Cluster(np.sort(_fix_sorted(ctx, ys, p1d.perm, tuple(path) + (0x66,))))
        return Cluster(sub.copy())
    kmax = int(math.floor(math.log2(2048.0 / (ctx.beta**2 * ctx.alpha))))
    base = math.sqrt(2048.0 / (ctx.beta**2 * ctx.alpha))
    med = ys[K.median_pos(0, m)]
    tail_log = []
    for k in range(kmax + 1):
        for sgn in (1.0, -1.0):
            tau0 = med + sgn * base / 2.0**k
            f, ts, r, nl, nr, bnd = K.split_or_tail_bound(ys, 0, m, tau0, ctx.gamma, ctx.beta)
            if f:
                left = np.sort(p1d.perm[: int(nl)])
                right = np.sort(p1d.perm[m - int(nr) :])
                return Split(tau=float(ts) * p1d.v_norm, r=float(r), left=left, right=right)
            tail_log.append((k, sgn, float(bnd)))
    raise LdmeError(f"internal contradiction: no split in the threshold sweep and the cluster check failed; tail bounds {tail_log}")


def _one_d(ctx: _Ctx, y: np.ndarray, loc: np.ndarray, key: Tuple[int, ...]) -> List[np.ndarray]:
    """Children (subsets of ``loc``) of one node along unit projections ``y``."""
    order = np.argsort(y, kind="stable")
    ys = np.ascontiguousarray(y[order])
    record = ctx.trace is not None
    leaves, splits, tails, err = K.bc_partition_windows(ys, float(ctx.n), ctx.alpha, ctx.beta, ctx.gamma, ctx.R, record)
    if err:
        raise LdmeError("internal contradiction: no split in the threshold sweep and the cluster check failed")
    if record:
        for row in splits:
            lo, hi, tau, r, nl, nr = row
            ctx.trace.splits.append({"m": int(hi - lo), "tau": tau, "r": r, "n_left": int(nl), "n_right": int(nr), "gamma": ctx.gamma, "beta": ctx.beta})
        for row in tails:
            lo, hi, tau0, tmed, bnd, emp = row
            ctx.trace.tails.append({"m": int(hi - lo), "tau0": tau0, "tau_med": tmed, "bound": bnd, "empirical": emp})
    sorted_loc = loc[order]
    out: List[np.ndarray] = []
    for li, (lo, hi, fix) in enumerate(leaves):
        members = sorted_loc[lo:hi]
        if fix:
            members = _fix_sorted(ctx, ys[lo:hi], members, key + (li,))
        if members.size:
            out.append(np.sort(members))
    return out


def one_d_partition(ds: Dataset, sub, v, params: Params, path: Sequence[int] = (), alpha: Optional[float] = None, delta: Optional[float] = None, trace: Optional[Trace] = None) -> List[np.ndarray]:
    """Children of ``sub`` each with directional variance at most R^2|v|^2/2."""
    sub = np.asarray(sub, dtype=np.int64)
    ctx = _make_ctx(ds, params, params.alpha if alpha is None else alpha, params.delta if delta is None else delta, trace)
    v = np.asarray(v, dtype=np.float64)
    nv = float(np.linalg.norm(v))
    if not nv > 0:
        raise LdmeError("degenerate direction: zero projection vector")
    y = ds.points[sub] @ (v / nv)
    return _one_d(ctx, y, sub, tuple(path))




# ---------------------------------------------------------------------------
# node refinement
# ---------------------------------------------------------------------------


def _partition_rows(ctx: _Ctx, rows: np.ndarray, path: Tuple[int, ...]) -> List[np.ndarray]:
    ds = ctx.ds
    if rows.size <= 1:
        if ctx.trace is not None:
            ctx.trace.partitions.append((int(rows.size), [int(rows.size)]))
        return [rows]
    X = ds.points[rows]
    Xc = X - X.mean(axis=0)
    thr = ctx.R * ctx.R / 8.0
    if ctx.trace is None and float(np.einsum("ij,ij->", Xc, Xc)) / ctx.n <= thr * (1.0 - 1e-9):
        # Every unit direction has variance at most the trace, so each 1-D step
        # returns the node unchanged whatever the sketch is.
        return [rows]
    rng = node_rng(ctx.seed, path)
    V = sketch_directions(Xc, power_exponent(ctx.d), ctx.n_dir, rng)
    P = np.ascontiguousarray(Xc @ V.T)
    if ctx.trace is None:
        # Directions before j0 leave the node untouched, so start there.  A
        # column whose total variance is below the threshold passes trivially
        # (any subset has a smaller sum of squared deviations).
        colvar = np.einsum("ij,ij->j", P, P) / ctx.n
        cols = np.flatnonzero(colvar > thr * (1.0 - 1e-9))
        j0 = K.bc_first_active_direction(P, cols, float(ctx.n), ctx.alpha, ctx.R)
    else:
        j0 = 0
        ctx.trace.directions.append({"rows": rows, "V": V, "R": ctx.R, "n_div": ctx.n})
    current = [np.arange(rows.size)]
    for j in range(j0, ctx.n_dir):
        if not np.any(V[j]):
            continue
        nxt: List[np.ndarray] = []
        for ci, loc in enumerate(current):
            nxt.extend(_one_d(ctx, P[loc, j], loc, path + (0x7F, j, ci)))
        current = nxt
    kids = [rows[c] for c in current]
    if ctx.trace is not None:
        ctx.trace.partitions.append((int(rows.size), [int(k.size) for k in kids]))
        ctx.trace.directions[-1]["kids"] = kids
    return kids


def _partition_ctx(ds: Dataset, params: Params, alpha: float, delta: float, trace=None, n_div=None, alpha_n=None) -> _Ctx:
    n_dir = num_directions(ds.d, delta, params.c_dir)
    return _make_ctx(ds, params, alpha, delta / (2.0 * n_dir), trace, n_div=n_div, n_dir=n_dir, alpha_n=alpha_n)


def partition(
    ds: Dataset,
    sub,
    params: Params,
    path: Sequence[int] = (),
    alpha: Optional[float] = None,
    delta: Optional[float] = None,
    trace: Optional[Trace] = None,
) -> List[np.ndarray]:
    """Refine ``sub`` along N_dir sketched directions of its covariance power.

    The sketch width follows ``delta``; each 1-D step gets ``delta / (2 N_dir)``.
    """
    dl = params.delta if delta is None else delta
    ctx = _partition_ctx(ds, params, params.alpha if alpha is None else alpha, dl, trace)
    return _partition_rows(ctx, np.asarray(sub, dtype=np.int64), tuple(path))


# ---------------------------------------------------------------------------
# outer loops
# ---------------------------------------------------------------------------


def naive_cluster_plus(ds: Dataset, delta: float, alpha: float = 0.1, seed: int = 0, path: Sequence[int] = (), c_naive: float = 8.0, sigma: float = 1.0) -> List[np.ndarray]:
    """Gap clustering along ceil(c_naive ln(n/delta)) random directions."""
    rng = node_rng(seed, (0x6E70,) + tuple(path))
    return gap_components(ds.points, naive_dirs(ds.n, delta, c_naive), naive_threshold(alpha, ds.n, sigma), rng)


def bounded_diameter_tree(
    ds: Dataset,
    comp: np.ndarray,
    params: Params,
    alpha: float,
    delta: float,
    path: Sequence[int] = (),
    stats: Optional[List[LayerStat]] = None,
    trace: Optional[Trace] = None,
    warnings: Optional[List[str]] = None,
) -> List[np.ndarray]:
    """Depth-D tree on one component; returns the leaves of size >= alpha n / 2.

    Inside the tree the component plays the role of the whole dataset: the
    covariance divisor is the component size and ``alpha`` is the
    component-level inlier fraction.  The size cut uses the global alpha n / 2.
    """
    comp = np.asarray(comp, dtype=np.int64)
    ni = comp.size
    D, capped = params.depth(ds.d)
    if capped and warnings is not None:
        msg = f"tree depth capped at {D} layers"
        if msg not in warnings:
            warnings.append(msg)
    part_delta = delta / (float(ni) ** (1.0 + params.beta) * D)
    ctx = _partition_ctx(ds, params, alpha, part_delta, trace, n_div=ni, alpha_n=params.alpha * ds.n)
    min_size = params.alpha * ds.n / 2.0

    def part(rows, p):
        return _partition_rows(ctx, rows, p)

    leaves = run_tree(comp, tuple(path), D, min_size, params.beta, part, stats)
    if warnings is not None:
        for w in ctx.warnings:
            if w not in warnings:
                warnings.append(w)
    return leaves


def _jl_matrix(d: int, c: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.integers(0, 2, size=(d, c)).astype(np.float64) * 2.0 - 1.0) / math.sqrt(c)


def _greedy_cover(H: np.ndarray, alive: List[int], radius: float) -> List[int]:
    """Maximal subset (in list order) with pairwise sketched distance >= radius."""
    kept: List[int] = []
    for i in alive:
        if kept:
            dist = np.sqrt(np.sum((H[kept] - H[i]) ** 2, axis=1))
            if np.any(dist < radius):
                continue
        kept.append(i)
    return kept


def iterate_post_process(
    ds: Dataset,
    hyps,
    params: Params,
    Delta: Optional[float] = None,
    delta: Optional[float] = None,
    path: Sequence[int] = (),
    alpha: Optional[float] = None,
) -> np.ndarray:
    """Thin a hypothesis list to fewer than 4 ceil(1/alpha) entries.

    A greedy 5 Delta cover (in a random low-dimensional embedding) is taken;
    while it is too long, members of its first 4k entries that are the
    nearest neighbor of fewer than alpha n / 2 points are discarded.
    """
    L = np.atleast_2d(np.asarray(hyps, dtype=np.float64))
    if L.shape[0] == 0:
        return L.reshape(0, ds.d)
    a = params.alpha if alpha is None else alpha
    Delta = params.postprocess_radius() if Delta is None else float(Delta)
    dl = params.delta if delta is None else delta
    c = max(16, int(math.ceil(8.0 * math.log(ds.d / dl))))
    rng = node_rng(params.seed, (0x7070,) + tuple(path))
    G = _jl_matrix(ds.d, c, rng)
    H = L @ G
    k = int(math.ceil(1.0 / a))
    alive = list(range(L.shape[0]))
    cover = _greedy_cover(H, alive, 5.0 * Delta)
    XG = None
    while len(cover) >= 4 * k:
        if XG is None:
            XG = np.ascontiguousarray(ds.points @ G)
        head = cover[: 4 * k]
        nn = K.nearest_rows(XG, np.ascontiguousarray(H[head]))
        counts = np.bincount(nn, minlength=len(head))
        prune = {head[i] for i in range(len(head)) if counts[i] < a * ds.n / 2.0}
        if not prune:
            raise LdmeError("post-processing made no progress; the list violates the model assumptions")
        alive = [i for i in alive if i not in prune]
        cover = _greedy_cover(H, alive, 5.0 * Delta)
    return L[cover]


def fast_multifilter(
    ds: Dataset, params: Params, trace: Optional[Trace] = None, Delta: Optional[float] = None
) -> MultifilterResult:
    """List-decodable mean estimation for inliers with bounded covariance.

    Runs ceil(2 ln(2/delta)) independent repetitions of gap clustering plus a
    bounded-diameter tree per component, thins each run's list, and thins the
    union once more.  ``Delta`` is the thinning radius scale; it defaults to
    ``params.postprocess_radius()``.
    """
    warn: List[str] = []
    n, d = ds.n, ds.d
    # The analyzed range only shapes the tree's constants; size cuts and
    # thinning keep the caller's alpha, since raising it above the true inlier
    # fraction would discard the inlier component.
    alpha = params.alpha
    _clamp_alpha(alpha, d, warn)
    n_runs = max(1, int(math.ceil(2.0 * math.log(2.0 / params.delta))))
    d_outer = 0.5
    Delta = params.postprocess_radius() if Delta is None else float(Delta)
    alpha_n = alpha * n
    stats: List[LayerStat] = []
    pooled: List[np.ndarray] = []
    all_leaves: List[np.ndarray] = []
    for run in range(n_runs):
        comps = naive_cluster_plus(ds, d_outer / 3.0, alpha, params.seed, (run,), params.c_naive, params.sigma)
        run_hyps: List[np.ndarray] = []
        for ci, comp in enumerate(comps):
            if comp.size < alpha_n / 2.0:
                continue
            a_i = _clamp_alpha(alpha * n / comp.size, d, [])
            leaves = bounded_diameter_tree(ds, comp, params, a_i, d_outer / 3.0, (2, run, ci), stats, trace, warn)
            all_leaves.extend(leaves)
            run_hyps.extend(ds.points[l].mean(axis=0) for l in leaves)
        if run_hyps:
            pooled.append(iterate_post_process(ds, np.array(run_hyps), params, Delta, d_outer / 3.0, (run,)))
    if not pooled:
        raise LdmeError("no surviving hypotheses")
    final = iterate_post_process(ds, np.vstack(pooled), params, Delta, params.delta / 2.0, (n_runs,))
    if final.shape[0] == 0:
        raise LdmeError("no surviving hypotheses")
    return MultifilterResult(final, stats, warn, all_leaves)


def supergeometric_sum(A: float, beta: float, K_terms: int) -> float:
    """sum_{j=0}^{K} A^(1/(1+beta)^j)."""
    j = np.arange(K_terms + 1, dtype=np.float64)
    return float(np.sum(A ** (1.0 / (1.0 + beta) ** j)))


def supergeometric_max_terms(A: float, beta: float) -> int:
    """Largest K with A^(1/(1+beta)^K) > sqrt(2), the range where
    ``supergeometric_sum(A, beta, K) <= 4 A / beta`` is guaranteed."""
    if not A > math.sqrt(2.0):
        raise LdmeError(f"need A > sqrt(2), got {A}")
    K = int(math.floor(math.log(math.log(A) / math.log(math.sqrt(2.0))) / math.log1p(beta)))
    while K > 0 and not A ** (1.0 / (1.0 + beta) ** K) > math.sqrt(2.0):
        K -= 1
    return K

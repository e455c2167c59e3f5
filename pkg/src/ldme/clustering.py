"""Mixture-model clustering from a list of candidate means.

Every reduction maps each point to its nearest candidate in a random
low-dimensional embedding and then groups candidates that are close to each
other.  The robust variants first discard candidates that attract too few
points; the bounded-covariance variant works in the span of the candidates and
labels points by membership in small balls around the surviving candidates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels as K
from .core import Dataset, LdmeError, Params, node_rng

logger = logging.getLogger(__name__)

__all__ = [
    "UNLABELED",
    "JLEmbed",
    "Labeling",
    "SpanProjector",
    "jl_columns",
    "make_jl",
    "nearest_hypothesis_map",
    "relation_classes",
    "cluster_uniform_gmm",
    "cluster_robust_gmm",
    "cluster_robust_bfmm",
    "cluster_robust_bcmm",
    "match_runs",
    "merge_runs",
    "default_delta",
    "cluster_with_holdout",
    "MODELS",
]

UNLABELED = -1
MODELS = ("uniform-gmm", "robust-gmm", "bfmm", "bcmm")


@dataclass(frozen=True)
class JLEmbed:
    """Random sign matrix with entries +-1/sqrt(c), applied as X @ G."""

    G: np.ndarray

    @property
    def c(self) -> int:
        return self.G.shape[1]

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(np.atleast_2d(X) @ self.G)


def jl_columns(n: int, delta: float) -> int:
    return max(16, int(math.ceil(8.0 * math.log(max(n, 2) / delta))))


def make_jl(d: int, n: int, delta: float, rng: np.random.Generator) -> JLEmbed:
    c = jl_columns(n, delta)
    G = (rng.integers(0, 2, size=(d, c)).astype(np.float64) * 2.0 - 1.0) / math.sqrt(c)
    return JLEmbed(G)


@dataclass
class Labeling:
    labels: np.ndarray
    transitive: bool = True
    kept: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def n_labels(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size and self.labels.max() >= 0 else 0


def _as_list(hyps, d: int) -> np.ndarray:
    L = np.asarray(hyps, dtype=np.float64)
    if L.size == 0:
        return L.reshape(0, d)
    return np.atleast_2d(L)


def nearest_hypothesis_map(ds: Dataset, hyps, G: JLEmbed) -> np.ndarray:
    """Index of the candidate minimizing the embedded distance, ties to the lowest index."""
    L = _as_list(hyps, ds.d)
    if L.shape[0] == 0:
        raise LdmeError("nearest_hypothesis_map needs a nonempty list")
    return K.nearest_rows(G.apply(ds.points), G.apply(L))


def relation_classes(H: np.ndarray, members: Sequence[int], threshold: float) -> Tuple[Dict[int, int], bool]:
    """Classes of the relation ||H_a - H_b|| <= threshold restricted to ``members``.

    Returns (class id per member, transitive).  Classes are the connected
    components of the relation graph, numbered by their smallest member; the
    flag reports whether every component is a clique, i.e. whether the
    relation was already an equivalence.
    """
    members = sorted(int(m) for m in members)
    if not members:
        return {}, True
    P = H[members]
    D = np.sqrt(np.maximum(np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=2), 0.0))
    adj = D <= threshold
    q = len(members)
    comp = -np.ones(q, dtype=np.int64)
    nxt = 0
    for s in range(q):
        if comp[s] >= 0:
            continue
        stack = [s]
        comp[s] = nxt
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adj[u] & (comp < 0)):
                comp[v] = nxt
                stack.append(int(v))
        nxt += 1
    transitive = all(bool(np.all(adj[np.ix_(comp == c, comp == c)])) for c in range(nxt))
    return {members[i]: int(comp[i]) for i in range(q)}, transitive


def _dense(labels: np.ndarray) -> np.ndarray:
    """Renumber nonnegative labels 0, 1, ... in order of first appearance."""
    out = np.full(labels.size, UNLABELED, dtype=np.int64)
    seen: Dict[int, int] = {}
    for i, l in enumerate(labels.tolist()):
        if l < 0:
            continue
        if l not in seen:
            seen[l] = len(seen)
        out[i] = seen[l]
    return out


def _label_by_map(m: np.ndarray, cls: Dict[int, int]) -> np.ndarray:
    lut = np.full(int(m.max()) + 1 if m.size else 0, UNLABELED, dtype=np.int64)
    for h, c in cls.items():
        if h < lut.size:
            lut[h] = c
    return _dense(lut[m]) if m.size else np.empty(0, dtype=np.int64)


def _seed_jl(ds: Dataset, params: Params, tag: int) -> JLEmbed:
    return make_jl(ds.d, ds.n, params.delta, node_rng(params.seed, (0x636C, tag)))


def cluster_uniform_gmm(ds: Dataset, hyps, Delta: float, params: Optional[Params] = None) -> Labeling:
    """Label points by classes of their nearest candidates under the 18 Delta relation."""
    params = Params() if params is None else params
    L = _as_list(hyps, ds.d)
    if L.shape[0] == 0:
        return Labeling(np.full(ds.n, UNLABELED, dtype=np.int64), True, info={"reason": "empty list"})
    G = _seed_jl(ds, params, 1)
    m = K.nearest_rows(G.apply(ds.points), G.apply(L))
    used = np.unique(m)
    cls, transitive = relation_classes(G.apply(L), used, 18.0 * Delta)
    if not transitive:
        logger.warning("candidate relation is not transitive; labeling by its transitive closure")
    return Labeling(_label_by_map(m, cls), transitive, used, {"map": m})


def _robust(ds: Dataset, hyps, Delta: float, params: Params, ball: float, relation: float, tag: int) -> Labeling:
    L = _as_list(hyps, ds.d)
    if L.shape[0] == 0:
        return Labeling(np.full(ds.n, UNLABELED, dtype=np.int64), True, info={"reason": "empty list"})
    G = _seed_jl(ds, params, tag)
    H = G.apply(L)
    m = K.nearest_rows(G.apply(ds.points), H)
    counts = np.bincount(m, minlength=L.shape[0]).astype(np.float64)
    D = np.sqrt(np.sum((H[:, None, :] - H[None, :, :]) ** 2, axis=2))
    support = (D <= ball * Delta) @ counts
    kept = np.flatnonzero(support >= 0.9 * params.alpha * ds.n)
    used = np.intersect1d(kept, np.unique(m))
    cls, transitive = relation_classes(H, used, relation * Delta)
    if not transitive:
        logger.warning("candidate relation is not transitive; labeling by its transitive closure")
    return Labeling(_label_by_map(m, cls), transitive, kept, {"map": m, "support": support})


def cluster_robust_gmm(ds: Dataset, hyps, Delta: float, params: Optional[Params] = None) -> Labeling:
    """Drop candidates whose 16 Delta neighborhood attracts fewer than 0.9 alpha n
    points; points mapped to dropped candidates stay unlabeled."""
    return _robust(ds, hyps, Delta, Params() if params is None else params, 16.0, 55.0, 2)


def cluster_robust_bfmm(ds: Dataset, hyps, Delta: float, params: Optional[Params] = None) -> Labeling:
    """Same reduction for heavy-tailed components, with 15 Delta neighborhoods.

    Requires Delta >= 2 sqrt(1/alpha).
    """
    params = Params() if params is None else params
    if Delta < 2.0 * math.sqrt(1.0 / params.alpha):
        raise LdmeError(f"Delta={Delta:.4g} below 2 sqrt(1/alpha)={2.0 * math.sqrt(1.0 / params.alpha):.4g}")
    return _robust(ds, hyps, Delta, params, 15.0, 55.0, 3)


class SpanProjector:
    """Orthogonal projection onto the span of the candidate means.

    Duplicates are removed first; the Gram system is solved with a small ridge
    (1e-9 times the mean diagonal) so near-dependent candidates never make it
    singular.
    """

    def __init__(self, hyps, rel_tol: float = 1e-8):
        L = np.atleast_2d(np.asarray(hyps, dtype=np.float64))
        keep: List[int] = []
        for i in range(L.shape[0]):
            nrm = np.linalg.norm(L[i])
            if nrm == 0.0:
                continue  # the zero vector spans nothing
            scale = max(nrm, 1.0)
            if all(np.linalg.norm(L[i] - L[j]) > rel_tol * scale for j in keep):
                keep.append(i)
        self.L = L[keep].reshape(len(keep), L.shape[1])
        A = self.L @ self.L.T
        lam = 1e-9 * float(np.trace(A)) / max(A.shape[0], 1)
        self._chol = np.linalg.cholesky(A + lam * np.eye(A.shape[0])) if keep else None
        self.rank = int(np.linalg.matrix_rank(self.L)) if keep else 0

    def _solve(self, B: np.ndarray) -> np.ndarray:
        if self._chol is None:
            return np.zeros((0,) + B.shape[1:])
        y = np.linalg.solve(self._chol, B)
        return np.linalg.solve(self._chol.T, y)

    def apply(self, X) -> np.ndarray:
        """P x for a vector or each row of a matrix."""
        X = np.asarray(X, dtype=np.float64)
        one = X.ndim == 1
        Xr = np.atleast_2d(X)
        out = (self._solve(self.L @ Xr.T)).T @ self.L
        return out[0] if one else out

    def matrix_times(self, B: np.ndarray) -> np.ndarray:
        """P @ B for a d x c matrix B without forming P."""
        return self.L.T @ self._solve(self.L @ B)


def cluster_robust_bcmm(ds: Dataset, hyps, Delta: float, params: Optional[Params] = None) -> Labeling:
    """Cluster in the span of the candidates.

    Each candidate owns the points whose embedded projection lies within
    2.5 Delta of it; candidates owning fewer than alpha n / 2 points are
    dropped, the rest are grouped at 20 Delta, and points take the class of an
    owning candidate (the nearest one if several own it).
    """
    params = Params() if params is None else params
    L = _as_list(hyps, ds.d)
    if L.shape[0] == 0:
        return Labeling(np.full(ds.n, UNLABELED, dtype=np.int64), True, info={"reason": "empty list"})
    G = _seed_jl(ds, params, 4)
    proj = SpanProjector(L)
    PG = proj.matrix_times(G.G)
    Xt = np.ascontiguousarray(ds.points @ PG)
    Ht = G.apply(L)
    D2 = np.sum(Xt * Xt, axis=1)[:, None] - 2.0 * Xt @ Ht.T + np.sum(Ht * Ht, axis=1)[None, :]
    inside = D2 <= (2.5 * Delta) ** 2
    sizes = inside.sum(axis=0)
    kept = np.flatnonzero(sizes >= params.alpha * ds.n / 2.0)
    cls, transitive = relation_classes(Ht, kept, 20.0 * Delta)
    if not transitive:
        logger.warning("candidate relation is not transitive; labeling by its transitive closure")
    labels = np.full(ds.n, UNLABELED, dtype=np.int64)
    conflicts = 0
    if kept.size:
        Dk = np.where(inside[:, kept], D2[:, kept], np.inf)
        best = np.argmin(Dk, axis=1)
        has = np.isfinite(Dk[np.arange(ds.n), best])
        cls_arr = np.array([cls[int(h)] for h in kept])
        labels[has] = cls_arr[best[has]]
        owners = inside[:, kept]
        per_class = np.stack([owners[:, cls_arr == c].any(axis=1) for c in np.unique(cls_arr)], axis=1)
        conflicts = int(np.sum(per_class.sum(axis=1) > 1))
    return Labeling(_dense(labels), transitive, kept, {"sizes": sizes, "conflicts": conflicts, "rank": proj.rank})


def match_runs(labels_a, labels_b) -> Dict[int, int]:
    """Greedy maximum-overlap matching from labels of ``b`` to labels of ``a``.

    Pairs are taken in decreasing order of overlap (ties by label ids) and
    accepted when both are still free and the overlap is at least half of the
    smaller cluster.  Unlabeled entries are ignored.
    """
    a = np.asarray(labels_a, dtype=np.int64)
    b = np.asarray(labels_b, dtype=np.int64)
    if a.shape != b.shape:
        raise LdmeError("labelings must cover the same index set")
    ok = (a >= 0) & (b >= 0)
    if not np.any(ok):
        return {}
    ka, kb = int(a[ok].max()) + 1, int(b[ok].max()) + 1
    C = np.zeros((kb, ka), dtype=np.int64)
    np.add.at(C, (b[ok], a[ok]), 1)
    size_a = np.bincount(a[a >= 0], minlength=ka)
    size_b = np.bincount(b[b >= 0], minlength=kb)
    pairs = sorted(((int(C[j, i]), j, i) for j in range(kb) for i in range(ka) if C[j, i] > 0), key=lambda t: (-t[0], t[1], t[2]))
    out: Dict[int, int] = {}
    used_a: set = set()
    for ov, j, i in pairs:
        if j in out or i in used_a:
            continue
        if 2 * ov >= min(size_a[i], size_b[j]):
            out[j] = i
            used_a.add(i)
    return out


def merge_runs(labels_a: np.ndarray, labels_b: np.ndarray, on_a: np.ndarray, on_b: np.ndarray) -> np.ndarray:
    """Combine two partial labelings of the same n points.

    ``on_a`` / ``on_b`` mark which points each run labeled.  Labels of ``b``
    are translated through ``match_runs`` on the points both runs cover;
    unmatched ``b`` labels get fresh ids.  Points covered by ``a`` keep their
    ``a`` label.
    """
    both = on_a & on_b
    mp = match_runs(np.where(both, labels_a, UNLABELED), np.where(both, labels_b, UNLABELED))
    nxt = int(max(labels_a.max(initial=-1), -1)) + 1
    out = np.where(on_a, labels_a, UNLABELED).astype(np.int64)
    fresh: Dict[int, int] = {}
    for i in np.flatnonzero(on_b & ~on_a):
        lb = int(labels_b[i])
        if lb < 0:
            continue
        if lb in mp:
            out[i] = mp[lb]
        else:
            if lb not in fresh:
                fresh[lb] = nxt
                nxt += 1
            out[i] = fresh[lb]
    return _dense(out)


def default_delta(model: str, alpha: float) -> float:
    """Per-component list accuracy assumed by each reduction, in sigma units."""
    s = math.sqrt(1.0 / alpha)
    if model in ("uniform-gmm", "robust-gmm"):
        return s
    if model == "bfmm":
        return 2.0 * s
    if model == "bcmm":
        return 2.0 * s * max(math.log(1.0 / alpha), 1.0)
    raise LdmeError(f"unknown model {model!r}; expected one of {MODELS}")


# List-learner calibration for the clustering pipelines.  The estimator's
# default radius multiplier is sized for the worst-case tail certificates and
# merges components closer than about R; a smaller multiplier with a larger
# size-potential exponent resolves them (see the decisions ledger).  The cover
# scale only has to exceed the accuracy of a clean leaf mean.
LIST_C_R = 5.0
LIST_BETA = 0.5
LIST_DELTA = 1.0


def list_learner_params(params: Params) -> Params:
    return params.with_(c_R=LIST_C_R, beta=max(params.beta, LIST_BETA))


_DISPATCH = {
    "uniform-gmm": cluster_uniform_gmm,
    "robust-gmm": cluster_robust_gmm,
    "bfmm": cluster_robust_bfmm,
    "bcmm": cluster_robust_bcmm,
}


def cluster_with_holdout(
    ds: Dataset,
    model: str,
    params: Optional[Params] = None,
    Delta: Optional[float] = None,
    list_params: Optional[Params] = None,
    list_Delta: Optional[float] = None,
) -> Labeling:
    """Learn candidates on a held-out tenth, label the other nine tenths, twice.

    The two learning tenths are disjoint, so every point is labeled by a list
    that never saw it; the two runs are aligned with ``match_runs``.
    """
    from .multifilter import fast_multifilter

    params = Params() if params is None else params
    if model not in _DISPATCH:
        raise LdmeError(f"unknown model {model!r}; expected one of {MODELS}")
    Delta = default_delta(model, params.alpha) if Delta is None else float(Delta)
    lp = list_learner_params(params) if list_params is None else list_params
    lD = LIST_DELTA * params.sigma if list_Delta is None else float(list_Delta)
    n = ds.n
    perm = node_rng(params.seed, (0x686F,)).permutation(n)
    t = max(1, n // 10)
    parts = [np.sort(perm[:t]), np.sort(perm[t : 2 * t])]
    runs = []
    warns: List[str] = []
    transitive = True
    for r, learn in enumerate(parts):
        rest = np.setdiff1d(np.arange(n), learn)
        res = fast_multifilter(ds.subset(learn), lp.with_(seed=lp.seed + 1000 * r), Delta=lD)
        warns.extend(res.warnings)
        lab = _DISPATCH[model](ds.subset(rest), res.hypotheses, Delta, params.with_(seed=params.seed + 1000 * r))
        transitive = transitive and lab.transitive
        full = np.full(n, UNLABELED, dtype=np.int64)
        full[rest] = lab.labels
        on = np.zeros(n, dtype=bool)
        on[rest] = True
        runs.append((full, on, res.hypotheses.shape[0], learn))
    labels = merge_runs(runs[0][0], runs[1][0], runs[0][1], runs[1][1])
    info = {"list_sizes": [runs[0][2], runs[1][2]], "learn_sets": [runs[0][3], runs[1][3]], "Delta": Delta, "warnings": warns}
    return Labeling(labels, transitive, info=info)

"""Data model, weighted moments as implicit operators, sketches and 1-D projections.

Covariances here follow the *unnormalized* convention used throughout the
package: for a node ``T'`` of a dataset with ``n`` rows,

    M(T') = sum_{i in T'} (1/n) (X_i - mu)(X_i - mu)^T,   mu = mean of T',

so the divisor is always the global sample count and never the node size.
Nothing in this module ever forms a d x d matrix.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "LdmeError",
    "DegenerateError",
    "Dataset",
    "Params",
    "SketchSet",
    "Projected1D",
    "make_subset",
    "full_subset",
    "empirical_mean",
    "weighted_mean",
    "cov_apply",
    "power_apply",
    "power_exponent",
    "num_directions",
    "build_sketch",
    "trace_sq_estimate",
    "project_1d",
    "directional_variance",
    "op_norm_estimate",
    "node_rng",
    "threshold_slack",
    "load_dataset",
    "save_ldme1",
    "load_ldme1",
    "load_csv",
    "LDME1_MAGIC",
]

LDME1_MAGIC = b"LDME0001"
SLACK_REL = 1e-12


class LdmeError(ValueError):
    """Base error for contract violations raised by this package."""


class DegenerateError(LdmeError):
    """An operation received an empty node or a zero direction."""


# ---------------------------------------------------------------------------
# data model
# ---------------------------------------------------------------------------


class Dataset:
    """Immutable n x d float64 point cloud (one row per sample)."""

    __slots__ = ("_points",)

    def __init__(self, points) -> None:
        arr = np.array(points, dtype=np.float64, copy=True, order="C")
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise LdmeError(f"dataset must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise LdmeError(f"dataset needs n >= 1 and d >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise LdmeError("dataset contains NaN or Inf entries")
        arr.setflags(write=False)
        self._points = arr

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def n(self) -> int:
        return self._points.shape[0]

    @property
    def d(self) -> int:
        return self._points.shape[1]

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, d={self.d})"

    def subset(self, sub: np.ndarray) -> "Dataset":
        """A new dataset made of the rows in ``sub`` (used by holdout splits)."""
        return Dataset(self._points[make_subset(sub, self.n)])


def make_subset(indices, n: int) -> np.ndarray:
    """Validate ``indices`` as a node: strictly increasing int64 values in [0, n)."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size:
        if idx[0] < 0 or idx[-1] >= n:
            raise LdmeError("node indices out of range")
        if idx.size > 1 and not np.all(np.diff(idx) > 0):
            raise LdmeError("node indices must be strictly increasing")
    return idx


def full_subset(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64)


def power_exponent(d: int) -> int:
    """Integer exponent p = ceil(log2 d) used for covariance powers."""
    return int(math.ceil(math.log2(d))) if d > 1 else 0


def num_directions(d: int, delta: float, c_dir: float = 8.0) -> int:
    """Sketch width max(16, ceil(c_dir * ln(d / delta)))."""
    return max(16, int(math.ceil(c_dir * math.log(max(d, 1) / delta))))


@dataclass(frozen=True)
class Params:
    """User parameters plus the tunable constants behind every Theta-term.

    ``gamma`` and ``R`` are derived on demand unless set explicitly.  All
    derived quantities are exposed as methods so each algorithm can ask for the
    variant it needs (the Gaussian and bounded-covariance trees use different
    radius formulas).
    """

    alpha: float = 0.1
    beta: float = 0.25
    delta: float = 0.1
    seed: int = 0
    sigma: float = 1.0
    gamma: Optional[float] = None
    R: Optional[float] = None
    c_R: float = 10.0
    c_dir: float = 8.0
    c_depth: float = 2.0
    c_fix: float = 8.0
    c_k: float = 4.0
    c_C: float = 4.0
    c_pp: float = 4.0
    c_naive: float = 8.0
    max_depth: int = 40
    filter_const: float = 20.0
    op_norm_stop: float = 3.0
    k_budget: int = 200

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise LdmeError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (0.0 < self.beta <= 1.0):
            raise LdmeError(f"beta must lie in (0, 1], got {self.beta}")
        if not (0.0 < self.delta < 1.0):
            raise LdmeError(f"delta must lie in (0, 1), got {self.delta}")
        if self.sigma <= 0:
            raise LdmeError("sigma must be positive")

    def with_(self, **changes) -> "Params":
        return replace(self, **changes)

    # -- derived quantities ------------------------------------------------

    def gamma_value(self) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        return 8.0 * math.log(1.0 / self.alpha)

    def radius_bounded_cov(self, d: int, delta: Optional[float] = None) -> float:
        """Variance radius for the bounded-covariance split/cluster/fix steps.

        Largest of the two lower bounds: the size-potential term
        (1/beta) sqrt(gamma ln(1/(alpha beta))) and the failure-probability term
        sqrt(gamma ln(log d / delta)).
        """
        if self.R is not None:
            return float(self.R)
        g = self.gamma_value()
        dl = self.delta if delta is None else delta
        logd = max(math.log2(max(d, 2)), 1.0)
        t1 = math.sqrt(g * math.log(1.0 / (self.alpha * self.beta))) / self.beta
        t2 = math.sqrt(g * max(math.log(logd / dl), 0.0))
        return self.c_R * self.sigma * max(t1, t2)

    def quantile_C(self, d: int) -> float:
        """C = c_C * ceil(log2 d)^2 (at least c_C)."""
        return self.c_C * max(power_exponent(d), 1) ** 2

    def radius_gaussian(self, d: int) -> float:
        """Interval radius for the Gaussian tree: sqrt(log C) times the larger
        of log log(C/alpha) and log log(C d), divided by beta."""
        if self.R is not None:
            return float(self.R)
        C = self.quantile_C(d)
        ll_a = math.log2(max(math.log2(C / self.alpha), 2.0))
        ll_d = math.log2(max(math.log2(C * d), 2.0))
        return self.c_R * self.sigma * math.sqrt(math.log2(max(C, 2.0))) * max(ll_a, ll_d) / self.beta

    def depth(self, d: int) -> tuple[int, bool]:
        """Tree depth ceil(c_depth log2(d)^2), capped; second value flags the cap."""
        lg = math.log2(max(d, 2))
        D = max(1, int(math.ceil(self.c_depth * lg * lg)))
        if D > self.max_depth:
            return self.max_depth, True
        return D, False

    def n_dir(self, d: int, delta: Optional[float] = None) -> int:
        return num_directions(d, self.delta if delta is None else delta, self.c_dir)

    def postprocess_radius(self) -> float:
        """Default cover radius c_pp sqrt(1/alpha) ln(1/alpha) for list pruning."""
        return self.c_pp * self.sigma * math.sqrt(1.0 / self.alpha) * math.log(1.0 / self.alpha)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def _check_nonempty(sub: np.ndarray) -> None:
    if sub.size == 0:
        raise DegenerateError("degenerate node: empty subset")


def empirical_mean(ds: Dataset, sub: np.ndarray) -> np.ndarray:
    sub = np.asarray(sub, dtype=np.int64)
    _check_nonempty(sub)
    return ds.points[sub].mean(axis=0)


def weighted_mean(ds: Dataset, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    tot = w.sum()
    if tot <= 0:
        raise DegenerateError("degenerate node: zero total weight")
    return (w @ ds.points) / tot


def _centered(ds: Dataset, sub: np.ndarray, weights: Optional[np.ndarray]):
    """Rows of the node minus their (weighted) mean and the per-row weights."""
    X = ds.points[sub]
    if weights is None:
        mu = X.mean(axis=0)
        w = np.full(X.shape[0], 1.0 / ds.n)
    else:
        w = np.asarray(weights, dtype=np.float64)[sub]
        tot = w.sum()
        if tot <= 0:
            return np.zeros_like(X), w
        mu = (w @ X) / tot
    return X - mu, w


def _apply_centered(Xc: np.ndarray, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    # sum_i w_i (X_i - mu) <X_i - mu, x>, vectorized over the columns of x
    return Xc.T @ (w[:, None] * (Xc @ x)) if x.ndim == 2 else Xc.T @ (w * (Xc @ x))


def cov_apply(ds: Dataset, sub, x, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """M x for the unnormalized node covariance, in O(m d) per column of ``x``.

    With ``weights`` (length n) the operator is sum_i w_i (X_i - mu_w)(X_i - mu_w)^T
    restricted to ``sub``; without them every row weighs 1/n.  An empty node is
    the zero operator.
    """
    sub = np.asarray(sub, dtype=np.int64)
    x = np.asarray(x, dtype=np.float64)
    if sub.size == 0:
        return np.zeros_like(x)
    Xc, w = _centered(ds, sub, weights)
    return _apply_centered(Xc, w, x)


def power_apply(ds: Dataset, sub, x, p: int, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """M^p x by p repeated operator applications (p = 0 is the identity)."""
    if p < 0 or int(p) != p:
        raise LdmeError(f"power must be a nonnegative integer, got {p}")
    sub = np.asarray(sub, dtype=np.int64)
    y = np.array(x, dtype=np.float64, copy=True)
    if p == 0:
        return y
    if sub.size == 0:
        return np.zeros_like(y)
    Xc, w = _centered(ds, sub, weights)
    for _ in range(int(p)):
        y = _apply_centered(Xc, w, y)
    return y


def op_norm_estimate(
    ds: Dataset,
    sub,
    weights: Optional[np.ndarray] = None,
    iters: int = 64,
    tol: float = 1e-3,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Power-iteration estimate of the top eigenvalue of the node covariance."""
    sub = np.asarray(sub, dtype=np.int64)
    if sub.size == 0:
        return 0.0
    Xc, w = _centered(ds, sub, weights)
    rng = np.random.default_rng(0) if rng is None else rng
    x = rng.standard_normal(ds.d)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = _apply_centered(Xc, w, x)
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam


# ---------------------------------------------------------------------------
# sketches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SketchSet:
    """Random sign probes u_j (rows) and their images v_j = M^p u_j (rows)."""

    probes: np.ndarray
    images: np.ndarray
    power: int

    @property
    def n_dir(self) -> int:
        return self.probes.shape[0]


def node_rng(seed: int, path: Sequence[int] = ()) -> np.random.Generator:
    """Independent generator for a tree node, keyed on (root seed, node path)."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(int(t) for t in path))
    return np.random.default_rng(ss)


def build_sketch(
    ds: Dataset,
    sub,
    p: int,
    n_dir: int,
    rng: np.random.Generator,
    weights: Optional[np.ndarray] = None,
) -> SketchSet:
    if n_dir < 1:
        raise LdmeError("n_dir must be at least 1")
    U = rng.integers(0, 2, size=(n_dir, ds.d)).astype(np.float64) * 2.0 - 1.0
    V = power_apply(ds, sub, U.T, p, weights=weights).T
    return SketchSet(probes=U, images=np.ascontiguousarray(V), power=int(p))


def trace_sq_estimate(sk: SketchSet) -> float:
    """(1/N) sum_j ||v_j||^2, an unbiased estimate of Tr(M^{2p})."""
    return float(np.mean(np.einsum("ij,ij->i", sk.images, sk.images)))


# ---------------------------------------------------------------------------
# 1-D projections
# ---------------------------------------------------------------------------


def threshold_slack(scale: float) -> float:
    return SLACK_REL * max(float(scale), 1.0)


@dataclass(frozen=True)
class Projected1D:
    """Sorted projections Y_i = <v, X_i> of a node with prefix moments.

    Prefix sums are taken of ``values - shift`` (shift = the lower median) to
    keep the variance formula well conditioned.
    """

    values: np.ndarray
    perm: np.ndarray
    prefix_sum: np.ndarray
    prefix_sumsq: np.ndarray
    v_norm: float
    n_total: int
    shift: float = 0.0
    dim: int = 0

    @property
    def m(self) -> int:
        return self.values.size

    def median_rank(self, lo: int = 0, hi: Optional[int] = None) -> int:
        """Position of the lower median (rank ceil(m/2)) inside window [lo, hi)."""
        hi = self.m if hi is None else hi
        if hi <= lo:
            raise DegenerateError("degenerate node: empty window")
        return lo + (hi - lo + 1) // 2 - 1

    def median(self, lo: int = 0, hi: Optional[int] = None) -> float:
        return float(self.values[self.median_rank(lo, hi)])

    def count_le(self, t: float, lo: int = 0, hi: Optional[int] = None) -> int:
        hi = self.m if hi is None else hi
        return int(np.searchsorted(self.values[lo:hi], t, side="right"))

    def count_ge(self, t: float, lo: int = 0, hi: Optional[int] = None) -> int:
        hi = self.m if hi is None else hi
        return (hi - lo) - int(np.searchsorted(self.values[lo:hi], t, side="left"))

    def window(self, a: float, b: float) -> tuple[int, int]:
        """Index range [lo, hi) of values inside the closed interval [a, b]."""
        lo = int(np.searchsorted(self.values, a, side="left"))
        hi = int(np.searchsorted(self.values, b, side="right"))
        return lo, max(lo, hi)

    def quantile_window(self, frac: float) -> tuple[int, int]:
        """Middle ``frac`` quantiles: drop floor((1-frac) m / 2) values per side."""
        cut = int(math.floor((1.0 - frac) * self.m / 2.0))
        return cut, self.m - cut

    def indices(self, lo: int = 0, hi: Optional[int] = None) -> np.ndarray:
        hi = self.m if hi is None else hi
        return np.sort(self.perm[lo:hi])


def project_1d(ds: Dataset, sub, v) -> Projected1D:
    sub = np.asarray(sub, dtype=np.int64)
    v = np.asarray(v, dtype=np.float64)
    v_norm = float(np.linalg.norm(v))
    if not v_norm > 0.0 or not math.isfinite(v_norm):
        raise DegenerateError("degenerate direction: zero or non-finite projection vector")
    y = ds.points[sub] @ v
    order = np.argsort(y, kind="stable")
    vals = y[order]
    shift = float(vals[(vals.size + 1) // 2 - 1]) if vals.size else 0.0
    c = vals - shift
    ps = np.concatenate(([0.0], np.cumsum(c)))
    pss = np.concatenate(([0.0], np.cumsum(c * c)))
    return Projected1D(
        values=vals,
        perm=sub[order],
        prefix_sum=ps,
        prefix_sumsq=pss,
        v_norm=v_norm,
        n_total=ds.n,
        shift=shift,
        dim=ds.d,
    )


def directional_variance(p1d: Projected1D, window: tuple[int, int]) -> float:
    """(1/n) sum over the window of (Y_i - window mean)^2 via prefix moments."""
    lo, hi = window
    m = hi - lo
    if m <= 0:
        return 0.0
    s1 = p1d.prefix_sum[hi] - p1d.prefix_sum[lo]
    s2 = p1d.prefix_sumsq[hi] - p1d.prefix_sumsq[lo]
    return max(s2 - s1 * s1 / m, 0.0) / p1d.n_total


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def save_ldme1(path: Union[str, Path], X) -> None:
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise LdmeError("LDME1 stores 2-D arrays only")
    with open(path, "wb") as fh:
        fh.write(LDME1_MAGIC)
        fh.write(struct.pack("<QQ", X.shape[0], X.shape[1]))
        fh.write(X.tobytes(order="C"))


def load_ldme1(path: Union[str, Path]) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:8] != LDME1_MAGIC:
        raise LdmeError(f"{path}: bad magic, expected {LDME1_MAGIC!r}")
    if len(raw) < 24:
        raise LdmeError(f"{path}: truncated header")
    n, d = struct.unpack("<QQ", raw[8:24])
    need = 24 + 8 * n * d
    if len(raw) != need:
        raise LdmeError(f"{path}: expected {need} bytes for n={n}, d={d}, got {len(raw)}")
    X = np.frombuffer(raw, dtype="<f8", offset=24, count=n * d).reshape(n, d)
    return Dataset(X)


def load_csv(path: Union[str, Path]) -> Dataset:
    X = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return Dataset(X)


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Read LDME1 when the magic matches, otherwise parse as CSV."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == LDME1_MAGIC:
        return load_ldme1(path)
    return load_csv(path)

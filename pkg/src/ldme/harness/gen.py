"""Synthetic mixtures with planted means, labels and optional corruption."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..core import Dataset, LdmeError

MODELS = ("gaussian", "bounded-cov", "bounded-4th", "adversarial-mix")
ADVERSARIES = ("none", "far-clusters", "colluders", "uniform-noise")

# Shape of the symmetric power-law used for heavy-tailed components.
PARETO_SHAPE = 5.0

ADVERSARIAL = -1


@dataclass(frozen=True)
class GenSpec:
    model: str = "gaussian"
    k: int = 2
    d: int = 16
    n: int = 1000
    alpha: Optional[float] = None
    weights: Optional[Tuple[float, ...]] = None
    separation: Optional[float] = None
    sep_mult: float = 40.0
    Delta: Optional[float] = None
    eps: float = 0.0
    adversary: str = "none"
    n_fake: int = 1
    seed: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.weights is not None:
            out["weights"] = list(self.weights)
        return out


@dataclass
class Truth:
    labels: np.ndarray
    means: np.ndarray
    weights: np.ndarray
    fourth_moment_bound: Optional[float] = None
    fake_means: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def adversarial(self) -> np.ndarray:
        return self.labels == ADVERSARIAL


def heavy_tail_fourth_moment(shape: float = PARETO_SHAPE) -> float:
    """Bound C on E<v, X - mu>^4 over unit v for the heavy-tailed component.

    Coordinates are i.i.d. symmetric with unit variance and fourth moment
    m4 = (a-2)^2 / (a (a-4)); for a unit vector the fourth moment of the
    projection is sum v_i^4 m4 + 3 sum_{i != j} v_i^2 v_j^2 <= max(m4, 3).
    """
    if shape <= 4.0:
        raise LdmeError("the power-law shape must exceed 4 for a finite fourth moment")
    m4 = (shape - 2.0) ** 2 / (shape * (shape - 4.0))
    return max(m4, 3.0)


def _heavy_tail(rng: np.random.Generator, size: Tuple[int, int], shape: float = PARETO_SHAPE) -> np.ndarray:
    """Symmetric power law: sign * c * U^(-1/a), scaled to unit variance."""
    c = math.sqrt((shape - 2.0) / shape)
    u = rng.random(size)
    s = rng.integers(0, 2, size=size) * 2 - 1
    return s * c * (1.0 - u) ** (-1.0 / shape)


def _unit_ball(rng: np.random.Generator, m: int, d: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((m, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.random(m) ** (1.0 / d))[:, None]


def component_noise(model: str, rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    """Zero-mean noise with identity covariance (exactly, in expectation) for each model."""
    if model in ("gaussian", "adversarial-mix"):
        return rng.standard_normal((m, d))
    if model == "bounded-cov":
        return _unit_ball(rng, m, d, math.sqrt(d + 2.0))
    if model == "bounded-4th":
        return _heavy_tail(rng, (m, d))
    raise LdmeError(f"unknown model {model!r}; expected one of {MODELS}")


def _weights(spec: GenSpec) -> np.ndarray:
    if spec.k < 1:
        raise LdmeError("k must be at least 1")
    if spec.weights is not None:
        w = np.asarray(spec.weights, dtype=np.float64)
        if w.size != spec.k:
            raise LdmeError(f"weights has {w.size} entries, expected k={spec.k}")
        if abs(w.sum() - (1.0 - spec.eps)) > 1e-9:
            raise LdmeError(f"weights must sum to 1 - eps = {1.0 - spec.eps}, got {w.sum()}")
    else:
        w = np.full(spec.k, (1.0 - spec.eps) / spec.k)
    a = spec.alpha if spec.alpha is not None else float(w.min())
    if np.any(w < a - 1e-12):
        raise LdmeError(f"every weight must be at least alpha={a}")
    if spec.eps < 0 or spec.eps >= 1:
        raise LdmeError("eps must lie in [0, 1)")
    if spec.model != "gaussian" and spec.eps > a / 4.0 + 1e-12 and spec.adversary != "none":
        raise LdmeError(f"eps={spec.eps} exceeds alpha/4={a / 4.0} for a corrupted mixture")
    return w


def spec_alpha(spec: GenSpec) -> float:
    return spec.alpha if spec.alpha is not None else float(_weights(spec).min())


def separation_of(spec: GenSpec) -> float:
    """Pairwise distance between true means."""
    if spec.separation is not None:
        return float(spec.separation)
    from ..clustering import default_delta

    cmodel = {"gaussian": "uniform-gmm", "adversarial-mix": "robust-gmm", "bounded-4th": "bfmm", "bounded-cov": "bcmm"}[spec.model]
    Delta = spec.Delta if spec.Delta is not None else default_delta(cmodel, spec_alpha(spec))
    return spec.sep_mult * Delta


def _simplex_means(rng: np.random.Generator, k: int, d: int, sep: float) -> np.ndarray:
    """k points at pairwise distance exactly ``sep`` under a random rotation."""
    if k > d:
        raise LdmeError(f"k={k} means at equal pairwise distance need d >= k (d={d})")
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    base = np.zeros((k, d))
    base[np.arange(k), np.arange(k)] = sep / math.sqrt(2.0)
    base -= base.mean(axis=0)
    return base @ Q.T


def _adversary(spec: GenSpec, rng: np.random.Generator, m: int, means: np.ndarray, sep: float, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    d = spec.d
    if m == 0:
        return np.empty((0, d)), np.empty((0, d))
    kind = spec.adversary if spec.adversary != "none" else "far-clusters"
    center = means.mean(axis=0)
    if kind == "far-clusters":
        q = max(1, spec.n_fake)
        dirs = rng.standard_normal((q, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        fakes = center + 10.0 * max(sep, 1.0) * dirs
        pick = rng.integers(0, q, size=m)
        return fakes[pick] + 0.1 * rng.standard_normal((m, d)), fakes
    if kind == "colluders":
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        target = means[0] + 2.0 * math.sqrt(1.0 / alpha) * v
        return target + 0.1 * rng.standard_normal((m, d)), target[None, :]
    if kind == "uniform-noise":
        lo = means.min(axis=0) - sep
        hi = means.max(axis=0) + sep
        return lo + (hi - lo) * rng.random((m, d)), np.empty((0, d))
    raise LdmeError(f"unknown adversary {kind!r}; expected one of {ADVERSARIES}")


def gen_mixture(spec: GenSpec) -> Tuple[Dataset, Truth]:
    """Sample ``spec.n`` points; adversarial rows get label -1."""
    if spec.model not in MODELS:
        raise LdmeError(f"unknown model {spec.model!r}; expected one of {MODELS}")
    if spec.n < 1 or spec.d < 1:
        raise LdmeError("n and d must be positive")
    w = _weights(spec)
    alpha = spec_alpha(spec)
    rng = np.random.default_rng(spec.seed)
    sep = separation_of(spec)
    means = _simplex_means(rng, spec.k, spec.d, sep)
    probs = np.concatenate((w, [spec.eps]))
    probs = probs / probs.sum()
    labels = rng.choice(spec.k + 1, size=spec.n, p=probs)
    labels[labels == spec.k] = ADVERSARIAL
    X = np.empty((spec.n, spec.d))
    for i in range(spec.k):
        rows = np.flatnonzero(labels == i)
        X[rows] = means[i] + component_noise(spec.model, rng, rows.size, spec.d)
    adv = np.flatnonzero(labels == ADVERSARIAL)
    pts, fakes = _adversary(spec, rng, adv.size, means, sep, alpha)
    X[adv] = pts
    C = heavy_tail_fourth_moment() if spec.model == "bounded-4th" else None
    return Dataset(X), Truth(labels.astype(np.int64), means, w, C, fakes)

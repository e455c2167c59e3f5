"""Shared pieces of the two multifilter trees: sketched directions, the layered
tree driver and per-layer statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .core import Dataset, node_rng

logger = logging.getLogger(__name__)

# a node is (sorted global row indices, path tuple)
Node = Tuple[np.ndarray, Tuple[int, ...]]


def sketch_directions(Xc: np.ndarray, p: int, n_dir: int, rng: np.random.Generator) -> np.ndarray:
    """Unit directions along M^p u_j for random sign vectors u_j (rows of the result).

    ``Xc`` is the centered node.  Each image is renormalized after every
    multiplication: only directions matter to the partition steps, and this
    keeps large covariances from overflowing.  Rows whose image vanishes come
    back as zeros.
    """
    m, d = Xc.shape
    U = rng.integers(0, 2, size=(n_dir, d)).astype(np.float64) * 2.0 - 1.0
    V = U.T.copy()
    # With few dimensions relative to the probes, one Gram product (m d^2 work)
    # is cheaper than p rounds of two products of m x d by d x n_dir.
    gram = Xc.T @ Xc if p > 0 and d <= 2 * p * n_dir and d <= 2 * m else None
    for _ in range(p):
        V = gram @ V if gram is not None else Xc.T @ (Xc @ V)
        nrm = np.sqrt(np.einsum("ij,ij->j", V, V))
        nz = nrm > 0
        V[:, nz] /= nrm[nz]
    V = V.T
    nrm = np.sqrt(np.einsum("ij,ij->i", V, V))
    nz = nrm > 0
    V[nz] /= nrm[nz, None]
    return V


@dataclass
class LayerStat:
    depth: int
    nodes: int
    total_size: int
    max_size: int
    size_potential: float
    pruned: int

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "nodes": self.nodes,
            "total_size": self.total_size,
            "max_size": self.max_size,
            "size_potential": self.size_potential,
            "pruned": self.pruned,
        }


def run_tree(
    root: np.ndarray,
    root_path: Tuple[int, ...],
    depth: int,
    min_size: float,
    beta: float,
    partition_fn: Callable[[np.ndarray, Tuple[int, ...]], List[np.ndarray]],
    stats: List[LayerStat] | None = None,
    on_partition: Callable[[np.ndarray, List[np.ndarray]], None] | None = None,
) -> List[np.ndarray]:
    """Apply ``partition_fn`` to every node for ``depth`` layers.

    Nodes smaller than ``min_size`` are dropped after each layer.  Children
    are subsets of their parent, so a dropped node could only have produced
    children that would be dropped at the end as well; pruning early does not
    change the final list.  Children keep their index in the parent's output
    inside the path, which keeps per-node randomness independent of pruning.
    """
    layer: List[Node] = [(root, root_path)] if root.size >= min_size else []
    for ell in range(depth):
        nxt: List[Node] = []
        pruned = 0
        for rows, path in layer:
            kids = partition_fn(rows, path)
            if on_partition is not None:
                on_partition(rows, kids)
            for ci, kid in enumerate(kids):
                if kid.size >= min_size:
                    nxt.append((kid, path + (ci,)))
                else:
                    pruned += 1
        layer = nxt
        if stats is not None:
            sizes = np.array([r.size for r, _ in layer], dtype=np.float64)
            stats.append(
                LayerStat(
                    depth=ell + 1,
                    nodes=len(layer),
                    total_size=int(sizes.sum()),
                    max_size=int(sizes.max()) if sizes.size else 0,
                    size_potential=float(np.sum(sizes ** (1.0 + beta))),
                    pruned=pruned,
                )
            )
        if not layer:
            break
    return [rows for rows, _ in layer]


def gap_groups(y: np.ndarray, threshold: float) -> np.ndarray:
    """Group labels along one axis: cut wherever consecutive sorted values
    differ by more than ``threshold``."""
    order = np.argsort(y, kind="stable")
    ys = y[order]
    cuts = np.concatenate(([0], (np.diff(ys) > threshold).astype(np.int64)))
    lab_sorted = np.cumsum(cuts)
    lab = np.empty_like(lab_sorted)
    lab[order] = lab_sorted
    return lab


def gap_components(X: np.ndarray, n_dirs: int, threshold: float, rng: np.random.Generator) -> List[np.ndarray]:
    """Common refinement of gap cuts along ``n_dirs`` random unit directions.

    Returns sorted index arrays ordered by their smallest member.
    """
    n, d = X.shape
    G = rng.standard_normal((d, n_dirs))
    G /= np.linalg.norm(G, axis=0, keepdims=True)
    Y = X @ G
    labels = np.empty((n, n_dirs), dtype=np.int64)
    for j in range(n_dirs):
        labels[:, j] = gap_groups(Y[:, j], threshold)
    _, inv = np.unique(labels, axis=0, return_inverse=True)
    inv = inv.ravel()
    comps = [np.flatnonzero(inv == c) for c in range(inv.max() + 1)]
    comps.sort(key=lambda a: int(a[0]))
    return comps


def naive_dirs(n: int, delta: float, c_naive: float) -> int:
    return max(4, int(math.ceil(c_naive * math.log(n / delta))))


def naive_threshold(alpha: float, n: int, sigma: float) -> float:
    return sigma * (2.0 * math.sqrt(alpha * n) + 1.0)

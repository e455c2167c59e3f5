"""Hypothesis lists to labelings: embeddings, relations, the four reductions and holdout."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import ldme.clustering as CL
import ldme.multifilter as MF
from ldme.clustering import (
    MODELS,
    UNLABELED,
    SpanProjector,
    cluster_robust_bcmm,
    cluster_robust_bfmm,
    cluster_robust_gmm,
    cluster_uniform_gmm,
    cluster_with_holdout,
    default_delta,
    jl_columns,
    make_jl,
    match_runs,
    merge_runs,
    nearest_hypothesis_map,
    relation_classes,
)
from ldme.core import Dataset, LdmeError, Params
from ldme.harness.gen import GenSpec, gen_mixture, heavy_tail_fourth_moment
from ldme.harness.metrics import clustering_accuracy


def planted_gaussians(seed, k=3, d=16, per=300, sep=100.0):
    rng = np.random.default_rng(seed)
    means = np.eye(k, d) * sep
    lab = np.repeat(np.arange(k), per)
    return rng.standard_normal((lab.size, d)) + means[lab], lab, means


def assert_total(labels, n):
    assert labels.shape == (n,)
    assert labels.min() >= UNLABELED
    used = sorted(set(labels.tolist()) - {UNLABELED})
    assert used == list(range(len(used)))


# -- JL embedding and nearest map ---------------------------------------------


def test_jl_entries_and_width():
    G = make_jl(20, 1000, 0.1, np.random.default_rng(0))
    c = jl_columns(1000, 0.1)
    assert G.c == c == max(16, math.ceil(8 * math.log(1000 / 0.1)))
    assert set(np.unique(np.abs(G.G))) == {1 / math.sqrt(c)}


def test_jl_preserves_pair_distances():
    rng = np.random.default_rng(1)
    n, delta, d = 400, 0.1, 60
    X = rng.standard_normal((n, d))
    G = make_jl(d, n, delta, rng)
    i, j = rng.integers(0, n, 500), rng.integers(0, n, 500)
    keep = i != j
    orig = np.linalg.norm(X[i[keep]] - X[j[keep]], axis=1)
    emb = np.linalg.norm(G.apply(X[i[keep]]) - G.apply(X[j[keep]]), axis=1)
    bad = np.mean((emb > 1.5 * orig) | (emb < orig / 1.5))
    assert bad <= delta


def test_nearest_map_trivial_cases():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 5))
    G = make_jl(5, 30, 0.1, rng)
    assert set(nearest_hypothesis_map(Dataset(X), X[:1], G).tolist()) == {0}
    H = np.eye(5) * 50
    m = nearest_hypothesis_map(Dataset(H), H, G)
    assert m.tolist() == list(range(5))
    with pytest.raises(LdmeError):
        nearest_hypothesis_map(Dataset(X), np.empty((0, 5)), G)


def test_nearest_map_agrees_with_full_dimension_argmin():
    rng = np.random.default_rng(3)
    n, d, delta = 600, 40, 0.1
    H = rng.standard_normal((8, d)) * 6
    X = H[rng.integers(0, 8, n)] + rng.standard_normal((n, d))
    G = make_jl(d, n, delta, rng)
    m = nearest_hypothesis_map(Dataset(X), H, G)
    exact = np.argmin(((X[:, None, :] - H[None, :, :]) ** 2).sum(-1), axis=1)
    assert np.mean(m == exact) >= 1 - delta


# -- relation classes ----------------------------------------------------------


def test_relation_transitive_and_closure():
    H = np.array([[0.0], [1.0], [2.0], [10.0]])
    cls, tr = relation_classes(H, [0, 1, 2, 3], 1.5)
    assert not tr
    assert cls[0] == cls[1] == cls[2] != cls[3]
    cls, tr = relation_classes(H, [0, 1, 3], 1.5)
    assert tr and cls[0] == cls[1] != cls[3]
    assert relation_classes(H, [], 1.0) == ({}, True)


# -- uniform -------------------------------------------------------------------


def test_uniform_single_component():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 6))
    lab = cluster_uniform_gmm(Dataset(X), np.zeros((1, 6)), 3.0)
    assert set(lab.labels.tolist()) == {0}


def test_uniform_planted_three_components_exact():
    Delta = math.sqrt(3)
    X, truth, means = planted_gaussians(0, sep=40 * Delta)
    lab = cluster_uniform_gmm(Dataset(X), means, Delta)
    assert lab.transitive
    assert clustering_accuracy(lab.labels, truth) == 1.0


def test_uniform_fallback_to_transitive_closure():
    Delta = 1.0
    d = 12
    H = np.zeros((3, d))
    H[1, 0], H[2, 0] = 12 * Delta, 24 * Delta
    rng = np.random.default_rng(4)
    lab_true = np.repeat(np.arange(3), 100)
    X = H[lab_true] + 0.3 * rng.standard_normal((300, d))
    lab = cluster_uniform_gmm(Dataset(X), H, Delta)
    assert not lab.transitive
    assert_total(lab.labels, 300)
    assert set(lab.labels.tolist()) == {0}


def test_empty_list_leaves_everything_unlabeled():
    X = np.zeros((5, 2))
    for fn in (cluster_uniform_gmm, cluster_robust_gmm, cluster_robust_bcmm):
        assert set(fn(Dataset(X), np.empty((0, 2)), 5.0).labels.tolist()) == {UNLABELED}


# -- robust GMM ----------------------------------------------------------------


def test_robust_without_adversary_matches_uniform():
    Delta = math.sqrt(3)
    X, truth, means = planted_gaussians(1, sep=60 * Delta)
    params = Params(alpha=1 / 3)
    a = cluster_robust_gmm(Dataset(X), means, Delta, params).labels
    b = cluster_uniform_gmm(Dataset(X), means, Delta, params).labels
    assert clustering_accuracy(a, b) == 1.0 and clustering_accuracy(a, truth) == 1.0


def test_robust_far_adversary_is_unlabeled():
    alpha = 0.3
    Delta = math.sqrt(1 / alpha)
    X, truth, means = planted_gaussians(2, sep=60 * Delta)
    rng = np.random.default_rng(2)
    n_adv = int(alpha / 4 * X.shape[0])
    fake = np.full(X.shape[1], 5000.0)
    X = np.vstack([X, fake + 0.1 * rng.standard_normal((n_adv, X.shape[1]))])
    truth = np.concatenate([truth, np.full(n_adv, -1)])
    L = np.vstack([means, fake])
    lab = cluster_robust_gmm(Dataset(X), L, Delta, Params(alpha=alpha))
    assert_total(lab.labels, X.shape[0])
    adv = lab.labels[truth < 0]
    inl = lab.labels[truth >= 0]
    assert np.all(adv == UNLABELED) or not set(adv.tolist()) & set(inl.tolist())
    assert clustering_accuracy(lab.labels, truth) == 1.0


def test_robust_prunes_far_junk_hypotheses():
    alpha = 0.3
    Delta = math.sqrt(1 / alpha)
    for seed in range(20):
        X, truth, means = planted_gaussians(seed, sep=60 * Delta)
        rng = np.random.default_rng(seed)
        junk = rng.standard_normal((6, X.shape[1]))
        junk *= rng.uniform(30, 120, (6, 1)) * Delta / np.linalg.norm(junk, axis=1, keepdims=True)
        junk += means[rng.integers(0, 3, 6)]
        far = np.min(np.linalg.norm(junk[:, None, :] - means[None], axis=2), axis=1) > 25 * Delta
        L = np.vstack([means, junk])
        lab = cluster_robust_gmm(Dataset(X), L, Delta, Params(alpha=alpha, seed=seed))
        kept = set(lab.kept.tolist())
        assert not kept & {3 + i for i in np.flatnonzero(far)}


# -- BFMM ----------------------------------------------------------------------


def test_bfmm_requires_large_delta():
    with pytest.raises(LdmeError):
        cluster_robust_bfmm(Dataset(np.zeros((3, 2))), np.zeros((1, 2)), 1.0, Params(alpha=0.25))


def test_bfmm_on_gaussians_behaves_like_robust_gmm():
    alpha = 1 / 3
    Delta = 2 * math.sqrt(1 / alpha)
    X, truth, means = planted_gaussians(3, sep=60 * Delta)
    lab = cluster_robust_bfmm(Dataset(X), means, Delta, Params(alpha=alpha))
    ref = cluster_robust_gmm(Dataset(X), means, Delta, Params(alpha=alpha))
    assert clustering_accuracy(lab.labels, ref.labels) == 1.0


def test_bfmm_heavy_tails_with_clean_list():
    alpha = 0.3
    for seed in range(10):
        spec = GenSpec(model="bounded-4th", k=3, d=16, n=1500, alpha=alpha, weights=(0.3, 0.35, 0.35), sep_mult=80, seed=seed)
        ds, truth = gen_mixture(spec)
        Delta = default_delta("bfmm", alpha)
        lab = cluster_robust_bfmm(ds, truth.means, Delta, Params(alpha=alpha, seed=seed))
        assert clustering_accuracy(lab.labels, truth.labels) >= 1 - alpha


def test_pseudo_adversarial_fraction_within_markov_prediction():
    alpha = 0.3
    C = heavy_tail_fourth_moment()
    for seed in range(20):
        Delta = 3.0
        spec = GenSpec(model="bounded-4th", k=3, d=8, n=3000, alpha=alpha, weights=(0.3, 0.35, 0.35), separation=2 * Delta, seed=seed)
        ds, truth = gen_mixture(spec)
        X, L = ds.points, truth.means
        nearest = np.argmin(((X[:, None, :] - L[None]) ** 2).sum(-1), axis=1)
        frac = float(np.mean(nearest != truth.labels))
        assert frac <= 2 * C / Delta**4 * L.shape[0]


# -- BCMM ----------------------------------------------------------------------


@given(st.integers(1, 6), st.integers(2, 9), st.integers(0, 2**31 - 1), st.booleans())
def test_span_projector_is_an_orthogonal_projection(q, d, seed, dup):
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((q, d)) * rng.uniform(0.1, 100)
    if dup:
        L = np.vstack([L, L[:1]])
    P = SpanProjector(L)
    for h in L:
        assert np.linalg.norm(P.apply(h) - h) <= 1e-6 * max(np.linalg.norm(h), 1e-300)
    M = P.matrix_times(np.eye(d))
    assert np.allclose(M, M.T, atol=1e-8)
    for _ in range(5):
        x = rng.standard_normal(d)
        qf = x @ M @ x
        assert -1e-9 * (x @ x) <= qf <= (1 + 1e-9) * (x @ x)
        assert np.linalg.norm(P.apply(x)) <= (1 + 1e-9) * np.linalg.norm(x)
    assert P.rank == min(q, d)


def test_span_projector_zero_hypothesis_spans_nothing():
    P = SpanProjector(np.zeros((2, 3)))
    assert P.rank == 0 and np.all(P.apply(np.ones(3)) == 0)


def test_bcmm_single_component():
    rng = np.random.default_rng(0)
    d = 10
    for mu in (np.zeros(d), np.full(d, 7.0)):
        X = mu + rng.standard_normal((300, d))
        lab = cluster_robust_bcmm(Dataset(X), mu[None, :], default_delta("bcmm", 0.5), Params(alpha=0.5))
        assert set(lab.labels.tolist()) == {0}


def test_bcmm_planted_uniform_ball_components():
    alpha = 0.2
    Delta = default_delta("bcmm", alpha)
    good = 0
    for seed in range(10):
        spec = GenSpec(model="bounded-cov", k=4, d=16, n=2000, alpha=alpha, weights=(0.25,) * 4, sep_mult=25, seed=seed)
        ds, truth = gen_mixture(spec)
        lab = cluster_robust_bcmm(ds, truth.means, Delta, Params(alpha=alpha, seed=seed))
        good += clustering_accuracy(lab.labels, truth.labels) >= 0.95
    # an unlucky embedding can shrink a 25 Delta gap under the 20 Delta relation
    assert good >= 8


def test_bcmm_far_hypotheses_never_enter_the_kept_list():
    alpha = 0.2
    Delta = default_delta("bcmm", alpha)
    for seed in range(20):
        spec = GenSpec(model="bounded-cov", k=4, d=16, n=2000, alpha=alpha, weights=(0.25,) * 4, sep_mult=25, seed=seed)
        ds, truth = gen_mixture(spec)
        rng = np.random.default_rng(seed)
        junk = truth.means[rng.integers(0, 4, 5)] + rng.standard_normal((5, 16)) * 8 * Delta
        far = np.min(np.linalg.norm(junk[:, None, :] - truth.means[None], axis=2), axis=1) > 7 * Delta
        lab = cluster_robust_bcmm(ds, np.vstack([truth.means, junk]), Delta, Params(alpha=alpha, seed=seed))
        assert not set(lab.kept.tolist()) & {4 + i for i in np.flatnonzero(far)}


# -- run matching --------------------------------------------------------------


def test_match_runs_identity_and_permutation():
    a = np.repeat(np.arange(4), 25)
    assert match_runs(a, a) == {0: 0, 1: 1, 2: 2, 3: 3}
    perm = np.array([2, 0, 3, 1])
    assert match_runs(a, perm[a]) == {2: 0, 0: 1, 3: 2, 1: 3}


def test_match_runs_recovers_permutation_under_noise():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 5, 1000)
    perm = rng.permutation(5)
    b = perm[a]
    flip = rng.random(1000) < 0.1
    b[flip] = rng.integers(0, 5, int(flip.sum()))
    assert match_runs(a, b) == {int(perm[i]): i for i in range(5)}


def test_match_runs_leaves_small_overlaps_distinct():
    a = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    b = np.array([0, 1, 2, 3, 4, 5, 6, 7])
    assert match_runs(a, b) == {0: 0, 4: 1}


def test_merge_runs_translates_second_run():
    la = np.array([0, 0, 1, 1, -1, -1])
    lb = np.array([-1, 5, 5, 3, 3, 7])
    on_a = np.array([1, 1, 1, 1, 0, 0], bool)
    on_b = np.array([0, 1, 1, 1, 1, 1], bool)
    out = merge_runs(la, lb, on_a, on_b)
    assert out[:4].tolist() == [0, 0, 1, 1]
    assert out[4] == 1 and out[5] == 2


# -- holdout -------------------------------------------------------------------


def _mixture(seed=0, k=3, d=16, n=3000):
    spec = GenSpec(model="gaussian", k=k, d=d, n=n, sep_mult=40, seed=seed)
    return gen_mixture(spec)


def test_holdout_never_labels_a_point_with_its_own_list(monkeypatch):
    ds, truth = _mixture()
    learned, labeled = [], []
    real_mf = MF.fast_multifilter
    real_cl = CL._DISPATCH["uniform-gmm"]

    def spy_mf(sub_ds, *a, **kw):
        learned.append({r.tobytes() for r in sub_ds.points})
        return real_mf(sub_ds, *a, **kw)

    def spy_cl(sub_ds, *a, **kw):
        labeled.append({r.tobytes() for r in sub_ds.points})
        return real_cl(sub_ds, *a, **kw)

    monkeypatch.setattr(MF, "fast_multifilter", spy_mf)
    monkeypatch.setitem(CL._DISPATCH, "uniform-gmm", spy_cl)
    params = Params(alpha=1 / 3)
    lab = cluster_with_holdout(ds, "uniform-gmm", params)
    assert len(learned) == len(labeled) == 2
    for used, marked in zip(learned, labeled):
        assert not used & marked
        assert len(used) + len(marked) == ds.n
    a, b = lab.info["learn_sets"]
    assert not set(a.tolist()) & set(b.tolist())
    assert_total(lab.labels, ds.n)
    assert clustering_accuracy(lab.labels, truth.labels) >= 0.99


@pytest.mark.parametrize("model", MODELS)
def test_every_model_returns_a_total_labeling(model):
    ds, truth = _mixture(seed=1, n=2000)
    alpha = 1 / 3
    lab = cluster_with_holdout(ds, model, Params(alpha=alpha), Delta=default_delta(model, alpha))
    assert_total(lab.labels, ds.n)


def test_unknown_model_rejected():
    with pytest.raises(LdmeError):
        cluster_with_holdout(Dataset(np.zeros((10, 2))), "kmeans")
    with pytest.raises(LdmeError):
        default_delta("kmeans", 0.1)


@given(arrays(np.int64, 40, elements=st.integers(-1, 4)), arrays(np.int64, 40, elements=st.integers(-1, 4)))
def test_match_runs_is_injective(a, b):
    mp = match_runs(a, b)
    assert len(set(mp.values())) == len(mp)
    assert all(k in set(b.tolist()) and v in set(a.tolist()) for k, v in mp.items())

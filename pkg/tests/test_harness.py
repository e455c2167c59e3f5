"""Generators, metrics, reports, configs and the command line."""

from __future__ import annotations

import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from ldme.core import LdmeError, load_dataset
from ldme.harness import cli
from ldme.harness.experiment import ConfigError, load_config, run_batch, run_experiment
from ldme.harness.gen import (
    PARETO_SHAPE,
    GenSpec,
    _heavy_tail,
    component_noise,
    gen_mixture,
    heavy_tail_fourth_moment,
    separation_of,
)
from ldme.harness.metrics import clustering_accuracy, contingency, min_list_error
from ldme.harness.report import Report, ReportError, validate_report


# -- generator -----------------------------------------------------------------


def test_gen_is_reproducible_bit_for_bit():
    spec = GenSpec(model="adversarial-mix", k=3, d=8, n=500, eps=0.05, adversary="far-clusters", seed=7)
    (a, ta), (b, tb) = gen_mixture(spec), gen_mixture(spec)
    assert a.points.tobytes() == b.points.tobytes()
    assert ta.labels.tobytes() == tb.labels.tobytes()
    assert gen_mixture(GenSpec(seed=8))[0].points.tobytes() != gen_mixture(GenSpec(seed=9))[0].points.tobytes()


def test_single_component_mean_is_accurate():
    for seed in range(10):
        d, n = 20, 4000
        ds, truth = gen_mixture(GenSpec(k=1, d=d, n=n, seed=seed))
        assert np.linalg.norm(ds.points.mean(axis=0) - truth.means[0]) <= 3 * math.sqrt(d / n)


def test_component_counts_follow_weights():
    good = 0
    for seed in range(100):
        _, truth = gen_mixture(GenSpec(k=5, d=8, n=5000, seed=seed))
        counts = np.bincount(truth.labels, minlength=5)
        good += bool(np.all(np.abs(counts - 1000) <= 100))
    assert good >= 95


def test_planted_means_are_equidistant():
    spec = GenSpec(k=4, d=10, sep_mult=30, alpha=0.25, seed=3)
    _, truth = gen_mixture(spec)
    D = np.linalg.norm(truth.means[:, None] - truth.means[None], axis=2)
    off = D[~np.eye(4, dtype=bool)]
    assert np.allclose(off, separation_of(spec))


@pytest.mark.parametrize("model", ["gaussian", "bounded-cov", "bounded-4th"])
def test_component_covariance_is_bounded(model):
    rng = np.random.default_rng(0)
    Z = component_noise(model, rng, 20000, 16)
    S = np.cov(Z, rowvar=False)
    v = rng.standard_normal(16)
    for _ in range(200):
        v = S @ v
        v /= np.linalg.norm(v)
    assert v @ S @ v <= 1.5


def test_heavy_tail_moments_match_closed_form():
    a = PARETO_SHAPE
    c = math.sqrt((a - 2) / a)
    density = lambda x: a * x ** (-a - 1)  # |X| / c is Pareto with unit scale
    m2 = integrate.quad(lambda x: (c * x) ** 2 * density(x), 1, np.inf)[0]
    m4 = integrate.quad(lambda x: (c * x) ** 4 * density(x), 1, np.inf)[0]
    assert m2 == pytest.approx(1.0, rel=1e-8)
    assert heavy_tail_fourth_moment(a) == pytest.approx(max(m4, 3.0), rel=1e-8)
    with pytest.raises(LdmeError):
        heavy_tail_fourth_moment(4.0)


def test_heavy_tail_directional_fourth_moment_is_bounded():
    rng = np.random.default_rng(1)
    C = heavy_tail_fourth_moment()
    est = []
    for _ in range(20):
        Z = _heavy_tail(rng, (50000, 8))
        v = rng.standard_normal(8)
        v /= np.linalg.norm(v)
        est.append(np.mean((Z @ v) ** 4))
    assert np.median(est) <= C


@pytest.mark.parametrize(
    "kw",
    [dict(k=2, weights=(0.9, 0.2)), dict(k=2, weights=(0.5,)), dict(k=2, alpha=0.6), dict(k=0), dict(model="nope"), dict(k=5, d=3)],
)
def test_infeasible_specs_raise(kw):
    with pytest.raises(LdmeError):
        gen_mixture(GenSpec(**kw))


def test_adversarial_rows_carry_negative_labels():
    spec = GenSpec(model="adversarial-mix", k=2, d=6, n=2000, eps=0.1, adversary="far-clusters", n_fake=3, seed=2)
    ds, truth = gen_mixture(spec)
    adv = truth.adversarial
    assert 100 <= adv.sum() <= 300
    assert truth.fake_means.shape == (3, 6)
    far = np.min(np.linalg.norm(ds.points[adv][:, None] - truth.fake_means[None], axis=2), axis=1)
    assert far.max() < 2.0


# -- metrics -------------------------------------------------------------------


def test_min_list_error_cases():
    assert min_list_error([], np.zeros(3)) == math.inf
    assert min_list_error([[3.0, 4.0]], [0.0, 0.0]) == 5.0
    assert min_list_error([[3.0, 4.0], [1.0, 0.0]], [0.0, 0.0]) == 1.0


@given(arrays(np.float64, (5, 3), elements=st.floats(-100, 100)), arrays(np.float64, 3, elements=st.floats(-100, 100)))
def test_min_list_error_matches_loop(L, mu):
    ref = min(math.sqrt(sum((L[i, j] - mu[j]) ** 2 for j in range(3))) for i in range(5))
    assert min_list_error(L, mu) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_accuracy_examples():
    t = np.array([0, 0, 1, 1, 2, 2])
    assert clustering_accuracy(t, t) == 1.0
    assert clustering_accuracy(np.array([2, 2, 0, 0, 1, 1]), t) == 1.0
    p = t.copy()
    p[0] = 1
    assert clustering_accuracy(p, t) == pytest.approx(1 - 1 / 6)
    assert clustering_accuracy(np.full(6, -1), t) == 0.0
    assert clustering_accuracy(t, np.array([0, 0, 1, 1, -1, -1])) == 1.0


def _brute_accuracy(pred, truth):
    C = contingency(pred, truth)
    kt, kp = C.shape
    best = 0
    for perm in itertools.permutations(range(max(kt, kp)), kt):
        best = max(best, sum(C[i, perm[i]] for i in range(kt) if perm[i] < kp))
    return best / max(int(np.sum(truth >= 0)), 1)


@given(arrays(np.int64, 30, elements=st.integers(0, 3)), arrays(np.int64, 30, elements=st.integers(0, 3)), st.permutations(range(4)))
def test_accuracy_is_symmetric_and_relabeling_invariant(a, b, perm):
    perm = np.asarray(perm)
    acc = clustering_accuracy(a, b)
    assert acc == pytest.approx(clustering_accuracy(b, a))
    assert acc == pytest.approx(clustering_accuracy(perm[a], b))
    assert acc == pytest.approx(_brute_accuracy(a, b))


# -- reports -------------------------------------------------------------------


def test_report_validates_and_maps_infinite_error_to_null():
    rep = Report(task="estimate", params={"alpha": 0.1}, hypotheses=[[1.0, 2.0]], min_error=math.inf)
    obj = rep.to_dict()
    assert obj["min_error"] is None and obj["list_size"] == 1
    assert json.loads(rep.to_json()) == obj


def test_report_rejects_nonfinite_and_unknown_fields():
    good = Report(task="cluster", params={}).to_dict()
    with pytest.raises(ReportError):
        validate_report({**good, "hypotheses": [[float("nan")]]})
    with pytest.raises(ReportError):
        validate_report({**good, "surprise": 1})
    with pytest.raises(ReportError):
        validate_report({**good, "task": "other"})


# -- configs -------------------------------------------------------------------


SMALL = {"task": "estimate", "gen": {"model": "gaussian", "k": 2, "d": 8, "n": 400, "seed": 3}}


def test_config_errors_name_the_field(tmp_path):
    with pytest.raises(ConfigError) as e:
        load_config({"task": "estimate", "gen": {"k": 0}})
    assert e.value.field == "gen.k"
    with pytest.raises(ConfigError) as e:
        load_config({"task": "fly"})
    assert e.value.field == "task"
    with pytest.raises(ConfigError) as e:
        load_config({"task": "cluster", "model": "kmeans"})
    assert e.value.field == "model"
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError) as e:
        load_config(p)
    assert e.value.field == "<file>"


def test_experiment_is_deterministic():
    a, b = run_experiment(SMALL).to_dict(), run_experiment(SMALL).to_dict()
    a.pop("wall_time_ms")
    b.pop("wall_time_ms")
    assert a == b
    assert a["list_size"] >= 1 and a["min_error"] is not None


def test_batch_keeps_input_order():
    cfgs = [{**SMALL, "gen": {**SMALL["gen"], "seed": s}} for s in (1, 2, 3)]
    seq = run_batch(cfgs, workers=1)
    par = run_batch(cfgs, workers=2)
    for x, y in zip(seq, par):
        x.pop("wall_time_ms")
        y.pop("wall_time_ms")
        assert x == y
    assert [r["gen"]["seed"] for r in par] == [1, 2, 3]


def test_library_errors_become_warnings_unless_strict():
    cfg = {"task": "cluster", "model": "bfmm", "Delta": 0.1, "gen": {"model": "bounded-4th", "k": 2, "d": 4, "n": 300, "seed": 0}}
    rep = run_experiment(cfg).to_dict()
    assert any(w.startswith("error:") for w in rep["warnings"])
    with pytest.raises(LdmeError):
        run_experiment({**cfg, "strict": True})


# -- command line --------------------------------------------------------------


def test_cli_gen_estimate_cluster_round_trip(tmp_path, capsys):
    data, truth, labels = tmp_path / "x.ldme", tmp_path / "t.json", tmp_path / "l.txt"
    assert cli.main(["gen", "--k", "3", "--d", "8", "--n", "900", "--sep-mult", "100", "--seed", "1", "--output", str(data), "--truth", str(truth), "--labels", str(labels)]) == 0
    ds = load_dataset(str(data))
    assert ds.points.shape == (900, 8)
    planted = cli.read_labels(str(labels))
    assert planted.shape == (900,)

    rep_path = tmp_path / "r.json"
    assert cli.main(["estimate", "--input", str(data), "--alpha", "0.3", "--truth", str(truth), "--output", str(rep_path)]) == 0
    rep = json.loads(rep_path.read_text())
    validate_report(rep)
    assert rep["min_error"] < 3.0

    out_labels = tmp_path / "pred.txt"
    assert cli.main(["cluster", "--input", str(data), "--alpha", "0.3", "--labels", str(out_labels), "--output", str(tmp_path / "c.json")]) == 0
    pred = cli.read_labels(str(out_labels))
    assert pred.shape == (900,)
    assert clustering_accuracy(pred, planted) >= 0.99


def test_cli_csv_and_stdout(tmp_path, capsys):
    data = tmp_path / "x.csv"
    assert cli.main(["gen", "--k", "1", "--d", "3", "--n", "200", "--output", str(data)]) == 0
    capsys.readouterr()
    assert cli.main(["robust-mean", "--input", str(data), "--eps", "0.05"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["task"] == "robust-mean" and rep["list_size"] == 1


def test_cli_config_mode(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(SMALL))
    assert cli.main(["estimate", "--config", str(p)]) == 0
    assert json.loads(capsys.readouterr().out)["task"] == "estimate"
    assert cli.main(["cluster", "--config", str(p)]) == 1


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["estimate", "--input", str(tmp_path / "missing.ldme")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"task": "estimate", "gen": {"d": -1}}))
    assert cli.main(["estimate", "--config", str(bad)]) == 1
    assert "gen.d" in capsys.readouterr().err
    monkeypatch.setattr(cli, "selftest", lambda seed=0: [("ok", True, ""), ("bad", False, "forced")])
    assert cli.main(["selftest"]) == 2
    monkeypatch.setattr(cli, "selftest", lambda seed=0: [("ok", True, "")])
    assert cli.main(["selftest"]) == 0


def test_real_selftest_passes():
    rows = cli.selftest(0)
    assert all(ok for _, ok, _ in rows), rows


def test_labels_file_format(tmp_path):
    p = tmp_path / "l.txt"
    cli.write_labels(str(p), np.array([0, -1, 2]))
    assert p.read_text() == "0\n-1\n2\n"
    assert cli.read_labels(str(p)).tolist() == [0, -1, 2]

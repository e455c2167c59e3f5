"""The compiled kernels and the numpy fallback must agree."""

from __future__ import annotations

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ldme._accel import backend_name
from ldme.bench import format_table, time_kernels

PROBE = r"""
import json, sys
import numpy as np
from ldme import _kernels as K
from ldme._accel import backend_name
from ldme.core import Dataset, Params
from ldme.multifilter import fast_multifilter
from ldme.gaussian_mf import fast_gaussian_multifilter
from ldme.oneshot import robust_mean

rng = np.random.default_rng(0)
y = np.sort(np.concatenate([rng.standard_normal(400) + c for c in (-200.0, 0.0, 200.0)]))
A = rng.standard_normal((300, 12))
B = rng.standard_normal((9, 12))
g = 8.0 * np.log(10.0)
out = {"backend": backend_name()}
out["tail"] = [float(v) if np.ndim(v) == 0 else np.asarray(v).tolist() for v in K.split_or_tail_bound(y, 0, y.size, 150.0, g, 0.25)]
out["nearest"] = K.nearest_rows(A, B).tolist()
out["bc_windows"] = [np.asarray(v).tolist() for v in K.bc_partition_windows(y, y.size, 0.1, 0.25, g, 40.0, True)]
out["gauss_windows"] = [np.asarray(v).tolist() for v in K.gauss_partition_windows(y, 1e-6, 0.25, 40.0, 20, True)]

lab = np.arange(1200) % 4
X = rng.standard_normal((1200, 10))
X[lab > 0] += 300.0 * rng.standard_normal((3, 10))[lab[lab > 0] - 1]
ds = Dataset(X)
out["bc_tree"] = fast_multifilter(ds, Params(alpha=0.2, seed=1)).hypotheses.tobytes().hex()
out["gauss_tree"] = fast_gaussian_multifilter(ds, Params(alpha=0.2, seed=1)).hypotheses.tobytes().hex()
out["robust"] = robust_mean(Dataset(X[lab < 2]), 0.45, Params(seed=1)).mean.tobytes().hex()
print(json.dumps(out))
"""


def _probe(disable: bool) -> dict:
    env = dict(os.environ)
    env.pop("LDME_DISABLE_NUMBA", None)
    if disable:
        env["LDME_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def both():
    return _probe(False), _probe(True)


def test_flag_selects_fallback(both):
    fast, slow = both
    assert slow["backend"] == "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        pytest.skip("numba is not installed")
    assert fast["backend"] == "numba"


@pytest.mark.parametrize("key", ["tail", "nearest", "bc_windows", "gauss_windows", "bc_tree", "gauss_tree", "robust"])
def test_backends_agree(both, key):
    fast, slow = both
    assert fast[key] == slow[key]


def test_bench_smoke():
    secs = time_kernels(n=600, repeats=1)
    assert set(secs) >= {"nearest_rows", "split_or_tail_bound"}
    assert all(v >= 0 for v in secs.values())
    table = format_table({"current": {"backend": backend_name(), "seconds": secs}, "fallback": {"seconds": secs}, "speedup": {k: 1.0 for k in secs}})
    assert table.count("\n") == len(secs)

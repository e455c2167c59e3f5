"""Kernel timings for the compiled and fallback backends.

The backend is fixed at import time, so the comparison runs the fallback in
a child process with ``LDME_DISABLE_NUMBA=1``.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import _kernels as K
from ._accel import backend_name


def _cases(n: int, seed: int) -> List[Tuple[str, Callable[[], object]]]:
    rng = np.random.default_rng(seed)
    # three well-separated groups along one axis so the split sweep has work to do
    y = np.sort(np.concatenate([rng.standard_normal(n // 3) + c for c in (-300.0, 0.0, 300.0)]))
    A = rng.standard_normal((n, 24))
    B = rng.standard_normal((32, 24))
    P = rng.standard_normal((min(n, 2000), 16))
    cols = np.arange(16, dtype=np.int64)
    gamma = 8.0 * np.log(10.0)
    return [
        ("bc_partition_windows", lambda: K.bc_partition_windows(y, y.size, 0.1, 0.25, gamma, 40.0, False)),
        ("split_or_tail_bound", lambda: K.split_or_tail_bound(y, 0, y.size, 250.0, gamma, 0.25)),
        ("gauss_partition_windows", lambda: K.gauss_partition_windows(y, 1e-6, 0.25, 40.0, 20, False)),
        ("bc_first_active_direction", lambda: K.bc_first_active_direction(P, cols, P.shape[0], 0.1, 1e6)),
        ("nearest_rows", lambda: K.nearest_rows(A, B)),
    ]


def time_kernels(n: int = 30000, repeats: int = 5, seed: int = 0) -> Dict[str, float]:
    """Best-of-``repeats`` seconds per kernel on the current backend (after one warm-up call)."""
    out: Dict[str, float] = {}
    for name, fn in _cases(n, seed):
        fn()
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    return out


def compare(n: int = 30000, repeats: int = 5) -> Dict[str, object]:
    """Timings for both backends plus per-kernel speedups."""
    here = {"backend": backend_name(), "seconds": time_kernels(n, repeats)}
    env = dict(os.environ, LDME_DISABLE_NUMBA="1")
    code = f"import json; from ldme.bench import time_kernels; print(json.dumps(time_kernels({n}, {repeats})))"
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    fallback = json.loads(res.stdout.strip().splitlines()[-1])
    speedup = {k: fallback[k] / here["seconds"][k] for k in fallback if here["seconds"].get(k, 0) > 0}
    return {"n": n, "repeats": repeats, "current": here, "fallback": {"backend": "numpy", "seconds": fallback}, "speedup": speedup}


def format_table(result: Dict[str, object]) -> str:
    cur = result["current"]["seconds"]
    fb = result["fallback"]["seconds"]
    lines = [f"{'kernel':<28}{result['current']['backend']:>12}{'fallback':>12}{'speedup':>10}"]
    for k in cur:
        lines.append(f"{k:<28}{cur[k]:>12.5f}{fb[k]:>12.5f}{result['speedup'][k]:>10.1f}")
    return "\n".join(lines)

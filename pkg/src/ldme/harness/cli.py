"""Command-line entry point: ``ldme <subcommand>``.

Exit codes: 0 success, 2 acceptance failure (selftest), 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from .. import __version__
from ..clustering import MODELS as CLUSTER_MODELS
from ..core import LdmeError, load_dataset, save_ldme1
from .experiment import ESTIMATE_MODELS, ConfigError, build_params, load_config, run_experiment, run_task
from .gen import ADVERSARIES, MODELS as GEN_MODELS, GenSpec, gen_mixture

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ACCEPTANCE = 2

log = logging.getLogger("ldme")


def write_labels(path: str, labels) -> None:
    Path(path).write_text("".join(f"{int(l)}\n" for l in labels))


def read_labels(path: str) -> np.ndarray:
    return np.array([int(t) for t in Path(path).read_text().split()], dtype=np.int64)


def _write_dataset(path: str, X: np.ndarray) -> None:
    if path.lower().endswith(".csv"):
        np.savetxt(path, X, delimiter=",", fmt="%.17g")
    else:
        save_ldme1(path, X)


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text + "\n")
    else:
        print(text)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--config", default=None, help="JSON experiment config (generates its own data)")
    p.add_argument("--strict", action="store_true", help="fail instead of reporting library errors as warnings")


def _params_from(args, **extra):
    over = {k: getattr(args, k) for k in ("seed", "alpha", "beta", "delta") if getattr(args, k, None) is not None}
    over.update(extra)
    return build_params(over)


def _truth_means(path: Optional[str]):
    if not path:
        return None
    from .gen import Truth

    obj = json.loads(Path(path).read_text())
    means = np.atleast_2d(np.asarray(obj["means"], dtype=np.float64))
    labels = np.asarray(obj.get("labels", []), dtype=np.int64)
    return Truth(labels, means, np.asarray(obj.get("weights", []), dtype=np.float64))


def cmd_gen(args) -> int:
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        spec = GenSpec(**{**cfg, **({"weights": tuple(cfg["weights"])} if cfg.get("weights") else {})})
    else:
        spec = GenSpec(
            model=args.model,
            k=args.k,
            d=args.d,
            n=args.n,
            alpha=args.alpha,
            separation=args.separation,
            sep_mult=args.sep_mult,
            eps=args.eps,
            adversary=args.adversary,
            n_fake=args.n_fake,
            seed=args.seed if args.seed is not None else 0,
        )
    ds, truth = gen_mixture(spec)
    _write_dataset(args.output, ds.points)
    if args.labels:
        write_labels(args.labels, truth.labels)
    if args.truth:
        Path(args.truth).write_text(
            json.dumps({"spec": spec.to_dict(), "means": truth.means.tolist(), "labels": truth.labels.tolist(), "weights": truth.weights.tolist()})
        )
    log.info("wrote %d x %d points to %s", ds.n, ds.d, args.output)
    return EXIT_OK


def _config_run(args, task: str) -> int:
    cfg = load_config(args.config)
    if cfg["task"] != task:
        raise ConfigError("task", f"config is for {cfg['task']!r}, not {task!r}")
    if args.strict:
        cfg = {**cfg, "strict": True}
    rep = run_experiment(cfg)
    _emit(rep.to_json(), args.output)
    return EXIT_OK


def cmd_estimate(args) -> int:
    if args.config:
        return _config_run(args, "estimate")
    ds = load_dataset(args.input)
    params = _params_from(args)
    rep, _ = run_task("estimate", ds, params, model=args.model, truth=_truth_means(args.truth), Delta=args.Delta, strict=args.strict)
    _emit(rep.to_json(), args.output)
    return EXIT_OK


def cmd_robust_mean(args) -> int:
    if args.config:
        return _config_run(args, "robust-mean")
    ds = load_dataset(args.input)
    params = _params_from(args)
    rep, _ = run_task("robust-mean", ds, params, truth=_truth_means(args.truth), eps=args.eps, strict=args.strict)
    _emit(rep.to_json(), args.output)
    return EXIT_OK


def cmd_cluster(args) -> int:
    if args.config:
        return _config_run(args, "cluster")
    ds = load_dataset(args.input)
    params = _params_from(args)
    truth = None
    if args.truth:
        truth = _truth_means(args.truth)
    rep, labels = run_task("cluster", ds, params, model=args.model, truth=truth, Delta=args.Delta, strict=args.strict)
    if labels is None:
        labels = np.full(ds.n, -1, dtype=np.int64)
    if args.labels:
        write_labels(args.labels, labels)
    else:
        sys.stdout.write("".join(f"{int(l)}\n" for l in labels))
    if args.output:
        Path(args.output).write_text(rep.to_json() + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    from ..bench import compare, format_table

    result = compare(args.n, args.repeats)
    print(format_table(result))
    if args.output:
        Path(args.output).write_text(json.dumps(result, indent=2) + "\n")
    return EXIT_OK


def selftest(seed: int = 0) -> List[tuple]:
    """A fast subset of the acceptance checks; returns (name, passed, detail) rows."""
    from ..core import Dataset, Params
    from ..multifilter import fast_multifilter, supergeometric_max_terms, supergeometric_sum
    from ..oneshot import robust_mean
    from .metrics import min_list_error

    rows = []
    rng = np.random.default_rng(seed)
    d, n, eps = 50, 5000, 0.1
    X = rng.standard_normal((n, d))
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    m = int(eps * n)
    X[:m] = 10.0 * u + 0.1 * rng.standard_normal((m, d))
    t0 = time.perf_counter()
    res = robust_mean(Dataset(X), eps, Params(seed=seed))
    err = float(np.linalg.norm(res.mean))
    naive = float(np.linalg.norm(X.mean(axis=0)))
    rows.append(("robust-mean", err <= 5 * math.sqrt(eps) and err <= naive / 2, f"error {err:.3f} naive {naive:.3f} ({time.perf_counter() - t0:.2f}s)"))

    d, a = 32, 0.1
    n = int(4 * d / a)
    lab = np.arange(n) % 10
    X = rng.standard_normal((n, d))
    fakes = rng.standard_normal((9, d))
    fakes *= 600.0 / np.linalg.norm(fakes, axis=1, keepdims=True)
    X[lab > 0] += fakes[lab[lab > 0] - 1]
    res = fast_multifilter(Dataset(X), Params(alpha=a, seed=seed))
    e = min_list_error(res.hypotheses, np.zeros(d))
    rows.append(("list-decoding", len(res) <= 8 / a and e <= 0.15 * 600.0, f"list {len(res)} error {e:.3f}"))

    cases = [(1.5, 0.3), (100.0, 1.0), (10.0, 0.05), (1e6, 0.25)]
    ok = all(supergeometric_sum(A, b, supergeometric_max_terms(A, b)) <= 4 * A / b + 1e-9 for A, b in cases)
    rows.append(("supergeometric", ok, f"{len(cases)} instances"))
    return rows


def cmd_selftest(args) -> int:
    rows = selftest(args.seed or 0)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_ACCEPTANCE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ldme", description="List-decodable mean estimation and mixture clustering.")
    ap.add_argument("--version", action="version", version=f"ldme {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="sample a synthetic mixture")
    g.add_argument("--model", choices=GEN_MODELS, default="gaussian")
    g.add_argument("--k", type=int, default=2)
    g.add_argument("--d", type=int, default=16)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--alpha", type=float, default=None)
    g.add_argument("--separation", type=float, default=None)
    g.add_argument("--sep-mult", dest="sep_mult", type=float, default=40.0)
    g.add_argument("--eps", type=float, default=0.0)
    g.add_argument("--adversary", choices=ADVERSARIES, default="none")
    g.add_argument("--n-fake", dest="n_fake", type=int, default=1)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--config", default=None, help="JSON generator settings")
    g.add_argument("--output", required=True, help="dataset path (.csv for CSV, anything else for LDME1)")
    g.add_argument("--labels", default=None, help="write planted labels here (-1 = adversarial)")
    g.add_argument("--truth", default=None, help="write planted means and labels as JSON here")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("estimate", help="list-decodable mean estimation")
    e.add_argument("--input")
    e.add_argument("--model", choices=ESTIMATE_MODELS, default="bounded-cov")
    e.add_argument("--Delta", type=float, default=None)
    e.add_argument("--truth", default=None, help="truth JSON from `gen --truth` to score the list")
    e.add_argument("--output", default=None, help="report path (stdout when omitted)")
    _common(e)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("robust-mean", help="mean estimation with a minority of outliers")
    r.add_argument("--input")
    r.add_argument("--eps", type=float, default=0.1)
    r.add_argument("--truth", default=None)
    r.add_argument("--output", default=None)
    _common(r)
    r.set_defaults(func=cmd_robust_mean)

    c = sub.add_parser("cluster", help="cluster a mixture (labels, -1 = unlabeled)")
    c.add_argument("--input")
    c.add_argument("--model", choices=CLUSTER_MODELS, default="uniform-gmm")
    c.add_argument("--Delta", type=float, default=None)
    c.add_argument("--truth", default=None)
    c.add_argument("--labels", default=None, help="labels path (stdout when omitted)")
    c.add_argument("--output", default=None, help="report path")
    _common(c)
    c.set_defaults(func=cmd_cluster)

    b = sub.add_parser("bench", help="time compiled kernels against the fallback")
    b.add_argument("--n", type=int, default=30000)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--output", default=None)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("selftest", help="quick acceptance smoke test")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selftest)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("estimate", "robust-mean", "cluster") and not args.config and not args.input:
            ap.error(f"{args.command} needs --input or --config")
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (LdmeError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Config-driven experiments: generate, run one task, score, report."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import jsonschema
import numpy as np

from ..clustering import MODELS as CLUSTER_MODELS
from ..clustering import cluster_with_holdout, default_delta
from ..core import Dataset, LdmeError, Params
from ..gaussian_mf import fast_gaussian_multifilter
from ..multifilter import fast_multifilter
from ..oneshot import robust_mean
from .gen import ADVERSARIES, MODELS as GEN_MODELS, GenSpec, Truth, gen_mixture, spec_alpha
from .metrics import clustering_accuracy, min_list_error
from .report import Report

ESTIMATE_MODELS = ("bounded-cov", "gaussian")

_PARAM_FIELDS = {f.name for f in dataclasses.fields(Params)}

CONFIG_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["task"],
    "additionalProperties": False,
    "properties": {
        "task": {"enum": ["estimate", "robust-mean", "cluster"]},
        "model": {"type": "string"},
        "gen": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "model": {"enum": list(GEN_MODELS)},
                "k": {"type": "integer", "minimum": 1},
                "d": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 1},
                "alpha": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "weights": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0}},
                "separation": {"type": ["number", "null"], "minimum": 0},
                "sep_mult": {"type": "number", "minimum": 0},
                "Delta": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "eps": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "adversary": {"enum": list(ADVERSARIES)},
                "n_fake": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "params": {"type": "object", "propertyNames": {"enum": sorted(_PARAM_FIELDS)}},
        "eps": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "Delta": {"type": "number", "exclusiveMinimum": 0},
        "strict": {"type": "boolean"},
    },
}


class ConfigError(LdmeError):
    """Malformed experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field


def load_config(src: Union[str, Path, Dict[str, Any]]) -> Dict[str, Any]:
    if isinstance(src, dict):
        cfg = src
    else:
        try:
            cfg = json.loads(Path(src).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError("<file>", f"invalid JSON ({e.msg} at line {e.lineno})") from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(path, e.message) from None
    task = cfg["task"]
    model = cfg.get("model")
    allowed = {"estimate": ESTIMATE_MODELS, "cluster": CLUSTER_MODELS}.get(task)
    if allowed is not None and model is not None and model not in allowed:
        raise ConfigError("model", f"{model!r} is not one of {list(allowed)} for task {task!r}")
    return cfg


def build_params(overrides: Optional[Dict[str, Any]], **defaults: Any) -> Params:
    kw = dict(defaults)
    kw.update(overrides or {})
    try:
        return Params(**kw)
    except LdmeError as e:
        raise ConfigError("params", str(e)) from None


def build_gen(cfg: Optional[Dict[str, Any]]) -> GenSpec:
    cfg = dict(cfg or {})
    if cfg.get("weights") is not None:
        cfg["weights"] = tuple(cfg["weights"])
    return GenSpec(**cfg)


def _estimate(ds: Dataset, truth: Optional[Truth], model: str, params: Params, Delta: Optional[float], rep: Report) -> None:
    if model == "gaussian":
        res = fast_gaussian_multifilter(ds, params)
    else:
        res = fast_multifilter(ds, params, Delta=Delta)
    rep.hypotheses = res.hypotheses.tolist()
    rep.layer_stats = [s.to_dict() for s in res.layer_stats]
    rep.warnings.extend(res.warnings)
    if truth is not None:
        errs = [min_list_error(res.hypotheses, m) for m in truth.means]
        rep.min_error = errs[0]
        rep.extra["component_errors"] = [e for e in errs if math.isfinite(e)]


def _robust_mean(ds: Dataset, truth: Optional[Truth], eps: float, params: Params, rep: Report) -> None:
    res = robust_mean(ds, eps, params)
    rep.hypotheses = [res.mean.tolist()]
    rep.warnings.extend(res.warnings)
    if truth is not None:
        rep.min_error = min_list_error(rep.hypotheses, truth.means[0])


def _cluster(ds: Dataset, truth: Optional[Truth], model: str, params: Params, Delta: Optional[float], rep: Report) -> np.ndarray:
    lab = cluster_with_holdout(ds, model, params, Delta)
    rep.warnings.extend(lab.info.get("warnings", []))
    if not lab.transitive:
        rep.warnings.append("candidate relation was not transitive; labels come from its transitive closure")
    rep.extra["n_labels"] = lab.n_labels
    rep.extra["unlabeled"] = int(np.sum(lab.labels < 0))
    if truth is not None:
        rep.accuracy = clustering_accuracy(lab.labels, truth.labels)
    return lab.labels


def run_task(
    task: str,
    ds: Dataset,
    params: Params,
    *,
    model: Optional[str] = None,
    truth: Optional[Truth] = None,
    eps: float = 0.1,
    Delta: Optional[float] = None,
    strict: bool = False,
    gen: Optional[Dict[str, Any]] = None,
) -> Tuple[Report, Optional[np.ndarray]]:
    """Run one task on a dataset.  Library errors become report warnings
    unless ``strict`` is set, in which case they propagate."""
    if task == "estimate":
        model = model or "bounded-cov"
    elif task == "cluster":
        model = model or "uniform-gmm"
    rep = Report(task=task, params=params.to_dict(), model=model, gen=gen)
    labels = None
    t0 = time.perf_counter()
    try:
        if task == "estimate":
            _estimate(ds, truth, model, params, Delta, rep)
        elif task == "robust-mean":
            _robust_mean(ds, truth, eps, params, rep)
        elif task == "cluster":
            labels = _cluster(ds, truth, model, params, Delta, rep)
        else:
            raise ConfigError("task", f"unknown task {task!r}")
    except ConfigError:
        raise
    except LdmeError as e:
        if strict:
            raise
        rep.warnings.append(f"error: {e}")
    rep.wall_time_ms = (time.perf_counter() - t0) * 1000.0
    return rep, labels


def run_experiment(config: Union[str, Path, Dict[str, Any]]) -> Report:
    """gen -> task -> metrics -> Report, deterministic for a fixed config."""
    cfg = load_config(config)
    try:
        spec = build_gen(cfg.get("gen"))
        ds, truth = gen_mixture(spec)
    except ConfigError:
        raise
    except (LdmeError, TypeError) as e:
        raise ConfigError("gen", str(e)) from None
    task = cfg["task"]
    defaults: Dict[str, Any] = {"seed": spec.seed}
    if task in ("estimate", "cluster"):
        defaults["alpha"] = min(spec_alpha(spec), 0.49)
    params = build_params(cfg.get("params"), **defaults)
    Delta = cfg.get("Delta")
    if task == "cluster" and Delta is None:
        Delta = spec.Delta if spec.Delta is not None else default_delta(cfg.get("model", "uniform-gmm"), params.alpha)
    rep, _ = run_task(
        task,
        ds,
        params,
        model=cfg.get("model"),
        truth=truth,
        eps=cfg.get("eps", spec.eps if spec.eps > 0 else 0.1),
        Delta=Delta,
        strict=bool(cfg.get("strict", False)),
        gen=spec.to_dict(),
    )
    return rep


def _run_one(cfg: Dict[str, Any]) -> Dict[str, Any]:
    return run_experiment(cfg).to_dict()


def run_batch(configs, workers: int = 1):
    """Run several configs, concurrently when ``workers > 1``.

    Each config carries its own seed, so results do not depend on scheduling;
    reports come back in input order for serialized writing.
    """
    cfgs = [load_config(c) for c in configs]
    if workers <= 1 or len(cfgs) <= 1:
        return [_run_one(c) for c in cfgs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, cfgs))

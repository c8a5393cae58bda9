"""Seeded multi-run experiments with per-run files and an aggregate summary.

Directory layout produced by :func:`run_experiment`::

    <output_dir>/spec.json
    <output_dir>/runs/seed_<k>/trace.csv
    <output_dir>/runs/seed_<k>/result.json
    <output_dir>/runs/seed_<k>/certificate.json      (certificate methods)
    <output_dir>/aggregate.json

Seeds run in parallel worker processes; the worker count comes from the
``CGP_THREADS`` environment variable (default 1, i.e. in-process).
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..adaptive import adaptive_run
from ..core import RunResult, cgp_run
from ..hybrid import hybrid_run
from ..model import ConfigError, RunConfig
from ..trust_region import tr_run
from .baselines import gp_ucb_baseline, random_baseline
from .functions import BENCHMARKS, make_benchmark

METHODS = ("cgp", "adaptive", "trust-region", "hybrid", "random", "gp-ucb")
MODE_OF = {"cgp": "known-L", "adaptive": "adaptive", "trust-region": "trust-region",
           "hybrid": "hybrid"}
THREADS_ENV = "CGP_THREADS"


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


@dataclass(frozen=True)
class ExperimentSpec:
    """One benchmark, one method, several seeds.

    ``overrides`` are :class:`RunConfig` fields (``budget``, ``sigma``,
    ``stopping`` ...). When ``overrides`` has no ``lipschitz`` the
    benchmark's registered bound times ``lipschitz_factor`` is used; in
    adaptive mode ``lipschitz_factor=None`` means warm-sample estimation.
    """

    benchmark: str
    method: str
    seeds: List[int]
    output_dir: str
    dimension: Optional[int] = None
    bench_params: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    lipschitz_factor: Optional[float] = 1.0

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; "
                              f"choose from {', '.join(BENCHMARKS)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if "budget" not in self.overrides:
            raise ConfigError("overrides must set the evaluation budget")
        for key in ("mode", "seed", "dimension"):
            if key in self.overrides:
                raise ConfigError(f"{key!r} is set by the experiment, not by overrides")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        if not isinstance(data, dict):
            raise ConfigError("experiment spec must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def build_benchmark(spec: ExperimentSpec):
    try:
        return make_benchmark(spec.benchmark, spec.dimension, **spec.bench_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def build_config(spec: ExperimentSpec, seed: int, d: int, lipschitz: float) -> RunConfig:
    data = dict(spec.overrides)
    data["dimension"] = d
    data["seed"] = seed
    data["mode"] = MODE_OF[spec.method]
    if "lipschitz" not in data:
        data["lipschitz"] = (None if spec.lipschitz_factor is None
                             else lipschitz * spec.lipschitz_factor)
    return RunConfig.from_dict(data)


def run_single(spec: ExperimentSpec, seed: int) -> RunResult:
    """Run one seed of ``spec`` without writing anything."""
    bench = build_benchmark(spec)
    sigma = float(spec.overrides.get("sigma", RunConfig.sigma))
    objective = bench.objective(sigma, seed)
    budget = int(spec.overrides["budget"])
    if spec.method == "random":
        return random_baseline(objective, budget, seed, bench.d)
    if spec.method == "gp-ucb":
        delta = float(spec.overrides.get("delta", RunConfig.delta))
        return gp_ucb_baseline(objective, budget, delta, seed, bench.d, sigma)
    config = build_config(spec, seed, bench.d, bench.metadata.lipschitz)
    if spec.method == "cgp":
        return cgp_run(objective, config)
    if spec.method == "adaptive":
        return adaptive_run(objective, config)[0]
    if spec.method == "trust-region":
        return tr_run(objective, config)
    return hybrid_run(objective, config)[0]


def run_dir(output_dir, seed: int) -> str:
    return os.path.join(output_dir, "runs", f"seed_{seed}")


def _worker(spec_dict: dict, seed: int) -> dict:
    spec = ExperimentSpec.from_dict(spec_dict)
    try:
        res = run_single(spec, seed)
    except Exception as exc:  # recorded per seed; aggregation proceeds
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}
    res.write(run_dir(spec.output_dir, seed))
    return {"seed": seed, "summary": json.loads(json.dumps(res.summary(), default=_default))}


def _default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(type(v).__name__)


def _stats(values) -> dict:
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"n": 0, "median": None, "mean": None, "stderr": None}
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return {"n": int(v.size), "median": float(np.median(v)), "mean": float(v.mean()),
            "stderr": se}


def aggregate(spec: ExperimentSpec, outcomes: List[dict]) -> dict:
    """Summary over successful seeds (regret, certificate, stopping)."""
    ok = [o["summary"] for o in outcomes if "summary" in o]
    failures = [{"seed": o["seed"], "error": o["error"]} for o in outcomes if "error" in o]
    reasons = {}
    for s in ok:
        reasons[s["stop_reason"]] = reasons.get(s["stop_reason"], 0) + 1
    evals = [s["evaluations"] for s in ok]
    budget = int(spec.overrides["budget"])
    final = [s.get("final", {}) for s in ok]
    cert = {
        "vol_fraction": _stats(f.get("vol_fraction") for f in final),
        "eps": _stats(f.get("eps") for f in final),
        "gamma_true": _stats(s.get("gamma_true") for s in ok),
    }
    return {
        "benchmark": spec.benchmark,
        "method": spec.method,
        "seeds": [o["seed"] for o in outcomes],
        "succeeded": len(ok),
        "failures": failures,
        "regret": _stats(s.get("regret") for s in ok),
        "certificate": cert,
        "stopping": {
            "reasons": dict(sorted(reasons.items())),
            "early": sum(1 for e in evals if e < budget),
            "evaluations": _stats(evals),
        },
        "anomalies": sorted(s.get("seed") for s in ok if s["stop_reason"] == "anomaly"),
    }


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> dict:
    """Run every seed, write per-run files and ``aggregate.json``.

    Returns the aggregate dictionary. Output is independent of the worker
    count: results are ordered by seed before aggregation.
    """
    workers = thread_count() if workers is None else workers
    build_benchmark(spec)
    os.makedirs(spec.output_dir, exist_ok=True)
    with open(os.path.join(spec.output_dir, "spec.json"), "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    payload = spec.to_dict()
    if workers <= 1 or len(spec.seeds) == 1:
        outcomes = [_worker(payload, s) for s in spec.seeds]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(spec.seeds))) as pool:
            outcomes = list(pool.map(_worker, [payload] * len(spec.seeds), spec.seeds))
    outcomes.sort(key=lambda o: o["seed"])
    for o in outcomes:
        if "error" in o:
            warnings.warn(f"seed {o['seed']} failed: {o['error']}", RuntimeWarning)
    agg = aggregate(spec, outcomes)
    with open(os.path.join(spec.output_dir, "aggregate.json"), "w", encoding="utf-8") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return agg

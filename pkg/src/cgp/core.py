"""The certificate-guided pruning loop.

Each iteration rebuilds the confidence radii and the certificate, queries
the active point with the best acquisition score, and replicates active
records whose radius is above the current target. Every ``volume_every``
iterations the active-set volume and the gap proxy are refreshed and the
stopping rule is consulted.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .certificate import (GapReport, Snapshot, beta_target, export_certificate,
                          gap_report)
from .model import (ConfigError, ContractError, NoisyObjective, RunConfig, SampleStore,
                    StoppingRule, stream)
from .volume import (ActiveSetEstimate, EmptyActiveSetError, estimate_active_set,
                     sample_active_pool)

ES_OFFSPRING = 10
ES_STEP0 = 0.2
ES_GROW = 1.5
ES_SHRINK = 0.7


def score(snapshot: Snapshot, x) -> float:
    """``U(x) - L * min_i d(x, x_i)``."""
    return float(snapshot.score(x)[0])


def _better(s1, m1, s2, m2):
    """Lexicographic comparison on (score, min distance)."""
    return (s1 > s2) | ((s1 == s2) & (m1 > m2))


def _evaluate(snapshot: Snapshot, X):
    env, mind, sc = snapshot.terms(X)
    ok = env >= snapshot.level
    if snapshot.boxed:
        ok &= snapshot.in_box(X)
    return np.where(ok, sc, -np.inf), np.where(ok, mind, -np.inf)


def es_maximize(evaluate: Callable, starts, lower, upper, budget: int, rng):
    """Vectorized (1+10) evolution strategy with lexicographic objectives.

    ``evaluate(X)`` returns a pair of arrays (primary key, secondary key);
    ``-inf`` in the primary key marks infeasible points. One chain runs
    from each start; success multiplies the step by 1.5, failure by 0.7.
    Returns ``(point, primary, secondary)`` of the best chain (the earliest
    chain wins exact ties).
    """
    par = np.array(starts, dtype=float, copy=True)
    R, d = par.shape
    span = upper - lower
    ps, pm = evaluate(par)
    step = np.full(R, ES_STEP0)
    gens = max(1, (budget - R) // (R * ES_OFFSPRING))
    rows = np.arange(R)
    for _ in range(gens):
        kids = par[:, None, :] + (step[:, None, None] * span) * rng.standard_normal(
            (R, ES_OFFSPRING, d))
        kids = np.clip(kids, lower, upper)
        ks, km = evaluate(kids.reshape(-1, d))
        ks = ks.reshape(R, ES_OFFSPRING)
        km = km.reshape(R, ES_OFFSPRING)
        top = ks.max(axis=1)
        j = np.argmax(np.where(ks == top[:, None], km, -np.inf), axis=1)
        cs, cm = ks[rows, j], km[rows, j]
        win = _better(cs, cm, ps, pm) & np.isfinite(cs)
        par[win] = kids[rows[win], j[win]]
        ps[win], pm[win] = cs[win], cm[win]
        step = np.where(win, step * ES_GROW, np.maximum(step * ES_SHRINK, 1e-9))
    best = 0
    for r in range(1, R):
        if _better(ps[r], pm[r], ps[best], pm[best]):
            best = r
    return par[best].copy(), float(ps[best]), float(pm[best])


def select_query(snapshot: Snapshot, rng, budget: int = 2000, restarts: int = 10) -> np.ndarray:
    """Approximately maximize the score over the active set.

    The evolution strategy of :func:`es_maximize` runs from ``restarts``
    active starting points; inactive candidates are rejected. Among equal
    scores the candidate farther from the records wins, which makes the
    choice well defined on the plateaus of the score.

    Raises :class:`EmptyActiveSetError` if no active start can be found.
    """
    starts = sample_active_pool(snapshot, restarts, rng)
    x, best, _ = es_maximize(lambda X: _evaluate(snapshot, X), starts,
                             snapshot.lower, snapshot.upper, budget, rng)
    if not math.isfinite(best):
        raise EmptyActiveSetError("maximizer found no active candidate")
    return x


def replication_count(r: float, beta: float) -> int:
    """``ceil((r / beta)^2)``."""
    if not beta > 0.0:
        raise ContractError("replication_count needs beta > 0")
    return max(1, int(math.ceil((r / beta) ** 2)))


def stopping_check(rule: StoppingRule, gap: Optional[GapReport],
                   estimate: Optional[ActiveSetEstimate]) -> bool:
    if rule.kind == "volume-below":
        return estimate is not None and estimate.volume_fraction < rule.threshold
    if rule.kind == "gap-below":
        return gap is not None and gap.eps < rule.threshold
    return False


@dataclass
class TraceRow:
    t: int
    x: tuple
    y: float
    ell: Optional[float]
    beta: Optional[float] = None
    eta_hat: Optional[float] = None
    gamma_hat: Optional[float] = None
    eps: Optional[float] = None
    vol_fraction: Optional[float] = None
    best_mean: float = math.nan
    regret: Optional[float] = None
    cert_valid: Optional[bool] = None


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_header(d: int, with_valid: bool = False) -> list:
    cols = ["t"] + [f"x{k + 1}" for k in range(d)] + [
        "y", "ell", "beta", "eta_hat", "gamma_hat", "eps", "vol_fraction",
        "best_mean", "regret"]
    return cols + (["cert_valid"] if with_valid else [])


def write_trace(path, rows: List[TraceRow], d: int, with_valid: bool = False):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(d, with_valid))
        for r in rows:
            line = [_cell(r.t)] + [_cell(v) for v in r.x] + [
                _cell(v) for v in (r.y, r.ell, r.beta, r.eta_hat, r.gamma_hat,
                                   r.eps, r.vol_fraction, r.best_mean, r.regret)]
            if with_valid:
                line.append(_cell(r.cert_valid))
            w.writerow(line)


def read_trace(path) -> dict:
    """Load a trace CSV into a dict of numpy columns (blanks become NaN)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for k, name in enumerate(header):
        col = [r[k] for r in body]
        if name == "cert_valid":
            out[name] = np.array([c == "true" for c in col])
        else:
            out[name] = np.array([float(c) if c != "" else np.nan for c in col])
    return out


@dataclass
class RunResult:
    best_point: np.ndarray
    best_mean: float
    snapshot: Optional[Snapshot]
    trace: List[TraceRow]
    stop_reason: str
    mode: str = "known-L"
    config: Optional[RunConfig] = None
    regret: Optional[float] = None
    estimate: Optional[ActiveSetEstimate] = None
    gap: Optional[GapReport] = None
    extras: dict = field(default_factory=dict)
    frozen_certificate: Optional[str] = None

    @property
    def evaluations(self) -> int:
        return len(self.trace)

    def summary(self) -> dict:
        """JSON-ready description of the run (excluding the trace)."""
        out = {
            "mode": self.mode,
            "seed": self.config.seed if self.config else None,
            "stop_reason": self.stop_reason,
            "evaluations": self.evaluations,
            "best_point": [float(v) for v in self.best_point],
            "best_mean": float(self.best_mean),
            "regret": None if self.regret is None else float(self.regret),
            "final": {
                "ell": None if self.snapshot is None else self.snapshot.ell,
                "lipschitz": None if self.snapshot is None else self.snapshot.lipschitz,
                "records": None if self.snapshot is None else self.snapshot.N,
                "vol_fraction": None if self.estimate is None else self.estimate.volume_fraction,
                "vol_method": None if self.estimate is None else self.estimate.method,
                "beta": None if self.gap is None else self.gap.beta,
                "eta_hat": None if self.gap is None else self.gap.eta_hat,
                "gamma_hat": None if self.gap is None else self.gap.gamma_hat,
                "eps": None if self.gap is None else self.gap.eps,
            },
        }
        if self.config is not None:
            out["config"] = self.config.to_dict()
        out.update(self.extras)
        return out

    def write(self, run_dir, certificate: Optional[Snapshot] = None):
        """Write ``trace.csv``, ``result.json`` and ``certificate.json``."""
        import os
        os.makedirs(run_dir, exist_ok=True)
        with_valid = any(r.cert_valid is not None for r in self.trace)
        write_trace(os.path.join(run_dir, "trace.csv"), self.trace, len(self.best_point),
                    with_valid)
        with open(os.path.join(run_dir, "result.json"), "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.summary()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.snapshot is not None:
            export_certificate(certificate or self.snapshot,
                               path=os.path.join(run_dir, "certificate.json"))
        if self.frozen_certificate is not None:
            with open(os.path.join(run_dir, "certificate_phase1.json"), "w",
                      encoding="utf-8") as fh:
                fh.write(self.frozen_certificate)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


class CGPRun:
    """Stateful driver of the pruning loop.

    ``step()`` runs one iteration and returns ``False`` once the run has
    ended. ``observer(run, snapshot)`` is called with the post-iteration
    certificate after every iteration (used for audits).

    Subclasses hook into :meth:`after_observations` and
    :meth:`on_empty_active_set`.
    """

    mode = "known-L"

    def __init__(self, objective: NoisyObjective, config: RunConfig,
                 observer: Optional[Callable] = None):
        self.objective = objective
        self.config = config
        self.observer = observer
        self.d = config.dimension
        self.T = config.budget
        self.store = SampleStore(self.d, capacity=min(self.T, 1024))
        self.acq_rng = stream(config.seed, "acquisition")
        self.vol_rng = stream(config.seed, "volume")
        self.init_rng = stream(config.seed, "init")
        self.L = config.lipschitz
        self.trace: List[TraceRow] = []
        self.iteration = 0
        self.stop_reason: Optional[str] = None
        self.estimate: Optional[ActiveSetEstimate] = None
        self.gap: Optional[GapReport] = None
        self.extras: dict = {}

    # -- bookkeeping -----------------------------------------------------------
    @property
    def done(self) -> bool:
        return self.stop_reason is not None

    @property
    def remaining(self) -> int:
        return self.T - self.store.t

    def snapshot(self) -> Snapshot:
        c = self.config
        return Snapshot.from_store(self.store, self.L, c.sigma, c.delta, self.T)

    def observe(self, x) -> tuple:
        """Evaluate the objective once at ``x`` and ingest the result."""
        if self.remaining <= 0:
            raise ContractError("evaluation budget exhausted")
        x = np.asarray(x, dtype=float)
        y = self.objective(x)
        i = self.store.ingest(x, y)
        best = self.store.best_index()
        return (i, x.copy(), y, float(self.store.means[best]), best)

    def emit(self, observations, snapshot: Snapshot, refreshed: bool = False):
        regret_known = (self.objective.truth is not None
                        and self.objective.metadata.f_star is not None)
        t0 = self.store.t - len(observations)
        for k, (_, x, y, best_mean, best) in enumerate(observations):
            regret = None
            if regret_known:
                regret = self.objective.regret(self.store.locations[best])
            row = TraceRow(t=t0 + k + 1, x=tuple(float(v) for v in x), y=y,
                           ell=snapshot.ell, best_mean=best_mean, regret=regret)
            if refreshed:
                if self.gap is not None:
                    row.beta, row.eta_hat = self.gap.beta, self.gap.eta_hat
                    row.gamma_hat, row.eps = self.gap.gamma_hat, self.gap.eps
                if self.estimate is not None:
                    row.vol_fraction = self.estimate.volume_fraction
            self.trace.append(row)

    # -- algorithm -------------------------------------------------------------
    def initialize(self):
        x = self.init_rng.random(self.d)
        obs = [self.observe(x)]
        self.emit(obs, self.snapshot())

    def replicate(self, snapshot: Snapshot) -> list:
        """Extra observations at active records with radius above target."""
        c = self.config
        if c.sigma <= 0.0 or self.remaining <= 0:
            return []
        beta = beta_target(self.store.t, c.sigma, self.T, c.delta)
        cap = int(math.floor(c.replication_cap * self.remaining))
        if cap <= 0:
            return []
        active = snapshot.is_active(snapshot.locations) & (snapshot.radii > beta)
        order = [i for i in np.argsort(-snapshot.ucb, kind="stable") if active[i]]
        out = []
        for i in order:
            k = min(replication_count(float(snapshot.radii[i]), beta), cap - len(out))
            x = snapshot.locations[i].copy()
            for _ in range(k):
                out.append(self.observe(x))
            if len(out) >= cap:
                break
        return out

    def local_view(self, snapshot: Snapshot) -> Snapshot:
        """Certificate used for selection and replication (global here)."""
        return snapshot

    def iterate(self, snapshot: Snapshot) -> list:
        """Select, observe, replicate. Returns the iteration's observations."""
        c = self.config
        x = select_query(snapshot, self.acq_rng, c.maximizer_budget, c.restarts)
        obs = [self.observe(x)]
        post = self.snapshot()
        if snapshot.boxed:
            post = post.local(snapshot.lower, snapshot.upper)
        obs += self.replicate(post)
        return obs

    def after_observations(self, observations) -> None:
        """Hook run after each iteration's observations are ingested."""

    def on_empty_active_set(self, error: EmptyActiveSetError) -> bool:
        """Return True to continue after an empty active set, False to stop."""
        return False

    def refresh(self, snapshot: Snapshot) -> None:
        c = self.config
        self.estimate, self.gap = None, None
        try:
            if c.volume.method == "none" or (c.volume.method == "auto" and self.d > 10):
                pool = sample_active_pool(snapshot, c.volume.pool_size, self.vol_rng)
            else:
                self.estimate = estimate_active_set(snapshot, c.volume, self.vol_rng)
                pool = self.estimate.member_pool
                if not len(pool):
                    # the set can be narrower than the grid spacing; chains still find it
                    pool = sample_active_pool(snapshot, c.volume.pool_size, self.vol_rng)
            if len(pool):
                self.gap = gap_report(snapshot, pool)
        except EmptyActiveSetError:
            pass

    def step(self) -> bool:
        if self.done:
            return False
        if self.store.t == 0:
            self.initialize()
            return self._check_budget()
        if not self._check_budget():
            return False
        snapshot = self.snapshot()
        try:
            obs = self.iterate(self.local_view(snapshot))
        except EmptyActiveSetError as err:
            if self.on_empty_active_set(err):
                return not self.done
            self.stop_reason = "anomaly"
            return False
        self.iteration += 1
        self.after_observations(obs)
        post = self.snapshot()
        refreshed = self.iteration % self.config.volume_every == 0
        if refreshed:
            self.refresh(post)
        self.emit(obs, post, refreshed)
        if self.observer is not None:
            self.observer(self, post)
        if refreshed and stopping_check(self.config.stopping, self.gap, self.estimate):
            self.stop_reason = ("volume-threshold" if self.config.stopping.kind == "volume-below"
                                else "gap-threshold")
            return False
        return self._check_budget()

    def _check_budget(self) -> bool:
        if self.remaining <= 0:
            self.stop_reason = "budget"
            return False
        return True

    def run(self) -> RunResult:
        while self.step():
            pass
        return self.result()

    def final_snapshot(self) -> Snapshot:
        return self.snapshot()

    def result(self) -> RunResult:
        snap = self.final_snapshot()
        if self.config.volume.method != "none" and not (
                self.config.volume.method == "auto" and self.d > 10):
            last = self.trace[-1] if self.trace else None
            if last is None or last.vol_fraction is None:
                self.refresh(snap)
        best = self.store.best_index()
        x = self.store.locations[best].copy()
        extras = dict(self.extras)
        if self.objective.metadata.f_star is not None:
            extras["gamma_true"] = float(self.objective.metadata.f_star - snap.ell)
        return RunResult(best_point=x, best_mean=float(self.store.means[best]),
                         snapshot=snap, trace=self.trace, stop_reason=self.stop_reason,
                         mode=self.mode, config=self.config,
                         regret=self.objective.regret(x), estimate=self.estimate,
                         gap=self.gap, extras=extras)


def cgp_run(objective: NoisyObjective, config: RunConfig,
            observer: Optional[Callable] = None) -> RunResult:
    """Run known-L certificate-guided pruning to budget or stopping rule."""
    if config.mode != "known-L":
        raise ConfigError(f"cgp_run needs mode 'known-L', got {config.mode!r}")
    return CGPRun(objective, config, observer).run()

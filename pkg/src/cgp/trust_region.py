"""Trust regions with local certificates and certified restarts.

Each region is an axis-aligned cube of half-width ``r_j`` around a fixed
center, clipped to the unit cube. Every iteration visits the region whose
envelope maximum ``u_j`` is largest and performs one pruning step inside
it, using the region's own lower certificate. A region is abandoned only
when ``u_j`` drops below the global lower certificate, i.e. when it
provably cannot contain a maximizer.
"""
from __future__ import annotations

import dataclasses
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.stats import qmc

from .certificate import Snapshot
from .core import CGPRun, RunResult, es_maximize
from .model import ConfigError, NoisyObjective, RunConfig, TrustRegionParams, stream

IMPROVEMENT_TOL = 1e-9
CORNER_MAX_DIM = 10


@dataclass
class TrustRegion:
    id: int
    center: np.ndarray
    radius: float
    fails: int = 0
    restarts: int = 0
    visits: int = 0
    best_mean: float = -math.inf
    local_ell: float = -math.inf
    radius_history: List[float] = field(default_factory=list)
    restart_log: List[dict] = field(default_factory=list)

    def box(self):
        lo = np.clip(self.center - self.radius, 0.0, 1.0)
        hi = np.clip(self.center + self.radius, 0.0, 1.0)
        return lo, hi

    def contains(self, X) -> np.ndarray:
        lo, hi = self.box()
        X = np.atleast_2d(X)
        return np.all((X >= lo) & (X <= hi), axis=1)

    def to_dict(self) -> dict:
        lo, hi = self.box()
        return {"id": self.id, "center": [float(v) for v in self.center],
                "radius": self.radius, "lower": [float(v) for v in lo],
                "upper": [float(v) for v in hi], "restarts": self.restarts,
                "visits": self.visits, "local_ell": self.local_ell,
                "best_mean": self.best_mean, "radius_history": list(self.radius_history),
                "restart_log": list(self.restart_log)}


def box_corners(lo, hi) -> np.ndarray:
    d = lo.shape[0]
    return np.array([[hi[k] if bit else lo[k] for k, bit in enumerate(bits)]
                     for bits in itertools.product((0, 1), repeat=d)])


def region_upper_bound(snapshot: Snapshot, lower, upper, rng, budget: int = 500,
                       restarts: int = 10) -> float:
    """Approximate ``max U(x)`` over the box ``[lower, upper]``.

    The evolution strategy runs from ``restarts`` uniform starts in the box;
    the result is then maxed with the envelope at exact candidates: the box
    center, its corners (for ``d <= 10``) and the records inside the box.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.shape[0]
    starts = lower + rng.random((restarts, d)) * (upper - lower)
    zeros = np.zeros

    def env(X):
        return snapshot.envelope(X), zeros(X.shape[0])

    _, best, _ = es_maximize(env, starts, lower, upper, budget, rng)
    cands = [0.5 * (lower + upper)[None, :]]
    if d <= CORNER_MAX_DIM:
        cands.append(box_corners(lower, upper))
    inside = np.all((snapshot.locations >= lower) & (snapshot.locations <= upper), axis=1)
    cands.append(snapshot.locations[inside])
    return max(best, float(snapshot.envelope(np.vstack(cands)).max()))


def certified_restart_check(u_j: float, ell: float) -> bool:
    """Restart only when the region's envelope maximum is below ``ell``."""
    return u_j < ell


def update_radius(region: TrustRegion, event: str, params: TrustRegionParams, d: int,
                  new_center=None, t: Optional[int] = None) -> TrustRegion:
    """Radius dynamics: ``success``, ``failure`` or ``restart``.

    Radii stay in ``[r_min, sqrt(d) / 2]``. Failures contract the radius
    once ``tau_fail`` of them have accumulated.
    """
    cap = 0.5 * math.sqrt(d)
    r = dataclasses.replace(region, radius_history=list(region.radius_history),
                            restart_log=list(region.restart_log))
    if event == "success":
        r.radius = min(2.0 * r.radius, cap)
        r.fails = 0
    elif event == "failure":
        r.fails += 1
        if r.fails >= params.tau_fail:
            r.radius = max(0.5 * r.radius, params.r_min)
            r.fails = 0
    elif event == "restart":
        if new_center is None:
            raise ValueError("restart needs a new center")
        lo, hi = r.box()
        r.restart_log.append({"t": t, "old_center": [float(v) for v in r.center],
                              "old_lower": [float(v) for v in lo],
                              "old_upper": [float(v) for v in hi]})
        r.center = np.asarray(new_center, dtype=float)
        r.radius = min(max(params.r0, params.r_min), cap)
        r.fails = 0
        r.restarts += 1
        r.best_mean = -math.inf
    else:
        raise ValueError(f"unknown radius event {event!r}")
    r.radius_history.append(r.radius)
    return r


class TrustRegionRun(CGPRun):
    """Pruning restricted to one trust region per iteration."""

    mode = "trust-region"

    def __init__(self, objective: NoisyObjective, config: RunConfig,
                 observer: Optional[Callable] = None):
        super().__init__(objective, config, observer)
        self.params = config.trust
        self.region_rng = stream(config.seed, "regions")
        self._sobol = qmc.Sobol(d=self.d, scramble=True, seed=self.region_rng)
        self.regions: List[TrustRegion] = []
        self.last_upper: List[float] = []

    def _next_center(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            return self._sobol.random(1)[0]

    def _local_stats(self, region: TrustRegion):
        inside = region.contains(self.store.locations)
        if not inside.any():
            return -math.inf
        return float(self.store.means[inside].max())

    def initialize(self):
        p = self.params
        cap = 0.5 * math.sqrt(self.d)
        obs = []
        for j in range(p.n_trust):
            c = self._next_center()
            reg = TrustRegion(j, c, min(max(p.r0, p.r_min), cap))
            reg.radius_history.append(reg.radius)
            self.regions.append(reg)
            if self.remaining > 0:
                obs.append(self.observe(c))
        snap = self.snapshot()
        for reg in self.regions:
            reg.best_mean = self._local_stats(reg)
        self.emit(obs, snap)

    def upper_bounds(self, snapshot: Snapshot) -> List[float]:
        p = self.params
        return [region_upper_bound(snapshot, *reg.box(), self.acq_rng, p.region_budget,
                                   self.config.restarts) for reg in self.regions]

    def step(self) -> bool:
        if self.done or self.store.t == 0:
            return super().step()
        snapshot = self.snapshot()
        self.last_upper = self.upper_bounds(snapshot)
        self.current = int(np.argmax(self.last_upper))
        return super().step()

    def local_view(self, snapshot: Snapshot) -> Snapshot:
        return snapshot.local(*self.regions[self.current].box())

    def after_observations(self, observations) -> None:
        j = self.current
        reg = self.regions[j]
        reg.visits += 1
        post = self.snapshot()
        local = post.local(*reg.box())
        reg.local_ell = local.ell
        u_j = region_upper_bound(post, *reg.box(), self.acq_rng, self.params.region_budget,
                                 self.config.restarts)
        if certified_restart_check(u_j, post.ell):
            new = update_radius(reg, "restart", self.params, self.d,
                                new_center=self._next_center(), t=self.store.t)
            new.visits = reg.visits
            new.local_ell = post.local(*new.box()).ell
            new.best_mean = self._local_stats(new)
        else:
            best = self._local_stats(reg)
            improved = best > reg.best_mean + IMPROVEMENT_TOL
            new = update_radius(reg, "success" if improved else "failure", self.params, self.d)
            new.best_mean = max(best, reg.best_mean)
        self.regions[j] = new

    def winning_region(self) -> int:
        stats = [self._local_stats(r) for r in self.regions]
        return int(np.argmax(stats))

    def final_snapshot(self) -> Snapshot:
        return self.snapshot().local(*self.regions[self.winning_region()].box())

    def result(self) -> RunResult:
        res = super().result()
        res.extras["regions"] = [r.to_dict() for r in self.regions]
        res.extras["winning_region"] = self.winning_region()
        return res


def tr_run(objective: NoisyObjective, config: RunConfig,
           observer: Optional[Callable] = None) -> RunResult:
    """Run the trust-region variant; the result's snapshot is the winning
    region's local certificate."""
    if config.mode != "trust-region":
        raise ConfigError(f"tr_run needs mode 'trust-region', got {config.mode!r}")
    return TrustRegionRun(objective, config, observer).run()


def region_visit_audit(regions: List[dict], region_sup: Callable, f_star: float) -> List[dict]:
    """Per-region visit counts and gaps ``f* - sup_{region} f``.

    ``region_sup(lower, upper)`` must return the supremum of ``f`` over the
    box (for example from a grid oracle).
    """
    out = []
    for r in regions:
        sup = region_sup(np.asarray(r["lower"]), np.asarray(r["upper"]))
        out.append({"id": r["id"], "visits": r["visits"], "gap": max(0.0, f_star - sup)})
    return out

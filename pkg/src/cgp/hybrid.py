"""Two-phase optimization: certificate-guided pruning, then optionally GP-UCB
restricted to the pruned region.

Phase 1 runs the plain pruning loop until the active set is small or a
fixed share of the budget is spent. The certificate at that moment is
frozen. If the objective looks much smoother near the optimum than
globally (local-to-global Lipschitz ratio below a threshold), phase 2
switches to GP-UCB over active points of the frozen certificate;
otherwise pruning simply continues. Either way the frozen certificate
remains valid, since it depends only on phase-1 data.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .certificate import Snapshot, export_certificate
from .core import CGPRun, RunResult
from .gp import GpError, gp_fit, gp_ucb_select
from .model import ConfigError, ContractError, NoisyObjective, RunConfig, SampleStore, stream
from .volume import EmptyActiveSetError, sample_active_pool

RETRY_ITERATIONS = 10
GP_POOL = 512
GP_MAX_TRAIN = 500
MLE_EVERY = 20
DENSE_REFIT_UNTIL = 200
SPARSE_REFIT_EVERY = 5


class LocalLipschitzUnavailable(ContractError):
    """Fewer than two records support the active set."""


def supporting_records(snapshot: Snapshot, pool=None) -> np.ndarray:
    """Records describing the objective around the active set.

    Starts from the active records and the nearest record of every active
    pool point, then takes every record within the smallest ball around
    the incumbent (best-LCB record) that holds all of them and at least
    ``d + 1`` further records. Without noise a record is active only if it
    attains the best value, hence the widening.
    """
    X = snapshot.locations
    keep = snapshot.is_active(X)
    if pool is not None and len(pool):
        pool = np.atleast_2d(pool)
        d2 = ((pool[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
        keep[np.unique(np.argmin(d2, axis=1))] = True
    best = snapshot.best_lcb_index
    dist = np.sqrt(((X - X[best]) ** 2).sum(axis=1))
    radius = float(dist[keep].max()) if keep.any() else 0.0
    order = np.sort(dist)
    radius = max(radius, float(order[min(snapshot.d + 1, len(order) - 1)]))
    return np.nonzero(dist <= radius)[0]


def local_lipschitz(store: SampleStore, snapshot: Snapshot, pool=None) -> float:
    """Noise-deflated difference quotient over pairs of supporting records.

    ``max (|mu_i - mu_j| - (r_i + r_j))_+ / d(x_i, x_j)`` over pairs from
    :func:`supporting_records`, 0 when no pair has a positive numerator.
    """
    act = supporting_records(snapshot, pool)
    if act.shape[0] < 2:
        raise LocalLipschitzUnavailable("need at least two records around the active set")
    X = snapshot.locations[act]
    mu = snapshot.means[act]
    r = snapshot.radii[act]
    iu, ju = np.triu_indices(act.shape[0], k=1)
    dist = np.sqrt(((X[iu] - X[ju]) ** 2).sum(axis=1))
    num = np.maximum(np.abs(mu[iu] - mu[ju]) - (r[iu] + r[ju]), 0.0)
    ok = dist > 0
    if not ok.any():
        return 0.0
    return float((num[ok] / dist[ok]).max())


def smoothness_ratio(l_local: float, l_global: float) -> float:
    if not l_global > 0:
        raise ContractError("global Lipschitz estimate must be > 0")
    return max(0.0, l_local / l_global)


@dataclass
class HybridDecision:
    t_switch: Optional[int]
    rho_hat: Optional[float]
    phase2: str
    frozen_certificate: str
    frozen_snapshot: Snapshot
    l_local: Optional[float] = None
    l_global: Optional[float] = None

    def to_dict(self) -> dict:
        return {"t_switch": self.t_switch, "rho_hat": self.rho_hat, "phase2": self.phase2,
                "l_local": self.l_local, "l_global": self.l_global}


class HybridRun:
    """Drives a :class:`CGPRun` through phase 1 and the chosen phase 2."""

    def __init__(self, objective: NoisyObjective, config: RunConfig,
                 observer: Optional[Callable] = None, phase_one: Optional[CGPRun] = None):
        self.config = config
        self.cgp = phase_one or CGPRun(objective, config, observer)
        self.gp_rng = stream(config.seed, "gp")
        self.decision: Optional[HybridDecision] = None
        self.phase2_queries = []

    def _phase1_over(self) -> bool:
        h = self.config.hybrid
        est = self.cgp.estimate
        if est is not None and est.volume_fraction < h.phase1_volume:
            return True
        return self.cgp.store.t > h.phase1_fraction * self.config.budget

    def _freeze(self) -> Tuple[Snapshot, str]:
        snap = self.cgp.snapshot()
        return snap, export_certificate(snap)

    def run(self) -> Tuple[RunResult, HybridDecision]:
        cgp = self.cgp
        alive = True
        while alive and not self._phase1_over():
            alive = cgp.step()
        snap, text = self._freeze()
        rho, l_local = None, None
        retries = 0
        while alive:
            try:
                pool = sample_active_pool(snap, GP_POOL, self.gp_rng)
                l_local = local_lipschitz(cgp.store, snap, pool)
                rho = smoothness_ratio(l_local, cgp.L)
                break
            except (LocalLipschitzUnavailable, EmptyActiveSetError):
                if retries == 1:
                    warnings.warn("local Lipschitz estimate unavailable; continuing with pruning",
                                  RuntimeWarning)
                    break
                retries += 1
                for _ in range(RETRY_ITERATIONS):
                    alive = cgp.step()
                    if not alive:
                        break
                snap, text = self._freeze()
        phase2 = "cgp"
        if rho is not None and rho < self.config.hybrid.rho_thresh:
            phase2 = "gp"
        t_switch = cgp.store.t if alive else None
        if not alive:
            phase2 = "none"
        self.decision = HybridDecision(t_switch, rho, phase2, text, snap, l_local, cgp.L)
        if phase2 == "gp":
            self._gp_phase(snap)
        elif phase2 == "cgp":
            while cgp.step():
                pass
        res = cgp.result()
        res.mode = "hybrid"
        res.extras["hybrid"] = self.decision.to_dict()
        res.frozen_certificate = text
        return res, self.decision

    def _gp_phase(self, frozen: Snapshot) -> None:
        cgp = self.cgp
        c = self.config
        store = cgp.store
        model = None
        hypers = None
        last_mle = -math.inf
        since_fit = 0
        while cgp.remaining > 0:
            act = np.nonzero(frozen.is_active(store.locations))[0]
            if act.shape[0] > GP_MAX_TRAIN:
                act = act[np.argsort(-store.counts[act], kind="stable")[:GP_MAX_TRAIN]]
            n_obs = int(store.counts[act].sum())
            X = store.locations[act]
            y = store.means[act]
            noise = (c.sigma ** 2) / store.counts[act]
            refit = model is None or act.shape[0] <= DENSE_REFIT_UNTIL \
                or since_fit >= SPARSE_REFIT_EVERY
            if refit:
                try:
                    if hypers is None or n_obs - last_mle >= MLE_EVERY:
                        model = gp_fit(X, y, noise, mode="mle", center=True)
                        hypers = (model.lengthscale, model.signal_var)
                        last_mle = n_obs
                    else:
                        model = gp_fit(X, y, noise, mode="fixed", lengthscale=hypers[0],
                                       signal_var=hypers[1], center=True)
                except GpError:
                    warnings.warn("GP factorization failed; finishing with pruning",
                                  RuntimeWarning)
                    break
                since_fit = 0
            since_fit += 1
            try:
                pool = sample_active_pool(frozen, GP_POOL, self.gp_rng)
            except EmptyActiveSetError:
                break
            x = gp_ucb_select(model, store.t + 1, c.delta, pool)
            obs = cgp.observe(x)
            self.phase2_queries.append(obs[1])
            cgp.emit([obs], cgp.snapshot())
        while cgp.step():
            pass


def hybrid_run(objective: NoisyObjective, config: RunConfig,
               observer: Optional[Callable] = None) -> Tuple[RunResult, HybridDecision]:
    if config.mode != "hybrid":
        raise ConfigError(f"hybrid_run needs mode 'hybrid', got {config.mode!r}")
    return HybridRun(objective, config, observer).run()

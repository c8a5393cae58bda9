"""Reference optimizers: Sobol random search and GP-UCB on a Sobol grid."""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.stats import qmc

from ..core import RunResult, TraceRow
from ..gp import MAX_TRAIN, gp_fit, gp_ucb_select
from ..model import ConfigError, NoisyObjective, SampleStore, stream

GP_WARM = 5
GP_CANDIDATES = 4096
GP_MLE_EVERY = 20


def _sobol(d: int, n: int, rng) -> np.ndarray:
    engine = qmc.Sobol(d=d, scramble=True, seed=rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(n)


def _row(objective: NoisyObjective, store: SampleStore, x, y) -> TraceRow:
    best = store.best_index()
    return TraceRow(t=store.t, x=tuple(float(v) for v in x), y=y, ell=None,
                    best_mean=float(store.means[best]),
                    regret=objective.regret(store.locations[best]))


def _result(objective, store, trace, mode, seed, T) -> RunResult:
    best = store.best_index()
    x = store.locations[best].copy()
    return RunResult(best_point=x, best_mean=float(store.means[best]), snapshot=None,
                     trace=trace, stop_reason="budget", mode=mode, config=None,
                     regret=objective.regret(x), extras={"seed": seed, "budget": T})


def random_baseline(objective: NoisyObjective, T: int, seed: int, d: int) -> RunResult:
    """Evaluate ``T`` scrambled Sobol points; return the best observed one."""
    if T < 1:
        raise ConfigError("random baseline needs T >= 1")
    store = SampleStore(d, capacity=T)
    trace = []
    for x in _sobol(d, T, stream(seed, "baseline")):
        y = objective(x)
        store.ingest(x, y)
        trace.append(_row(objective, store, x, y))
    return _result(objective, store, trace, "random", seed, T)


def gp_ucb_baseline(objective: NoisyObjective, T: int, delta: float, seed: int, d: int,
                    sigma: float = 0.0) -> RunResult:
    """GP-UCB over a fixed Sobol candidate set.

    Five Sobol warm points, then the candidate maximizing the GP upper
    confidence bound. Repeated locations are pooled (mean target, noise
    variance ``sigma^2 / n``). Hyperparameters are refit by marginal
    likelihood every 20 observations and held fixed in between.
    """
    if T > MAX_TRAIN:
        raise ConfigError(f"gp-ucb baseline limited to T <= {MAX_TRAIN}")
    if T < 1:
        raise ConfigError("gp-ucb baseline needs T >= 1")
    rng = stream(seed, "baseline")
    warm = _sobol(d, GP_WARM, rng)
    cands = _sobol(d, GP_CANDIDATES, rng)
    store = SampleStore(d, capacity=T)
    trace = []
    hypers = None
    last_mle = -math.inf
    refits = []
    for x in warm[:T]:
        y = objective(x)
        store.ingest(x, y)
        trace.append(_row(objective, store, x, y))
    while store.t < T:
        noise = sigma ** 2 / store.counts
        if hypers is None or store.t - last_mle >= GP_MLE_EVERY:
            model = gp_fit(store.locations, store.means, noise, mode="mle", center=True)
            hypers = (model.lengthscale, model.signal_var)
            last_mle = store.t
            refits.append({"t": store.t, "lengthscale": hypers[0], "signal_var": hypers[1]})
        else:
            model = gp_fit(store.locations, store.means, noise, mode="fixed",
                           lengthscale=hypers[0], signal_var=hypers[1], center=True)
        x = gp_ucb_select(model, store.t + 1, delta, cands)
        y = objective(x)
        store.ingest(x, y)
        trace.append(_row(objective, store, x, y))
    res = _result(objective, store, trace, "gp-ucb", seed, T)
    res.extras["gp_refits"] = refits
    return res

"""Online Lipschitz-constant learning by violation-triggered doubling.

Whenever two well-sampled records disagree by more than the current
constant allows (after removing their confidence radii), the constant is
doubled. An empty active set is treated as the same kind of evidence.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .certificate import Snapshot
from .core import CGPRun, RunResult
from .model import (ConfigError, ContractError, NoisyObjective, RunConfig, SampleStore,
                    distance, sobol_init)
from .volume import EmptyActiveSetError

MAX_DOUBLINGS = 64
LIPSCHITZ_FLOOR = 1e-3


def count_threshold(T: int, delta: float, sigma: Optional[float] = None) -> int:
    """Minimum count for a record to take part in violation tests.

    ``ceil(ln(T / delta))``; with noise-free observations (``sigma == 0``)
    a single observation is exact and the threshold is 1.
    """
    if sigma is not None and sigma == 0.0:
        return 1
    return int(math.ceil(math.log(T / delta)))


def eligible_pairs(store: SampleStore, T: int, delta: float,
                   sigma: Optional[float] = None, among=None) -> List[Tuple[int, int]]:
    """Unordered record pairs whose counts both reach :func:`count_threshold`.

    ``among`` restricts the scan to pairs containing at least one of the
    given record indices.
    """
    if store.N == 0:
        raise ContractError("eligible_pairs needs a non-empty store")
    k = count_threshold(T, delta, sigma)
    ok = np.nonzero(store.counts >= k)[0].tolist()
    if among is None:
        return list(itertools.combinations(ok, 2))
    okset = set(ok)
    fresh = sorted(i for i in set(among) if i in okset)
    pairs = set()
    for i in fresh:
        for j in ok:
            if j != i:
                pairs.add((min(i, j), max(i, j)))
    return sorted(pairs)


def detect_violation(snapshot: Snapshot, lipschitz: float, pair) -> bool:
    """``|mu_i - mu_j| - 2 (r_i + r_j) > L d(x_i, x_j)`` (strict)."""
    i, j = pair
    dist = distance(snapshot.locations[i], snapshot.locations[j])
    if dist == 0.0:
        raise ContractError("violation test needs distinct locations")
    lhs = abs(snapshot.means[i] - snapshot.means[j]) - 2.0 * (snapshot.radii[i] + snapshot.radii[j])
    return bool(lhs > lipschitz * dist)


@dataclass
class DoublingEvent:
    t: int
    pair: Optional[Tuple[int, int]]
    before: float
    after: float
    reason: str = "violation"


@dataclass
class DoublingLog:
    initial: float
    events: List[DoublingEvent] = field(default_factory=list)

    @property
    def final(self) -> float:
        return self.events[-1].after if self.events else self.initial

    @property
    def count(self) -> int:
        return len(self.events)

    def to_list(self) -> list:
        return [{"t": e.t, "pair": None if e.pair is None else list(e.pair),
                 "before": e.before, "after": e.after, "reason": e.reason}
                for e in self.events]


def init_lipschitz(objective: NoisyObjective, d: int, k: int = 10, seed: int = 0,
                   store: Optional[SampleStore] = None) -> float:
    """Largest pairwise difference quotient over ``k`` Sobol warm samples.

    Observations are ingested into ``store`` when given. Returns
    ``LIPSCHITZ_FLOOR`` (with a warning) if every quotient is zero.
    """
    if k < 2:
        raise ConfigError("init_lipschitz needs at least 2 warm samples")
    X = sobol_init(d, k, seed)
    y = []
    for x in X:
        v = objective(x)
        y.append(v)
        if store is not None:
            store.ingest(x, v)
    return max_quotient(X, y)


def max_quotient(X, y) -> float:
    """Largest ``|y_i - y_j| / d(x_i, x_j)``, floored at ``LIPSCHITZ_FLOOR``."""
    best = 0.0
    for i in range(len(y)):
        for j in range(i + 1, len(y)):
            dist = distance(X[i], X[j])
            if dist > 0.0:
                best = max(best, abs(y[i] - y[j]) / dist)
    if best <= 0.0:
        warnings.warn("warm samples are all equal; using the Lipschitz floor", RuntimeWarning)
        return LIPSCHITZ_FLOOR
    return best


class AdaptiveRun(CGPRun):
    """Pruning loop with a doubling Lipschitz estimate."""

    mode = "adaptive"

    def __init__(self, objective: NoisyObjective, config: RunConfig,
                 observer: Optional[Callable] = None):
        super().__init__(objective, config, observer)
        self.log: Optional[DoublingLog] = None
        if config.lipschitz is not None:
            self.log = DoublingLog(initial=float(config.lipschitz))

    def initialize(self):
        c = self.config
        if c.lipschitz is not None:
            return super().initialize()
        k = min(c.warm_samples, self.T)
        seed = int(self.init_rng.integers(0, 2 ** 63))
        obs = []
        X = sobol_init(self.d, k, seed)
        ys = []
        for x in X:
            obs.append(self.observe(x))
            ys.append(obs[-1][2])
        self.L = max_quotient(X, ys) if k >= 2 else LIPSCHITZ_FLOOR
        self.log = DoublingLog(initial=self.L)
        self.emit(obs, self.snapshot())

    def _double(self, pair, reason) -> bool:
        before = self.L
        self.L = 2.0 * before
        self.log.events.append(DoublingEvent(self.store.t, pair, before, self.L, reason))
        if self.log.count > MAX_DOUBLINGS:
            self.stop_reason = "anomaly"
            return False
        return True

    def after_observations(self, observations) -> None:
        fresh = {o[0] for o in observations}
        c = self.config
        pairs = eligible_pairs(self.store, self.T, c.delta, c.sigma, among=fresh)
        if not pairs:
            return
        snap = self.snapshot()
        while True:
            hit = next((p for p in pairs if detect_violation(snap, self.L, p)), None)
            if hit is None or not self._double(hit, "violation"):
                return

    def on_empty_active_set(self, error: EmptyActiveSetError) -> bool:
        return self._double(None, "empty-active-set")

    def result(self) -> RunResult:
        res = super().result()
        last = self.log.events[-1].t if self.log.events else 0
        for row in res.trace:
            row.cert_valid = row.t > last
        res.extras["doubling_events"] = self.log.to_list()
        res.extras["lipschitz_initial"] = self.log.initial
        res.extras["lipschitz_final"] = self.L
        res.extras["valid_from_t"] = last + 1
        return res


def adaptive_run(objective: NoisyObjective, config: RunConfig,
                 observer: Optional[Callable] = None) -> Tuple[RunResult, DoublingLog]:
    """Run the doubling variant; returns the result and the doubling log."""
    if config.mode != "adaptive":
        raise ConfigError(f"adaptive_run needs mode 'adaptive', got {config.mode!r}")
    run = AdaptiveRun(objective, config, observer)
    res = run.run()
    return res, run.log

"""Volume of the active set and pools of active points.

Two estimators are provided:

* :func:`grid_volume` counts active nodes of a regular grid (cell centers),
  exact up to the grid resolution and practical for ``d <= 5``;
* :func:`nested_volume` is an adaptive subset-simulation estimator. The
  active set is reached through a chain of nested superlevel sets of
  ``U(x) - ell``, each level populated by hit-and-run chains.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from ._kernels_py import hit_and_run_member_chains
from .certificate import Snapshot
from .model import ContractError, VolumeSpec

MAX_GRID_NODES = 10 ** 7
CHORD_TOL = 1e-6
CHORD_RETRIES = 32
MAX_LEVELS = 60


class EmptyActiveSetError(ContractError):
    """No active point could be found; usually a sign that L is too small."""

    anomaly = True


@dataclass
class ActiveSetEstimate:
    """Estimated volume fraction of the active set plus a pool of members.

    ``log_volume_ci`` is ``(-inf, -inf)`` when the estimate is zero.
    """

    volume_fraction: float
    log_volume_ci: tuple
    member_pool: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    anomaly: bool = False

    @property
    def ci(self):
        return tuple(math.exp(v) if v > -math.inf else 0.0 for v in self.log_volume_ci)


def default_grid_points(d: int) -> int:
    if d <= 3:
        return 100
    if d == 4:
        return 32
    return 24


def grid_nodes(d: int, points_per_axis: int, lower=None, upper=None) -> np.ndarray:
    """Cell-center nodes of a ``points_per_axis^d`` grid over a box."""
    lower = np.zeros(d) if lower is None else np.asarray(lower, dtype=float)
    upper = np.ones(d) if upper is None else np.asarray(upper, dtype=float)
    axes = [lower[k] + (np.arange(points_per_axis) + 0.5) / points_per_axis
            * (upper[k] - lower[k]) for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def grid_volume(snapshot: Snapshot, points_per_axis: Optional[int] = None,
                pool_size: Optional[int] = None, rng=None) -> ActiveSetEstimate:
    """Fraction of grid nodes (inside the snapshot's box) that are active.

    The pool holds all active nodes unless ``pool_size`` is given, in which
    case a random subset of that size is kept (``rng`` required).
    """
    d = snapshot.d
    if d > 5:
        raise ContractError("grid_volume supports d <= 5; use nested_volume instead")
    n = default_grid_points(d) if points_per_axis is None else int(points_per_axis)
    if n < 1:
        raise ContractError("points_per_axis must be >= 1")
    if n ** d > MAX_GRID_NODES:
        raise ContractError(
            f"{n}^{d} grid nodes exceed {MAX_GRID_NODES}; lower points_per_axis "
            "or use nested_volume")
    nodes = grid_nodes(d, n, snapshot.lower, snapshot.upper)
    active = snapshot.is_active(nodes)
    frac = float(active.mean())
    pool = nodes[active]
    if pool_size is not None and pool.shape[0] > pool_size:
        keep = np.sort(rng.choice(pool.shape[0], size=pool_size, replace=False))
        pool = pool[keep]
    logv = math.log(frac) if frac > 0 else -math.inf
    return ActiveSetEstimate(frac, (logv, logv), pool, "grid",
                             {"points_per_axis": n}, anomaly=frac == 0.0)


# -- hit-and-run ------------------------------------------------------------------

def random_directions(rng, shape, d) -> np.ndarray:
    u = rng.standard_normal(tuple(shape) + (d,))
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


def hit_and_run_step(current, member: Callable, rng=None, *, direction=None,
                     draws=None, lower=None, upper=None, tol=CHORD_TOL):
    """One hit-and-run move from ``current`` inside ``member``.

    Parameters
    ----------
    current : array_like
        A member point.
    member : callable
        Maps an ``(m, d)`` array to a boolean array.
    rng : numpy.random.Generator, optional
        Source of the direction and of the uniform positions on the chord.
        Not needed when both ``direction`` and ``draws`` are given.
    direction, draws : optional
        Fix the direction and the uniform chord positions (up to 32 retries).
    """
    x = np.asarray(current, dtype=float).reshape(1, -1)
    d = x.shape[1]
    u = random_directions(rng, (1, 1), d) if direction is None else \
        np.asarray(direction, dtype=float).reshape(1, 1, d)
    if draws is None:
        w = rng.random((1, 1, CHORD_RETRIES))
    else:
        w = np.asarray(draws, dtype=float).reshape(1, 1, -1)
    lo = np.zeros(d) if lower is None else np.asarray(lower, dtype=float)
    hi = np.ones(d) if upper is None else np.asarray(upper, dtype=float)
    return hit_and_run_member_chains(member, x, u, w, lo, hi, tol)[0, 0]


def _envelope_chains(snapshot: Snapshot, starts, level, steps, rng):
    dirs = random_directions(rng, (starts.shape[0], steps), snapshot.d)
    draws = rng.random((starts.shape[0], steps, CHORD_RETRIES))
    return kernels.hit_and_run_chains(starts, dirs, draws, snapshot.locations,
                                      snapshot.ucb, snapshot.lipschitz, level,
                                      snapshot.lower, snapshot.upper, CHORD_TOL)


def _generic_chains(member, starts, lower, upper, steps, rng):
    d = starts.shape[1]
    dirs = random_directions(rng, (starts.shape[0], steps), d)
    draws = rng.random((starts.shape[0], steps, CHORD_RETRIES))
    return hit_and_run_member_chains(member, starts, dirs, draws, lower, upper, CHORD_TOL)


# -- subset simulation ------------------------------------------------------------

def _subset_simulation(g, chains, lower, upper, n, p0, burn_in, rng, thresholds=None):
    """One replication of subset simulation for ``P[g(X) >= 0]``.

    ``g`` maps points to reals; ``chains(starts, level, steps)`` runs
    hit-and-run on ``{g >= level}``. Returns (probability, final members,
    number of levels, anomaly flag).
    """
    d = lower.shape[0]
    X = lower + rng.random((n, d)) * (upper - lower)
    G = g(X)
    logp = 0.0
    levels = 0
    fixed = list(thresholds) if thresholds is not None else None
    while True:
        if fixed is not None:
            tau = fixed.pop(0) if fixed else 0.0
        else:
            tau = float(np.quantile(G, 1.0 - p0, method="lower"))
        if tau >= 0.0:
            tau = 0.0
        hit = G >= tau
        if not hit.any():
            return 0.0, X[:0], levels, True
        logp += math.log(hit.mean())
        levels += 1
        if tau == 0.0:
            return math.exp(logp), X[hit], levels, False
        if levels >= MAX_LEVELS:
            return 0.0, X[:0], levels, True
        seeds = X[hit]
        per_chain = burn_in + int(math.ceil(n / seeds.shape[0]))
        states = chains(seeds, tau, per_chain)
        X = states[:, burn_in:, :].reshape(-1, d)[:n]
        G = g(X)


def _nested(g, chains, lower, upper, samples_per_level, p0, burn_in, repeats, rng,
            thresholds=None):
    probs, pools, levels, anomaly = [], [], [], False
    for _ in range(repeats):
        p, members, k, bad = _subset_simulation(
            g, chains, lower, upper, samples_per_level, p0, burn_in, rng, thresholds)
        probs.append(p)
        pools.append(members)
        levels.append(k)
        anomaly |= bad
    probs = np.array(probs)
    estimate = float(probs.mean())
    with np.errstate(divide="ignore"):
        logs = np.log(probs)
    return estimate, (float(logs.min()), float(logs.max())), np.vstack(pools), levels, anomaly


def nested_volume(snapshot: Snapshot, spec: Optional[VolumeSpec] = None, rng=None, *,
                  samples_per_level=None, p0=None, burn_in=None, repeats=None,
                  pool_size=None) -> ActiveSetEstimate:
    """Subset-simulation estimate of the active-set volume fraction.

    Levels are ``{U(x) - ell >= tau_k}`` with ``tau_k`` the empirical
    upper ``p0``-quantile of the current level's samples; the last level
    is ``tau = 0`` (the active set). The point estimate is the mean over
    ``repeats`` replications and the log-volume interval spans their
    minimum and maximum.
    """
    spec = spec or VolumeSpec()
    n = samples_per_level or spec.samples_per_level
    p0 = p0 or spec.p0
    burn = spec.burn_in if burn_in is None else burn_in
    reps = repeats or spec.repeats
    size = pool_size or spec.pool_size
    ell = snapshot.level

    def g(X):
        return snapshot.envelope(X) - ell

    def chains(starts, tau, steps):
        return _envelope_chains(snapshot, starts, ell + tau, steps, rng)

    est, ci, pool, levels, anomaly = _nested(
        g, chains, snapshot.lower, snapshot.upper, n, p0, burn, reps, rng)
    if snapshot.boxed and pool.shape[0]:
        pool = pool[snapshot.is_active(pool)]
    if pool.shape[0] > size:
        keep = np.sort(rng.choice(pool.shape[0], size=size, replace=False))
        pool = pool[keep]
    return ActiveSetEstimate(est, ci, pool, "nested-mc",
                             {"samples_per_level": n, "p0": p0, "burn_in": burn,
                              "repeats": reps, "levels": levels},
                             anomaly=anomaly or est == 0.0)


def nested_volume_fn(g: Callable, d: int, rng, *, thresholds: Optional[Sequence] = None,
                     samples_per_level=1000, p0=0.1, burn_in=2, repeats=3,
                     lower=None, upper=None) -> ActiveSetEstimate:
    """Subset simulation for ``P[g(X) >= 0]`` with ``X`` uniform on a box.

    ``thresholds`` fixes the intermediate levels instead of choosing them
    adaptively; a final level at 0 is always applied.
    """
    lower = np.zeros(d) if lower is None else np.asarray(lower, dtype=float)
    upper = np.ones(d) if upper is None else np.asarray(upper, dtype=float)

    def chains(starts, tau, steps):
        return _generic_chains(lambda Y: g(Y) >= tau, starts, lower, upper, steps, rng)

    est, ci, pool, levels, anomaly = _nested(
        g, chains, lower, upper, samples_per_level, p0, burn_in, repeats, rng,
        thresholds)
    return ActiveSetEstimate(est, ci, pool, "nested-mc",
                             {"samples_per_level": samples_per_level, "p0": p0,
                              "burn_in": burn_in, "repeats": repeats, "levels": levels},
                             anomaly=anomaly or est == 0.0)


# -- pools -----------------------------------------------------------------------

def sample_active_pool(snapshot: Snapshot, count: int, rng, max_batches: int = 20) -> np.ndarray:
    """Up to ``count`` active points.

    Uniform rejection sampling inside the snapshot's box; if fewer than 1%
    of the first batch are active, hit-and-run chains started at the
    best-LCB record take over. Raises :class:`EmptyActiveSetError` when no
    active point is found.
    """
    d = snapshot.d
    lo, hi = snapshot.lower, snapshot.upper
    batch = max(4 * count, 2048)
    found = []
    total = 0
    accepted = 0
    for b in range(max_batches):
        X = lo + rng.random((batch, d)) * (hi - lo)
        ok = snapshot.is_active(X)
        total += batch
        accepted += int(ok.sum())
        found.append(X[ok])
        if accepted >= count:
            return np.vstack(found)[:count]
        if b == 0 and accepted < 0.01 * batch:
            break
    have = np.vstack(found)
    seeds = _chain_seeds(snapshot, have)
    if seeds.shape[0] == 0:
        raise EmptyActiveSetError(
            "no active point found; the Lipschitz constant may be underestimated")
    need = count - have.shape[0]
    chains = min(need, 32)
    steps = int(math.ceil(need / chains))
    starts = seeds[np.arange(chains) % seeds.shape[0]]
    states = _envelope_chains(snapshot, starts, snapshot.level, steps, rng)
    walk = states.transpose(1, 0, 2).reshape(-1, d)[:need]
    return np.vstack([have, walk])


def _chain_seeds(snapshot: Snapshot, members: np.ndarray) -> np.ndarray:
    order = np.argsort(-snapshot.lcb, kind="stable")
    recs = snapshot.locations[order]
    recs = recs[snapshot.is_active(recs)]
    return np.vstack([recs[:1], members, recs[1:]])


def estimate_active_set(snapshot: Snapshot, spec: Optional[VolumeSpec], rng) -> ActiveSetEstimate:
    """Dispatch on ``spec.method`` (``auto``: grid for d <= 3, else nested)."""
    spec = spec or VolumeSpec()
    method = spec.method
    if method == "auto":
        method = "grid" if snapshot.d <= 3 else "nested"
    if method == "grid":
        return grid_volume(snapshot, spec.grid_points)
    if method == "nested":
        return nested_volume(snapshot, spec, rng)
    raise ContractError(f"volume method {spec.method!r} does not estimate volume")

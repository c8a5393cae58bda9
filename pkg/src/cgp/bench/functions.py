"""Synthetic benchmarks mapped to maximization on the unit cube.

Every benchmark exposes a vectorized, noise-free ``f`` on ``[0, 1]^d``
together with metadata: the optimum value and location, a Lipschitz
bound, and (when known) the near-optimality exponent. Classical
minimization problems are negated and then affinely rescaled so that
their values span ``[0, 1]``: the top of the range is the analytic
optimum, the bottom the minimum over a 10^6-point uniform probe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from ..model import NoisyObjective, ObjectiveMetadata, make_objective

PROBE_SIZE = 10 ** 6
PROBE_SEED = 20240917
LIPSCHITZ_SAFETY = 1.1
REFINE_MAX_DIM = 10


@dataclass
class Benchmark:
    name: str
    d: int
    f: Callable[[np.ndarray], np.ndarray]
    metadata: ObjectiveMetadata
    lipschitz_kind: str = "analytic"
    normalization: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> float:
        return float(self.f(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def objective(self, sigma: float = 0.0, seed: int = 0) -> NoisyObjective:
        """Noisy oracle with Gaussian noise of scale ``sigma`` (noise stream of ``seed``)."""
        m = self.metadata
        return make_objective(self, sigma, seed, f_star=m.f_star, x_star=m.x_star,
                              lipschitz=m.lipschitz, alpha=m.alpha)


def _alternating(d: int) -> np.ndarray:
    return np.array([0.3 if k % 2 == 0 else 0.7 for k in range(d)])


def _far_corner_distance(x_star: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.maximum(x_star, 1.0 - x_star) ** 2)))


def needle(d: int = 2, p: int = 1, x_star=None) -> Benchmark:
    """``1 - scale * ||x - x*||^p`` with ``scale`` making the minimum 0."""
    if p not in (1, 2):
        raise ValueError("needle exponent p must be 1 or 2")
    xs = _alternating(d) if x_star is None else np.asarray(x_star, dtype=float)
    far = _far_corner_distance(xs)
    scale = 1.0 / far ** p

    def f(X):
        r = np.sqrt(((np.atleast_2d(X) - xs) ** 2).sum(axis=1))
        return 1.0 - scale * r ** p

    L = scale * p * far ** (p - 1)
    meta = ObjectiveMetadata(f_star=1.0, x_star=xs, lipschitz=L, alpha=d - d / p)
    return Benchmark("needle", d, f, meta, "analytic", {"scale": scale},
                     {"p": p, "x_star": xs.tolist()})


def bump(d: int = 2, eps: float = 0.1, L: float = 1.0, x_star=None) -> Benchmark:
    """``(1 - eps) + eps * max(0, 1 - L ||x - x*|| / eps)``: a plateau with one bump.

    Not rescaled; values span ``[1 - eps, 1]``.
    """
    xs = _alternating(d) if x_star is None else np.asarray(x_star, dtype=float)

    def f(X):
        r = np.sqrt(((np.atleast_2d(X) - xs) ** 2).sum(axis=1))
        return (1.0 - eps) + eps * np.maximum(0.0, 1.0 - L * r / eps)

    meta = ObjectiveMetadata(f_star=1.0, x_star=xs, lipschitz=float(L), alpha=0.0)
    return Benchmark("bump", d, f, meta, "analytic", {},
                     {"eps": eps, "L": L, "x_star": xs.tolist()})


# -- classical functions (minimization form, original coordinates) -----------------

def _branin(Z):
    a, b, c = 1.0, 5.1 / (4 * math.pi ** 2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * math.pi)
    x1, x2 = Z[:, 0], Z[:, 1]
    return a * (x2 - b * x1 ** 2 + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s


_H6_A = np.array([[10, 3, 17, 3.5, 1.7, 8], [0.05, 10, 17, 0.1, 8, 14],
                  [3, 3.5, 1.7, 10, 17, 8], [17, 8, 0.05, 10, 0.1, 14]], dtype=float)
_H6_P = 1e-4 * np.array([[1312, 1696, 5569, 124, 8283, 5886],
                         [2329, 4135, 8307, 3736, 1004, 9991],
                         [2348, 1451, 3522, 2883, 3047, 6650],
                         [4047, 8828, 8732, 5743, 1091, 381]], dtype=float)
_H6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])


def _hartmann6(Z):
    inner = np.zeros((Z.shape[0], 4))
    for i in range(4):
        inner[:, i] = ((Z - _H6_P[i]) ** 2 * _H6_A[i]).sum(axis=1)
    return -(np.exp(-inner) * _H6_ALPHA).sum(axis=1)


def _ackley(Z):
    d = Z.shape[1]
    a = -20.0 * np.exp(-0.2 * np.sqrt((Z ** 2).sum(axis=1) / d))
    b = -np.exp(np.cos(2 * math.pi * Z).sum(axis=1) / d)
    return a + b + 20.0 + math.e


def _levy(Z):
    w = 1 + (Z - 1) / 4
    t1 = np.sin(math.pi * w[:, 0]) ** 2
    wi = w[:, :-1]
    t2 = ((wi - 1) ** 2 * (1 + 10 * np.sin(math.pi * wi + 1) ** 2)).sum(axis=1)
    t3 = (w[:, -1] - 1) ** 2 * (1 + np.sin(2 * math.pi * w[:, -1]) ** 2)
    return t1 + t2 + t3


def _rosenbrock(Z):
    return (100 * (Z[:, 1:] - Z[:, :-1] ** 2) ** 2 + (1 - Z[:, :-1]) ** 2).sum(axis=1)


# name -> (min form, lower, upper, global minimizer in original coordinates, minimum)
_CLASSICAL = {
    "branin": (_branin, lambda d: np.array([-5.0, 0.0]), lambda d: np.array([10.0, 15.0]),
               lambda d: np.array([math.pi, 2.275]), 0.39788735772973816),
    "hartmann6": (_hartmann6, lambda d: np.zeros(6), lambda d: np.ones(6),
                  lambda d: np.array([0.20168952, 0.15001069, 0.47687398, 0.27533243,
                                      0.31165162, 0.65730054]), -3.3223680114155147),
    "ackley": (_ackley, lambda d: np.full(d, -32.768), lambda d: np.full(d, 32.768),
               lambda d: np.zeros(d), 0.0),
    "levy": (_levy, lambda d: np.full(d, -10.0), lambda d: np.full(d, 10.0),
             lambda d: np.ones(d), 0.0),
    "rosenbrock": (_rosenbrock, lambda d: np.full(d, -5.0), lambda d: np.full(d, 10.0),
                   lambda d: np.ones(d), 0.0),
}
_FIXED_DIM = {"branin": 2, "hartmann6": 6}
DEFAULT_DIM = {"needle": 2, "bump": 2, "branin": 2, "hartmann6": 6, "ackley": 10,
               "levy": 5, "rosenbrock": 4}


@lru_cache(maxsize=None)
def _probe_min(name: str, d: int) -> float:
    g, lo_f, hi_f, _, _ = _CLASSICAL[name]
    lo, hi = lo_f(d), hi_f(d)
    rng = np.random.default_rng(PROBE_SEED)
    worst = -math.inf
    for _ in range(PROBE_SIZE // 100_000):
        U = rng.random((100_000, d))
        worst = max(worst, float(g(lo + U * (hi - lo)).max()))
    return -worst


def _grad_norms(f, X, h=1e-6):
    d = X.shape[1]
    g = np.zeros_like(X)
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        g[:, k] = (f(np.clip(X + e, 0, 1)) - f(np.clip(X - e, 0, 1))) / (
            np.clip(X[:, k] + h, 0, 1) - np.clip(X[:, k] - h, 0, 1))
    return np.sqrt((g ** 2).sum(axis=1))


@lru_cache(maxsize=None)
def empirical_lipschitz(name: str, d: int) -> float:
    """``1.1 x`` the largest gradient norm found by probing and refinement.

    Central differences at random points locate candidates; for
    ``d <= 10`` the ten steepest are refined by Nelder-Mead on the
    gradient norm. A gradient-norm bound dominates every pairwise
    difference quotient, so this is at least as large as a pair probe.
    """
    f = _normalized(name, d)
    rng = np.random.default_rng(PROBE_SEED + 1)
    n = 100_000 if d <= 10 else 20_000
    X = rng.random((n, d))
    G = _grad_norms(f, X)
    best = float(G.max())
    for i in (np.argsort(-G)[:10] if d <= REFINE_MAX_DIM else []):
        res = minimize(lambda z: -_grad_norms(f, np.clip(z, 0, 1)[None, :])[0], X[i],
                       method="Nelder-Mead", options={"maxfev": 400 * d, "xatol": 1e-7,
                                                       "fatol": 1e-9})
        best = max(best, -float(res.fun))
    return LIPSCHITZ_SAFETY * best


@lru_cache(maxsize=None)
def _normalized(name: str, d: int):
    g, lo_f, hi_f, _, gmin = _CLASSICAL[name]
    lo, hi = lo_f(d), hi_f(d)
    top = -gmin
    bottom = _probe_min(name, d)
    span = top - bottom

    def f(X):
        X = np.atleast_2d(X)
        return (-g(lo + X * (hi - lo)) - bottom) / span

    f.normalization = {"lower": lo.tolist(), "upper": hi.tolist(), "top": top,
                       "bottom": bottom}
    return f


def classical(name: str, d: Optional[int] = None) -> Benchmark:
    if name in _FIXED_DIM and d not in (None, _FIXED_DIM[name]):
        raise ValueError(f"{name} is only defined for d={_FIXED_DIM[name]}")
    d = _FIXED_DIM.get(name, d or DEFAULT_DIM[name])
    g, lo_f, hi_f, xs_f, _ = _CLASSICAL[name]
    f = _normalized(name, d)
    lo, hi = lo_f(d), hi_f(d)
    xs = (xs_f(d) - lo) / (hi - lo)
    meta = ObjectiveMetadata(f_star=1.0, x_star=xs, lipschitz=empirical_lipschitz(name, d))
    return Benchmark(name, d, f, meta, "empirical", f.normalization, {})


BENCHMARKS = ("needle", "bump", "branin", "hartmann6", "ackley", "levy", "rosenbrock")


def make_benchmark(name: str, d: Optional[int] = None, **params) -> Benchmark:
    """Build a registered benchmark (see ``BENCHMARKS``)."""
    if name not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
    if name == "needle":
        return needle(d or DEFAULT_DIM[name], **params)
    if name == "bump":
        return bump(d or DEFAULT_DIM[name], **params)
    if params:
        raise ValueError(f"{name} takes no parameters")
    return classical(name, d)

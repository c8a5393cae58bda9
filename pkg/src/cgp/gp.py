"""Exact Gaussian-process regression with a Matern-5/2 kernel and GP-UCB."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .model import ContractError

MAX_TRAIN = 500
JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
HYPER_BOX = (1e-3, 10.0)
SQRT5 = math.sqrt(5.0)


class GpError(RuntimeError):
    """The kernel matrix could not be factorized."""


def _pairwise(A, B):
    acc = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        diff = A[:, k, None] - B[None, :, k]
        acc += diff * diff
    return np.sqrt(acc)


def matern52_r(r, lengthscale, signal_var):
    """Matern-5/2 covariance as a function of distance ``r``."""
    if not lengthscale > 0:
        raise ContractError("lengthscale must be > 0")
    s = SQRT5 * np.asarray(r, dtype=float) / lengthscale
    return signal_var * (1.0 + s + s * s / 3.0) * np.exp(-s)


def matern52(a, b, lengthscale: float = 1.0, signal_var: float = 1.0) -> float:
    a = np.asarray(a, dtype=float).reshape(1, -1)
    b = np.asarray(b, dtype=float).reshape(1, -1)
    return float(matern52_r(_pairwise(a, b), lengthscale, signal_var)[0, 0])


def kernel_matrix(A, B, lengthscale, signal_var):
    return matern52_r(_pairwise(np.atleast_2d(A), np.atleast_2d(B)), lengthscale, signal_var)


@dataclass(frozen=True)
class GpModel:
    X: np.ndarray
    y: np.ndarray
    lengthscale: float
    signal_var: float
    noise_var: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    mean_offset: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]


def _factor(K, noise):
    for jit in JITTERS:
        try:
            Lc = cholesky(K + np.diag(noise + jit), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(Lc) > 0):
            return Lc, jit
    raise GpError("kernel matrix is not positive definite at the largest jitter")


def _nll(X, y, noise, lengthscale, signal_var, D=None):
    D = _pairwise(X, X) if D is None else D
    K = matern52_r(D, lengthscale, signal_var)
    try:
        Lc, _ = _factor(K, noise)
    except GpError:
        return math.inf
    a = cho_solve((Lc, True), y, check_finite=False)
    return float(0.5 * y @ a + np.log(np.diag(Lc)).sum() + 0.5 * len(y) * math.log(2 * math.pi))


def log_marginal_likelihood(X, y, noise, lengthscale, signal_var) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), y.shape).copy()
    return -_nll(X, y, noise, lengthscale, signal_var)


def fit_hypers(X, y, noise, grid: int = 7, refine: int = 3):
    """Maximize the marginal likelihood over (lengthscale, signal variance).

    Derivative-free: a ``grid x grid`` log-spaced scan of the box
    ``[1e-3, 10]^2`` followed by bounded Powell refinements (in log space)
    from the ``refine`` best grid points. Deterministic.
    """
    lo, hi = math.log(HYPER_BOX[0]), math.log(HYPER_BOX[1])
    D = _pairwise(X, X)

    def f(z):
        return _nll(X, y, noise, math.exp(z[0]), math.exp(z[1]), D)

    axis = np.linspace(lo, hi, grid)
    scored = sorted((f((a, b)), a, b) for a in axis for b in axis)
    best = scored[0]
    for val, a, b in scored[:refine]:
        if not math.isfinite(val):
            continue
        res = minimize(f, np.array([a, b]), method="Powell",
                       bounds=[(lo, hi), (lo, hi)], options={"xtol": 1e-3, "ftol": 1e-6})
        if res.fun < best[0]:
            best = (float(res.fun), float(res.x[0]), float(res.x[1]))
    return math.exp(best[1]), math.exp(best[2])


def gp_fit(X, y, noise_var=0.0, mode: str = "fixed", lengthscale: float = 0.2,
           signal_var: float = 1.0, center: bool = False) -> GpModel:
    """Fit an exact GP.

    Parameters
    ----------
    X, y : array_like
        Training inputs ``(n, d)`` and targets ``(n,)``.
    noise_var : float or array_like
        Observation noise variance, scalar or one entry per point.
    mode : {"fixed", "mle"}
        Keep the given hyperparameters or maximize the marginal likelihood.
    center : bool
        Subtract the mean of ``y`` (the prior mean becomes that constant).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ContractError("gp_fit needs matching, non-empty X and y")
    if X.shape[0] > MAX_TRAIN:
        raise ContractError(f"exact GP limited to {MAX_TRAIN} training points")
    noise = np.broadcast_to(np.asarray(noise_var, dtype=float), y.shape).copy()
    offset = float(y.mean()) if center else 0.0
    yc = y - offset
    if mode == "mle":
        lengthscale, signal_var = fit_hypers(X, yc, noise)
    elif mode != "fixed":
        raise ContractError(f"unknown hyperparameter mode {mode!r}")
    K = kernel_matrix(X, X, lengthscale, signal_var)
    Lc, jit = _factor(K, noise)
    alpha = cho_solve((Lc, True), yc, check_finite=False)
    return GpModel(X, y, float(lengthscale), float(signal_var), noise, Lc, alpha, jit, offset)


def gp_posterior(model: GpModel, X):
    """Posterior mean and variance (clamped at 0) at the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Ks = kernel_matrix(X, model.X, model.lengthscale, model.signal_var)
    mean = Ks @ model.alpha + model.mean_offset
    v = solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = model.signal_var - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def ucb_beta(t: int, delta: float) -> float:
    """``2 ln(t^2 pi^2 / (6 delta))``."""
    return 2.0 * math.log(t * t * math.pi ** 2 / (6.0 * delta))


def gp_ucb_select(model: GpModel, t: int, delta: float, pool) -> np.ndarray:
    """Pool point maximizing ``mean + sqrt(beta_t) * sd`` (first wins ties)."""
    pool = np.atleast_2d(np.asarray(pool, dtype=float))
    if pool.shape[0] == 0:
        raise ContractError("gp_ucb_select needs a non-empty pool")
    mean, var = gp_posterior(model, pool)
    beta = max(ucb_beta(max(t, 1), delta), 0.0)
    return pool[int(np.argmax(mean + math.sqrt(beta) * np.sqrt(var)))].copy()

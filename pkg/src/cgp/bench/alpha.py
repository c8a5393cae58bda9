"""Near-optimality exponent estimated from shrinkage trajectories.

If ``Vol(A_t)`` scales like ``eps_t^(d - alpha)``, the slope ``s`` of
``log Vol`` against ``log eps`` gives ``alpha = d - s``.
"""
from __future__ import annotations

import os
from typing import List, Sequence, Tuple

import numpy as np

from ..core import read_trace
from ..model import ContractError

MIN_POINTS = 5
BOOTSTRAP = 1000


def usable_window(vol, eps) -> Tuple[np.ndarray, np.ndarray]:
    """Log-coordinates of trace points with ``0 < Vol < 1`` and ``eps > 0``."""
    vol = np.asarray(vol, dtype=float)
    eps = np.asarray(eps, dtype=float)
    ok = np.isfinite(vol) & np.isfinite(eps) & (vol > 0) & (vol < 1) & (eps > 0)
    return np.log(eps[ok]), np.log(vol[ok])


def _slope(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom <= 0.0:
        raise ContractError("degenerate window: log eps has no spread")
    return float(xc @ (y - y.mean())) / denom


def estimate_alpha(traces: Sequence[dict], d: int, n_boot: int = BOOTSTRAP,
                   seed: int = 0) -> Tuple[float, Tuple[float, float]]:
    """Pooled least-squares estimate of ``alpha`` with a run-level bootstrap.

    Parameters
    ----------
    traces : sequence of dict
        One mapping per run with arrays ``vol`` and ``eps``.
    d : int
        Dimension of the search space.
    n_boot : int
        Bootstrap resamples (over runs) for the 2.5/97.5 percentile CI.

    Returns
    -------
    alpha, (lo, hi)
    """
    windows = [usable_window(tr["vol"], tr["eps"]) for tr in traces]
    windows = [w for w in windows if w[0].size]
    if sum(w[0].size for w in windows) < MIN_POINTS:
        raise ContractError(f"need at least {MIN_POINTS} usable trace points")
    x = np.concatenate([w[0] for w in windows])
    y = np.concatenate([w[1] for w in windows])
    alpha = d - _slope(x, y)
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        pick = rng.integers(0, len(windows), len(windows))
        bx = np.concatenate([windows[i][0] for i in pick])
        by = np.concatenate([windows[i][1] for i in pick])
        try:
            boots.append(d - _slope(bx, by))
        except ContractError:
            continue
    if not boots:
        raise ContractError("degenerate window in every bootstrap resample")
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return float(alpha), (float(lo), float(hi))


def load_traces(directory) -> Tuple[List[dict], int]:
    """Collect ``vol``/``eps`` columns from every ``trace.csv`` below ``directory``.

    Returns the traces and the dimension inferred from the ``x`` columns.
    """
    traces, dims = [], set()
    for root, _, files in sorted(os.walk(directory)):
        if "trace.csv" in files:
            cols = read_trace(os.path.join(root, "trace.csv"))
            dims.add(sum(1 for k in cols if k[0] == "x" and k[1:].isdigit()))
            traces.append({"vol": cols["vol_fraction"], "eps": cols["eps"]})
    if not traces:
        raise ContractError(f"no trace.csv files under {directory}")
    if len(dims) != 1:
        raise ContractError("traces mix different dimensions")
    return traces, dims.pop()

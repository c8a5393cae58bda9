"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``CGP_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("CGP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py


def _f64(a, ndim):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    return a


def envelope_terms(X, C, ucb, L, backend=None):
    """Envelope, nearest-record distance and acquisition score per row of X."""
    impl = _select(backend)
    X = _f64(X, 2)
    if X.shape[0] == 0:
        empty = np.empty(0)
        return empty, empty.copy(), empty.copy()
    return impl.envelope_terms(X, _f64(C, 2), _f64(ucb, 1), float(L))


def hit_and_run_chains(starts, dirs, draws, C, ucb, L, level, lo, hi, tol=1e-6,
                       backend=None):
    """Hit-and-run chains on ``{x in [lo, hi] : envelope(x) >= level}``."""
    impl = _select(backend)
    return impl.hit_and_run_chains(
        _f64(starts, 2), _f64(dirs, 3), _f64(draws, 3), _f64(C, 2),
        _f64(ucb, 1), float(L), float(level), _f64(lo, 1), _f64(hi, 1),
        float(tol))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {backend!r}")

"""Numpy implementations of the compiled kernels.

Arithmetic is ordered exactly as in ``_kernels.pyx`` (distances accumulate
coordinate by coordinate, same clipping, same bisection updates) so that the
two backends return bitwise-identical arrays.
"""
import numpy as np

_CHUNK = 1 << 21


def _distances(X, C):
    acc = np.zeros((X.shape[0], C.shape[0]))
    for k in range(X.shape[1]):
        diff = X[:, k, None] - C[None, :, k]
        acc += diff * diff
    return np.sqrt(acc)


def envelope_terms(X, C, ucb, L):
    X = np.ascontiguousarray(X, dtype=float)
    m, n = X.shape[0], C.shape[0]
    env = np.empty(m)
    mind = np.empty(m)
    score = np.empty(m)
    step = max(1, _CHUNK // max(n, 1))
    for s in range(0, m, step):
        D = _distances(X[s:s + step], C)
        dmin = D.min(axis=1)
        env[s:s + step] = (ucb[None, :] + L * D).min(axis=1)
        mind[s:s + step] = dmin
        score[s:s + step] = (ucb[None, :] + L * (D - dmin[:, None])).min(axis=1)
    return env, mind, score


def _chord(cur, u, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        up = (hi - cur) / u
        dn = (lo - cur) / u
    pos = u > 0.0
    neg = u < 0.0
    t1 = np.where(pos, up, np.where(neg, dn, np.inf))
    t2 = np.where(pos, dn, np.where(neg, up, -np.inf))
    return t1.min(axis=1), t2.max(axis=1)


def _side(member, cur, u, t_end, lo, hi, tol, forward):
    y = np.clip(cur + t_end[:, None] * u, lo, hi)
    ok = member(y)
    a = np.where(ok, t_end, 0.0)
    b = t_end.copy()
    live = ~ok
    while True:
        gap = (b - a) if forward else (a - b)
        live &= gap > tol
        if not live.any():
            return a
        idx = np.nonzero(live)[0]
        mid = 0.5 * (a[idx] + b[idx])
        y = np.clip(cur[idx] + mid[:, None] * u[idx], lo, hi)
        ok = member(y)
        a[idx[ok]] = mid[ok]
        b[idx[~ok]] = mid[~ok]


def hit_and_run_member_chains(member, starts, dirs, draws, lo, hi, tol):
    """Vectorized hit-and-run for an arbitrary membership predicate.

    ``member`` maps an ``(m, d)`` array to a boolean array of length ``m``.
    """
    nc, ns, d = dirs.shape
    out = np.empty((nc, ns, d))
    cur = np.array(starts, dtype=float, copy=True)
    for s in range(ns):
        u = dirs[:, s, :]
        t_hi, t_lo = _chord(cur, u, lo, hi)
        t1 = _side(member, cur, u, t_hi, lo, hi, tol, True)
        t2 = _side(member, cur, u, t_lo, lo, hi, tol, False)
        pending = np.ones(nc, dtype=bool)
        for j in range(draws.shape[2]):
            idx = np.nonzero(pending)[0]
            if idx.size == 0:
                break
            t = t2[idx] + draws[idx, s, j] * (t1[idx] - t2[idx])
            y = np.clip(cur[idx] + t[:, None] * u[idx], lo, hi)
            ok = member(y)
            cur[idx[ok]] = y[ok]
            pending[idx[ok]] = False
        out[:, s, :] = cur
    return out


def hit_and_run_chains(starts, dirs, draws, C, ucb, L, level, lo, hi, tol):
    def member(Y):
        return envelope_terms(Y, C, ucb, L)[0] >= level

    return hit_and_run_member_chains(member, starts, dirs, draws, lo, hi, tol)

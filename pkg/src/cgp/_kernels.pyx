# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for envelope evaluation and hit-and-run chains.

Every routine here has a numpy twin in ``_kernels_py`` performing the same
floating-point operations in the same order, so both backends agree bitwise.
"""
import numpy as np

from libc.math cimport sqrt, INFINITY


def envelope_terms(const double[:, ::1] X, const double[:, ::1] C,
                   const double[::1] ucb, double L):
    """Return ``(env, mind, score)`` for every row of ``X``.

    env[p]   = min_i ucb[i] + L * |X[p] - C[i]|
    mind[p]  = min_i |X[p] - C[i]|
    score[p] = min_i ucb[i] + L * (|X[p] - C[i]| - mind[p])
    """
    cdef Py_ssize_t m = X.shape[0], n = C.shape[0], d = X.shape[1]
    cdef Py_ssize_t p, i, k
    cdef double acc, diff, di, dmin, emin, smin, v
    env_a = np.empty(m)
    mind_a = np.empty(m)
    score_a = np.empty(m)
    buf_a = np.empty(n)
    cdef double[::1] env = env_a
    cdef double[::1] mind = mind_a
    cdef double[::1] score = score_a
    cdef double[::1] buf = buf_a
    with nogil:
        for p in range(m):
            dmin = INFINITY
            emin = INFINITY
            for i in range(n):
                acc = 0.0
                for k in range(d):
                    diff = X[p, k] - C[i, k]
                    acc = acc + diff * diff
                di = sqrt(acc)
                buf[i] = di
                if di < dmin:
                    dmin = di
                v = ucb[i] + L * di
                if v < emin:
                    emin = v
            smin = INFINITY
            for i in range(n):
                v = ucb[i] + L * (buf[i] - dmin)
                if v < smin:
                    smin = v
            env[p] = emin
            mind[p] = dmin
            score[p] = smin
    return env_a, mind_a, score_a


cdef inline bint _member(const double[::1] y, const double[:, ::1] C,
                         const double[::1] ucb, double L, double level) noexcept nogil:
    cdef Py_ssize_t n = C.shape[0], d = C.shape[1]
    cdef Py_ssize_t i, k
    cdef double acc, diff
    for i in range(n):
        acc = 0.0
        for k in range(d):
            diff = y[k] - C[i, k]
            acc = acc + diff * diff
        if ucb[i] + L * sqrt(acc) < level:
            return False
    return True


cdef inline void _place(double[::1] y, const double[::1] x, const double[::1] u,
                        double t, const double[::1] lo, const double[::1] hi) noexcept nogil:
    cdef Py_ssize_t k
    cdef double v
    for k in range(x.shape[0]):
        v = x[k] + t * u[k]
        if v < lo[k]:
            v = lo[k]
        elif v > hi[k]:
            v = hi[k]
        y[k] = v


def hit_and_run_chains(const double[:, ::1] starts, const double[:, :, ::1] dirs,
                       const double[:, :, ::1] draws, const double[:, ::1] C,
                       const double[::1] ucb, double L, double level,
                       const double[::1] lo, const double[::1] hi, double tol):
    """Run independent hit-and-run chains on ``{x in box : env(x) >= level}``.

    ``dirs[c, s]`` are unit directions and ``draws[c, s]`` the uniform numbers
    tried along each chord. Returns the chain states after every step,
    shape ``(chains, steps, d)``.
    """
    cdef Py_ssize_t nc = dirs.shape[0], ns = dirs.shape[1], d = dirs.shape[2]
    cdef Py_ssize_t K = draws.shape[2]
    cdef Py_ssize_t c, s, k, j
    cdef double t_hi, t_lo, a, b, mid, uk, t1, t2, t
    out_a = np.empty((nc, ns, d))
    cur_a = np.empty(d)
    y_a = np.empty(d)
    cdef double[:, :, ::1] out = out_a
    cdef double[::1] cur = cur_a
    cdef double[::1] y = y_a
    with nogil:
        for c in range(nc):
            for k in range(d):
                cur[k] = starts[c, k]
            for s in range(ns):
                t_hi = INFINITY
                t_lo = -INFINITY
                for k in range(d):
                    uk = dirs[c, s, k]
                    if uk > 0.0:
                        t1 = (hi[k] - cur[k]) / uk
                        t2 = (lo[k] - cur[k]) / uk
                    elif uk < 0.0:
                        t1 = (lo[k] - cur[k]) / uk
                        t2 = (hi[k] - cur[k]) / uk
                    else:
                        continue
                    if t1 < t_hi:
                        t_hi = t1
                    if t2 > t_lo:
                        t_lo = t2
                # forward side
                _place(y, cur, dirs[c, s], t_hi, lo, hi)
                if _member(y, C, ucb, L, level):
                    a = t_hi
                else:
                    a = 0.0
                    b = t_hi
                    while b - a > tol:
                        mid = 0.5 * (a + b)
                        _place(y, cur, dirs[c, s], mid, lo, hi)
                        if _member(y, C, ucb, L, level):
                            a = mid
                        else:
                            b = mid
                t1 = a
                # backward side
                _place(y, cur, dirs[c, s], t_lo, lo, hi)
                if _member(y, C, ucb, L, level):
                    a = t_lo
                else:
                    a = 0.0
                    b = t_lo
                    while a - b > tol:
                        mid = 0.5 * (a + b)
                        _place(y, cur, dirs[c, s], mid, lo, hi)
                        if _member(y, C, ucb, L, level):
                            a = mid
                        else:
                            b = mid
                t2 = a
                for j in range(K):
                    t = t2 + draws[c, s, j] * (t1 - t2)
                    _place(y, cur, dirs[c, s], t, lo, hi)
                    if _member(y, C, ucb, L, level):
                        for k in range(d):
                            cur[k] = y[k]
                        break
                for k in range(d):
                    out[c, s, k] = cur[k]
    return out_a

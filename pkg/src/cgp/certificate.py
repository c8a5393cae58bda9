"""Confidence radii, the lower certificate, the Lipschitz UCB envelope and
the exportable certificate document.

A point ``x`` is *active* when ``envelope(x) >= ell``; points outside the
active set are certifiably suboptimal on the good event.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .model import ConfigError, ContractError, SampleStore

SCHEMA_VERSION = 1
# Membership uses ``U(x) >= ell - tol`` with ``tol = MEMBERSHIP_RTOL * max(1, |ell|)``.
# The slack only ever adds points, so pruning stays conservative; it keeps
# the record that attains ``ell`` active when a tight Lipschitz constant
# makes the envelope round one ulp below it.
MEMBERSHIP_RTOL = 1e-12


class EmptyCertificateError(ContractError):
    """The certificate is undefined before the first sample."""


def confidence_radius(sigma, n, N, T, delta):
    """``sigma * sqrt(2 log(2 N T / delta) / n)`` (natural log)."""
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta must lie in (0, 1)")
    n = np.asarray(n, dtype=float)
    if np.any(n < 1) or N < 1 or T < 1:
        raise ContractError("need n >= 1, N >= 1 and T >= 1")
    r = sigma * np.sqrt(2.0 * math.log(2.0 * N * T / delta) / n)
    return float(r) if r.ndim == 0 else r


def beta_target(t, sigma, T, delta):
    """Target confidence radius ``sigma * sqrt(2 log(2 T^2 / delta) / t)``."""
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta must lie in (0, 1)")
    if t < 1:
        raise ContractError("beta_target needs t >= 1")
    return sigma * math.sqrt(2.0 * math.log(2.0 * T * T / delta) / t)


class Snapshot:
    """Frozen certificate state: records, radii, Lipschitz constant, ``ell``.

    Parameters
    ----------
    locations, means, radii : array_like
        One row/entry per distinct sampled location.
    lipschitz : float
        Lipschitz constant used by the envelope.
    counts : array_like, optional
        Observation counts (informational; defaults to ones).
    ell : float, optional
        Lower certificate. Defaults to ``max(means - radii)``. Local
        certificates pass the region's own level here.
    box : (lower, upper), optional
        Restrict the active set to an axis-aligned box.
    """

    def __init__(self, locations, means, radii, lipschitz, *, counts=None,
                 sigma=0.0, delta=0.05, budget=1, ell=None, box=None):
        X = np.array(locations, dtype=float, ndmin=2)
        if X.shape[0] == 0 or X.size == 0:
            raise EmptyCertificateError("certificate undefined before the first sample")
        self.locations = X
        self.means = np.array(means, dtype=float).reshape(-1)
        self.radii = np.array(radii, dtype=float).reshape(-1)
        if counts is None:
            counts = np.ones(X.shape[0], dtype=np.int64)
        self.counts = np.array(counts, dtype=np.int64).reshape(-1)
        if not (self.means.shape[0] == self.radii.shape[0] == self.counts.shape[0] == X.shape[0]):
            raise ContractError("records have inconsistent lengths")
        self.lipschitz = float(lipschitz)
        self.sigma = float(sigma)
        self.delta = float(delta)
        self.budget = int(budget)
        self.ucb = self.means + self.radii
        self.lcb = self.means - self.radii
        self.ell = float(self.lcb.max()) if ell is None else float(ell)
        self.level = self.ell - MEMBERSHIP_RTOL * max(1.0, abs(self.ell))
        if box is None:
            self.lower = np.zeros(X.shape[1])
            self.upper = np.ones(X.shape[1])
            self.boxed = False
        else:
            self.lower = np.array(box[0], dtype=float).reshape(-1)
            self.upper = np.array(box[1], dtype=float).reshape(-1)
            self.boxed = True
        for a in (self.locations, self.means, self.radii, self.counts, self.ucb,
                  self.lcb, self.lower, self.upper):
            a.setflags(write=False)

    @classmethod
    def from_store(cls, store: SampleStore, lipschitz, sigma, delta, budget):
        """Snapshot with radii recomputed from the store's current counts."""
        if store.N == 0:
            raise EmptyCertificateError("certificate undefined before the first sample")
        radii = confidence_radius(sigma, store.counts, store.N, budget, delta)
        return cls(store.locations.copy(), store.means, np.atleast_1d(radii), lipschitz,
                   counts=store.counts.copy(), sigma=sigma, delta=delta, budget=budget)

    @property
    def d(self) -> int:
        return self.locations.shape[1]

    @property
    def N(self) -> int:
        return self.locations.shape[0]

    @property
    def best_lcb_index(self) -> int:
        return int(np.argmax(self.lcb))

    def local(self, lower, upper) -> "Snapshot":
        """Certificate restricted to a box, with ``ell`` = best LCB inside it."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        inside = np.all((self.locations >= lower) & (self.locations <= upper), axis=1)
        ell = float(self.lcb[inside].max()) if inside.any() else -math.inf
        return Snapshot(self.locations, self.means, self.radii, self.lipschitz,
                        counts=self.counts, sigma=self.sigma, delta=self.delta,
                        budget=self.budget, ell=ell, box=(lower, upper))

    def with_records(self, locations, means, radii) -> "Snapshot":
        """New snapshot with extra records; existing radii are kept as-is."""
        X = np.vstack([self.locations, np.array(locations, dtype=float, ndmin=2)])
        return Snapshot(X, np.concatenate([self.means, np.atleast_1d(means)]),
                        np.concatenate([self.radii, np.atleast_1d(radii)]),
                        self.lipschitz, sigma=self.sigma, delta=self.delta,
                        budget=self.budget)

    # -- vectorized evaluations -------------------------------------------------
    def _rows(self, X):
        X = np.array(X, dtype=float, ndmin=2)
        if X.shape[1] != self.d:
            raise ContractError(f"points have dimension {X.shape[1]}, expected {self.d}")
        return X

    def terms(self, X):
        """``(envelope, min distance, score)`` for each row of ``X``."""
        return kernels.envelope_terms(self._rows(X), self.locations, self.ucb, self.lipschitz)

    def envelope(self, X) -> np.ndarray:
        return self.terms(X)[0]

    def slack(self, X) -> np.ndarray:
        return kernels.envelope_terms(self._rows(X), self.locations, self.radii,
                                      self.lipschitz)[0]

    def min_distance(self, X) -> np.ndarray:
        return self.terms(X)[1]

    def score(self, X) -> np.ndarray:
        return self.terms(X)[2]

    def in_box(self, X) -> np.ndarray:
        X = self._rows(X)
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)

    def is_active(self, X) -> np.ndarray:
        X = self._rows(X)
        active = self.envelope(X) >= self.level
        if self.boxed:
            active &= self.in_box(X)
        return active


def lower_certificate(snapshot: Snapshot) -> float:
    return snapshot.ell


def envelope(snapshot: Snapshot, x) -> float:
    return float(snapshot.envelope(x)[0])


def slack(snapshot: Snapshot, x) -> float:
    return float(snapshot.slack(x)[0])


def is_active(snapshot: Snapshot, x) -> bool:
    return bool(snapshot.is_active(x)[0])


@dataclass(frozen=True)
class GapReport:
    beta: float
    eta_hat: float
    gamma_hat: float
    lipschitz: float

    @property
    def eps(self) -> float:
        return 2.0 * (self.beta + self.lipschitz * self.eta_hat) + self.gamma_hat

    @property
    def delta_hat(self) -> float:
        """Containment half-width ``beta + L * eta + gamma / 2``."""
        return self.beta + self.lipschitz * self.eta_hat + 0.5 * self.gamma_hat


def gap_report(snapshot: Snapshot, pool) -> GapReport:
    """Computable gap proxy from a pool of active-set members.

    ``pool`` is an array of member points or an object with a
    ``member_pool`` attribute (an ``ActiveSetEstimate``).
    """
    pool = getattr(pool, "member_pool", pool)
    pool = np.array(pool, dtype=float, ndmin=2)
    if pool.size == 0:
        raise ContractError("empty member pool; re-estimate the active set first")
    active_records = snapshot.is_active(snapshot.locations)
    beta = float(snapshot.radii[active_records].max()) if active_records.any() else 0.0
    env, mind, _ = snapshot.terms(pool)
    eta = float(mind.max())
    gamma = max(0.0, float(env.max()) - snapshot.ell)
    return GapReport(beta=max(beta, 0.0), eta_hat=eta, gamma_hat=gamma,
                     lipschitz=snapshot.lipschitz)


# -- export ---------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            raise ContractError("certificate values must be finite")
        s = format(v, ".17g")
        if "e" not in s and "." not in s and "n" not in s:
            s += ".0"
        return s
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_fmt(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def certificate_dict(snapshot: Snapshot, metadata: Optional[dict] = None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "dimension": snapshot.d,
        "lipschitz": snapshot.lipschitz,
        "sigma": snapshot.sigma,
        "delta": snapshot.delta,
        "budget": snapshot.budget,
        "ell": snapshot.ell,
        "membership_rtol": MEMBERSHIP_RTOL,
        "records": [
            {"x": [float(v) for v in snapshot.locations[i]],
             "n": int(snapshot.counts[i]),
             "mean": float(snapshot.means[i]),
             "radius": float(snapshot.radii[i])}
            for i in range(snapshot.N)
        ],
    }
    if snapshot.boxed:
        doc["region"] = {"lower": [float(v) for v in snapshot.lower],
                         "upper": [float(v) for v in snapshot.upper]}
    if metadata:
        doc["metadata"] = metadata
    return doc


def export_certificate(snapshot: Snapshot, metadata: Optional[dict] = None, path=None) -> str:
    """Serialize ``snapshot``; reals carry 17 significant digits.

    Writes to ``path`` when given and returns the document text either way.
    """
    text = _fmt(certificate_dict(snapshot, metadata)) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def snapshot_from_dict(doc: dict) -> Snapshot:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ContractError(f"unsupported certificate schema {doc.get('schema_version')!r}")
    recs = doc["records"]
    if not recs:
        raise EmptyCertificateError("certificate has no records")
    box = None
    if "region" in doc:
        box = (doc["region"]["lower"], doc["region"]["upper"])
    return Snapshot([r["x"] for r in recs], [r["mean"] for r in recs],
                    [r["radius"] for r in recs], doc["lipschitz"],
                    counts=[r["n"] for r in recs], sigma=doc["sigma"], delta=doc["delta"],
                    budget=doc["budget"], ell=doc["ell"], box=box)


def import_certificate(source) -> Snapshot:
    """Rebuild a snapshot from document text, a dict, or a file path."""
    if isinstance(source, dict):
        return snapshot_from_dict(source)
    text = str(source)
    if not text.lstrip().startswith("{"):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    return snapshot_from_dict(json.loads(text))

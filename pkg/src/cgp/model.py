"""Core domain types: points, objectives, run configuration, sample storage.

The optimization domain is always the unit hypercube ``[0, 1]^d`` with the
Euclidean metric; benchmarks are rescaled into it before optimization.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class ConfigError(ValueError):
    """Invalid run configuration."""


# Fixed labels for independent random streams derived from one root seed.
STREAM_LABELS = {
    "acquisition": 0,
    "volume": 1,
    "noise": 2,
    "gp": 3,
    "init": 4,
    "regions": 5,
    "baseline": 6,
}


def stream(seed: int, label: str) -> np.random.Generator:
    """Child generator for ``label``; unaffected by draws on other labels."""
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1),
                                spawn_key=(STREAM_LABELS[label],))
    return np.random.Generator(np.random.PCG64(ss))


def as_point(x, d: Optional[int] = None) -> np.ndarray:
    """Validate and return ``x`` as a float array inside the unit cube."""
    p = np.asarray(x, dtype=float).reshape(-1)
    if d is not None and p.shape[0] != d:
        raise ContractError(f"point has dimension {p.shape[0]}, expected {d}")
    if p.shape[0] < 1:
        raise ContractError("points need at least one coordinate")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ContractError(f"point {p.tolist()} lies outside [0, 1]^d")
    return p


def distance(a, b) -> float:
    """Euclidean distance between two points of equal dimension."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return math.hypot(*(u - v for u, v in zip(a.tolist(), b.tolist())))


def sobol_init(d: int, k: int, seed: int) -> np.ndarray:
    """First ``k`` points of a scrambled Sobol sequence in ``[0, 1]^d``."""
    if k < 1:
        raise ContractError("sobol_init needs k >= 1")
    engine = qmc.Sobol(d=d, scramble=True, seed=np.random.default_rng(seed))
    with warnings.catch_warnings():
        # balance properties need powers of two; we only want a prefix
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(k)


@dataclass(frozen=True)
class ObjectiveMetadata:
    f_star: Optional[float] = None
    x_star: Optional[np.ndarray] = None
    lipschitz: Optional[float] = None
    sigma: Optional[float] = None
    alpha: Optional[float] = None


class NoisyObjective:
    """Black-box objective ``y = f(x) + noise``.

    Parameters
    ----------
    evaluate : callable
        Maps a point to a (possibly noisy) observation.
    metadata : ObjectiveMetadata, optional
        Known facts about the objective (optimum, Lipschitz constant, ...).
    truth : callable, optional
        Noise-free ``f``, used only for regret reporting.
    """

    def __init__(self, evaluate: Callable[[np.ndarray], float],
                 metadata: Optional[ObjectiveMetadata] = None,
                 truth: Optional[Callable[[np.ndarray], float]] = None):
        self._evaluate = evaluate
        self.metadata = metadata or ObjectiveMetadata()
        self.truth = truth
        self.calls = 0

    def __call__(self, x) -> float:
        self.calls += 1
        return float(self._evaluate(np.asarray(x, dtype=float)))

    def regret(self, x) -> Optional[float]:
        if self.truth is None or self.metadata.f_star is None:
            return None
        return float(self.metadata.f_star - self.truth(np.asarray(x, dtype=float)))


def make_objective(f: Callable[[np.ndarray], float], sigma: float = 0.0, seed: int = 0,
                   **metadata) -> NoisyObjective:
    """Wrap a deterministic ``f`` with Gaussian noise of scale ``sigma``.

    Noise draws come from the ``noise`` stream of ``seed``; keyword
    arguments populate :class:`ObjectiveMetadata`.
    """
    rng = stream(seed, "noise")

    def evaluate(x):
        y = float(f(x))
        return y + sigma * float(rng.standard_normal()) if sigma > 0 else y

    meta = ObjectiveMetadata(sigma=sigma, **metadata)
    return NoisyObjective(evaluate, meta, truth=lambda x: float(f(x)))


@dataclass(frozen=True)
class StoppingRule:
    kind: str = "fixed-budget"
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("fixed-budget", "volume-below", "gap-below"):
            raise ConfigError(f"unknown stopping rule {self.kind!r}")
        if self.kind != "fixed-budget" and not (self.threshold and self.threshold > 0):
            raise ConfigError(f"stopping rule {self.kind} needs a positive threshold")


@dataclass(frozen=True)
class VolumeSpec:
    """How Vol(A_t) is estimated during a run.

    ``method`` is one of ``auto`` (grid for d <= 3, nested otherwise),
    ``grid``, ``nested`` or ``none``.
    """

    method: str = "auto"
    grid_points: Optional[int] = None
    pool_size: int = 512
    p0: float = 0.1
    samples_per_level: int = 500
    burn_in: int = 2
    repeats: int = 8

    def __post_init__(self):
        if self.method not in ("auto", "grid", "nested", "none"):
            raise ConfigError(f"unknown volume method {self.method!r}")


@dataclass(frozen=True)
class TrustRegionParams:
    n_trust: int = 5
    r0: float = 0.2
    r_min: float = 0.01
    tau_fail: int = 10
    region_budget: int = 500


@dataclass(frozen=True)
class HybridParams:
    rho_thresh: float = 0.5
    phase1_volume: float = 0.1
    phase1_fraction: float = 1.0 / 3.0


MODES = ("known-L", "adaptive", "trust-region", "hybrid")


@dataclass(frozen=True)
class RunConfig:
    """Settings for one optimization run.

    ``lipschitz`` is the Lipschitz input: the constant itself in known-L,
    trust-region and hybrid modes, the initial estimate in adaptive mode
    (``None`` there means estimate it from Sobol warm samples).
    """

    dimension: int
    budget: int
    delta: float = 0.05
    sigma: float = 0.1
    lipschitz: Optional[float] = 1.0
    mode: str = "known-L"
    seed: int = 0
    stopping: StoppingRule = field(default_factory=StoppingRule)
    volume: VolumeSpec = field(default_factory=VolumeSpec)
    volume_every: int = 10
    maximizer_budget: int = 2000
    restarts: int = 10
    replication_cap: float = 0.5
    warm_samples: int = 10
    trust: TrustRegionParams = field(default_factory=TrustRegionParams)
    hybrid: HybridParams = field(default_factory=HybridParams)

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        if self.budget < 1:
            raise ConfigError("budget must be a positive integer")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        if self.sigma < 0.0:
            raise ConfigError("sigma must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.lipschitz is None:
            if self.mode != "adaptive":
                raise ConfigError("a Lipschitz constant is required outside adaptive mode")
        elif not self.lipschitz > 0.0:
            raise ConfigError("the Lipschitz input must be > 0")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        nested = {"stopping": StoppingRule, "volume": VolumeSpec,
                  "trust": TrustRegionParams, "hybrid": HybridParams}
        for key, kind in nested.items():
            if isinstance(data.get(key), dict):
                data[key] = kind(**data[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class SampleStore:
    """Distinct sampled locations with observation counts and running sums.

    Locations are identified by exact coordinate equality.
    """

    def __init__(self, d: int, capacity: int = 64):
        self.d = int(d)
        self._x = np.empty((max(capacity, 1), self.d))
        self._n = np.zeros(max(capacity, 1), dtype=np.int64)
        self._sum = np.zeros(max(capacity, 1))
        self._index: dict[bytes, int] = {}
        self.N = 0
        self.t = 0

    def __len__(self):
        return self.N

    def _grow(self):
        cap = 2 * self._x.shape[0]
        self._x = np.resize(self._x, (cap, self.d))
        self._n = np.concatenate([self._n, np.zeros(cap - self._n.shape[0], dtype=np.int64)])
        self._sum = np.concatenate([self._sum, np.zeros(cap - self._sum.shape[0])])

    def ingest(self, x, y: float) -> int:
        """Add one observation; returns the record index it landed on."""
        p = as_point(x, self.d)
        y = float(y)
        if not math.isfinite(y):
            raise ContractError(f"non-finite observation {y!r} rejected")
        key = p.tobytes()
        i = self._index.get(key)
        if i is None:
            if self.N == self._x.shape[0]:
                self._grow()
            i = self.N
            self._x[i] = p
            self._index[key] = i
            self.N += 1
        self._n[i] += 1
        self._sum[i] += y
        self.t += 1
        return i

    def find(self, x) -> Optional[int]:
        return self._index.get(np.asarray(x, dtype=float).reshape(-1).tobytes())

    @property
    def locations(self) -> np.ndarray:
        return self._x[:self.N]

    @property
    def counts(self) -> np.ndarray:
        return self._n[:self.N]

    @property
    def sums(self) -> np.ndarray:
        return self._sum[:self.N]

    @property
    def means(self) -> np.ndarray:
        return self._sum[:self.N] / self._n[:self.N]

    def best_index(self) -> int:
        """Index of the highest empirical mean; earliest record wins ties."""
        if self.N == 0:
            raise ContractError("empty store has no best record")
        return int(np.argmax(self.means))

    def copy(self) -> "SampleStore":
        other = SampleStore(self.d, self._x.shape[0])
        other._x[:] = self._x
        other._n[:] = self._n
        other._sum[:] = self._sum
        other._index = dict(self._index)
        other.N, other.t = self.N, self.t
        return other


def ingest(store: SampleStore, x, y: float) -> SampleStore:
    """Functional-style alias of :meth:`SampleStore.ingest`."""
    store.ingest(x, y)
    return store

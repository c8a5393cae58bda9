import numpy as np
import pytest
from scipy.stats import chisquare

from cgp._kernels_py import hit_and_run_member_chains
from cgp.certificate import Snapshot
from cgp.model import ContractError, VolumeSpec
from cgp.volume import (EmptyActiveSetError, estimate_active_set, grid_volume,
                        hit_and_run_step, nested_volume, nested_volume_fn,
                        random_directions, sample_active_pool)


def interval_snapshot():
    """A_t = [0, 0.3]: 0.2 + |x - 0.9| >= 0.8 and the other cone never binds."""
    return Snapshot([[0.25], [0.9]], [0.8, 0.2], [0.0, 0.0], 1.0)


def disk_snapshot():
    """Single noiseless record: U(x) = 0.7 + ||x - c||, ell forced to 1.0 -> outside a disk."""
    return Snapshot([[0.5, 0.5]], [0.7], [0.0], 1.0, ell=1.0)


def test_grid_volume_nothing_prunable():
    s = Snapshot([[0.2, 0.2], [0.8, 0.8]], [0.5, 0.6], [5.0, 5.0], 1.0)
    assert grid_volume(s).volume_fraction == 1.0


def test_grid_volume_interval_oracle():
    est = grid_volume(interval_snapshot(), points_per_axis=1000)
    assert est.volume_fraction == pytest.approx(0.3, abs=1e-3)
    assert est.method == "grid"
    lo, hi = est.log_volume_ci
    assert lo == hi == pytest.approx(np.log(est.volume_fraction))
    assert np.all(est.member_pool <= 0.3 + 1e-3)


def test_grid_volume_inconsistent_snapshot_is_empty():
    s = Snapshot([[0.5]], [0.0], [0.0], 1.0, ell=10.0)
    est = grid_volume(s)
    assert est.volume_fraction == 0.0 and est.anomaly


def test_grid_volume_guards():
    s = Snapshot([[0.5] * 6], [0.0], [0.0], 1.0)
    with pytest.raises(ContractError):
        grid_volume(s)
    s4 = Snapshot([[0.5] * 4], [0.0], [0.0], 1.0)
    with pytest.raises(ContractError):
        grid_volume(s4, points_per_axis=100)


def whole(X):
    return np.ones(len(X), dtype=bool)


def half(X):
    return X[:, 0] <= 0.5


def test_hit_and_run_examples():
    x = hit_and_run_step([0.5, 0.5], whole, direction=[1, 0], draws=[0.25])
    assert x == pytest.approx([0.25, 0.5])
    x = hit_and_run_step([0.5, 0.5], half, direction=[1, 0], draws=[0.5])
    assert x == pytest.approx([0.25, 0.5], abs=1e-6)
    x = hit_and_run_step([0.5, 0.5], whole, direction=[0, 1], draws=[0.9])
    assert x == pytest.approx([0.5, 0.9])


def test_hit_and_run_degenerate_keeps_current():
    def nothing_else(X):
        return np.all(np.abs(X - 0.5) < 1e-12, axis=1)
    x = hit_and_run_step([0.5, 0.5], nothing_else, direction=[1, 0], draws=[0.1, 0.9])
    assert np.array_equal(x, [0.5, 0.5])


def test_hit_and_run_uniform_on_cube():
    # 10^4 independent chains, each after 10^2 burn-in steps; consecutive states of
    # one chain are autocorrelated, which the chi-square statistic does not allow for
    rng = np.random.default_rng(3)
    n, burn = 10_000, 100
    dirs = random_directions(rng, (n, burn), 2)
    draws = rng.random((n, burn, 32))
    P = hit_and_run_member_chains(whole, np.full((n, 2), 0.5), dirs, draws,
                                  np.zeros(2), np.ones(2), 1e-6)[:, -1]
    cells = np.minimum((P * 4).astype(int), 3)
    counts = np.bincount(cells[:, 0] * 4 + cells[:, 1], minlength=16)
    assert chisquare(counts).pvalue > 0.01


def test_nested_everything_member_is_one(rng):
    s = Snapshot([[0.5, 0.5]], [0.5], [10.0], 1.0)
    assert nested_volume(s, rng=rng).volume_fraction == 1.0


def test_nested_two_fixed_levels_product_law(rng):
    def g(X):
        return np.where(X[:, 0] <= 0.5, np.where(X[:, 1] <= 0.5, 0.0, -0.5), -1.5)
    est = nested_volume_fn(g, 2, rng, thresholds=[-1.0, 0.0], samples_per_level=1000)
    assert est.volume_fraction == pytest.approx(0.25, abs=0.05)


def test_nested_disk_matches_grid():
    s = disk_snapshot()
    grid = grid_volume(s, points_per_axis=1000).volume_fraction
    assert grid == pytest.approx(1 - np.pi * 0.3 ** 2, abs=2e-3)
    est = nested_volume(s, VolumeSpec(samples_per_level=1000), np.random.default_rng(5))
    assert abs(est.volume_fraction - grid) <= 0.15 * grid
    lo, hi = est.log_volume_ci
    assert lo <= np.log(est.volume_fraction) <= hi
    assert s.is_active(est.member_pool).all()


def _corner_fraction(rho):
    """Area of the unit square farther than rho from its center, for 0.5 < rho < sqrt(0.5)."""
    h = 0.5
    segment = rho ** 2 * np.arccos(h / rho) - h * np.sqrt(rho ** 2 - h ** 2)
    return 1.0 - (np.pi * rho ** 2 - 4 * segment)


@pytest.mark.parametrize("ell", [0.6, 0.65])
def test_nested_small_corner_set_matches_analytic(ell):
    # one noiseless record at the center with mean 0: active iff ||x - c|| >= ell
    s = Snapshot([[0.5, 0.5]], [0.0], [0.0], 1.0, ell=ell)
    exact = _corner_fraction(ell)
    assert grid_volume(s, points_per_axis=1000).volume_fraction == pytest.approx(exact, rel=0.02)
    est = nested_volume(s, VolumeSpec(), np.random.default_rng(8))
    assert abs(est.volume_fraction - exact) <= 0.15 * exact
    assert min(est.params["levels"]) >= 2
    lo, hi = est.log_volume_ci
    assert lo <= np.log(exact) <= hi


def test_sample_active_pool_uniform_when_unprunable(rng):
    s = Snapshot([[0.5]], [0.0], [10.0], 1.0)
    pool = sample_active_pool(s, 64, rng)
    assert pool.shape == (64, 1)


def test_sample_active_pool_interval(rng):
    pool = sample_active_pool(interval_snapshot(), 200, rng)
    assert pool.shape[0] == 200
    assert np.all((pool >= 0.0) & (pool <= 0.3 + 1e-12))


def test_sample_active_pool_tiny_set_uses_chains(rng):
    c = np.array([0.3, 0.7])
    s = Snapshot([c], [1.0], [0.0], 1.0, ell=0.99)
    pool = sample_active_pool(s, 100, rng)
    assert pool.shape[0] > 0
    assert s.is_active(pool).all()


def test_sample_active_pool_empty_raises(rng):
    s = Snapshot([[0.5]], [0.0], [0.0], 1.0, ell=10.0)
    with pytest.raises(EmptyActiveSetError):
        sample_active_pool(s, 10, rng)


def test_membership_independent_of_volume_method(rng):
    s = disk_snapshot()
    X = rng.random((500, 2))
    before = s.is_active(X)
    estimate_active_set(s, VolumeSpec(method="grid"), rng)
    estimate_active_set(s, VolumeSpec(method="nested", samples_per_level=200), rng)
    assert np.array_equal(before, s.is_active(X))


def test_pool_members_and_ci_order(rng):
    s = interval_snapshot()
    for spec in (VolumeSpec(method="grid"), VolumeSpec(method="nested", samples_per_level=300)):
        est = estimate_active_set(s, spec, rng)
        assert s.is_active(est.member_pool).all()
        lo, hi = est.log_volume_ci
        assert lo <= np.log(est.volume_fraction) <= hi

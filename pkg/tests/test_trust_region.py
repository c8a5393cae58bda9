import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgp.bench.functions import make_benchmark
from cgp.certificate import Snapshot
from cgp.core import cgp_run
from cgp.model import ConfigError, RunConfig, TrustRegionParams, VolumeSpec, make_objective
from cgp.trust_region import (TrustRegion, TrustRegionRun, box_corners,
                              certified_restart_check, region_upper_bound,
                              region_visit_audit, tr_run, update_radius)

P = TrustRegionParams()


# -- pieces --------------------------------------------------------------------

def test_region_upper_bound_whole_cube(rng):
    s = Snapshot(rng.random((6, 2)), rng.random(6), rng.uniform(0, 0.1, 6), 1.0)
    u = region_upper_bound(s, np.zeros(2), np.ones(2), rng)
    assert u >= np.max(s.ucb)
    corners = box_corners(np.zeros(2), np.ones(2))
    assert u >= s.envelope(corners).max()


def test_region_upper_bound_far_box_corner_oracle(rng):
    # mu=0.5, r=0.1, L=1; box [0.2, 0.3] x [0, 0.4] around a record at the origin:
    # the envelope grows with distance, so the max sits at the farthest corner
    s = Snapshot([[0.0, 0.0]], [0.5], [0.1], 1.0)
    lo, hi = np.array([0.2, 0.0]), np.array([0.3, 0.4])
    oracle = max(0.6 + math.hypot(*c) for c in box_corners(lo, hi))
    assert oracle == pytest.approx(1.1)
    assert region_upper_bound(s, lo, hi, rng) == pytest.approx(oracle)
    s1 = Snapshot([[0.0]], [0.5], [0.1], 1.0)
    assert region_upper_bound(s1, np.array([0.2]), np.array([0.4]), rng) == \
        pytest.approx(1.0)


def test_certified_restart_check_examples():
    assert certified_restart_check(0.7, 0.88)
    assert not certified_restart_check(0.9, 0.88)
    assert not certified_restart_check(0.88, 0.88)


def _region(r, fails=0):
    reg = TrustRegion(0, np.array([0.5]), r, fails=fails)
    reg.radius_history.append(r)
    return reg


def test_update_radius_examples():
    assert update_radius(_region(0.2), "success", P, 1).radius == pytest.approx(0.4)
    assert update_radius(_region(0.4), "success", P, 1).radius == pytest.approx(0.5)
    r = update_radius(_region(0.015, fails=P.tau_fail - 1), "failure", P, 1)
    assert r.radius == 0.01 and r.fails == 0
    r = update_radius(_region(0.3, fails=3), "failure", P, 1)
    assert r.radius == 0.3 and r.fails == 4
    r = update_radius(_region(0.05, fails=4), "restart", P, 1, new_center=[0.9], t=7)
    assert (r.radius, r.fails, r.restarts) == (0.2, 0, 1)
    assert r.restart_log[0]["t"] == 7 and r.center[0] == 0.9
    with pytest.raises(ValueError):
        update_radius(_region(0.2), "sideways", P, 1)


@given(st.lists(st.sampled_from(["success", "failure"]), max_size=60), st.integers(1, 6))
def test_radius_stays_in_bounds(events, d):
    reg = TrustRegion(0, np.full(d, 0.5), 0.2)
    for e in events:
        reg = update_radius(reg, e, P, d)
        assert P.r_min <= reg.radius <= 0.5 * math.sqrt(d)


# -- runs ------------------------------------------------------------------------

def _needle_cfg(sigma, seed, T=100, **trust):
    b = make_benchmark("needle", d=2)
    cfg = RunConfig(dimension=2, budget=T, sigma=sigma, lipschitz=b.metadata.lipschitz,
                    mode="trust-region", seed=seed, volume=VolumeSpec(method="none"),
                    trust=TrustRegionParams(**trust))
    return b, cfg


def _audited_tr(b, cfg):
    run = TrustRegionRun(b.objective(cfg.sigma, cfg.seed), cfg)
    queries = []
    original = run.iterate

    def iterate(snapshot):
        box = run.regions[run.current].box()
        obs = original(snapshot)
        queries.extend((box, o[1]) for o in obs)
        return obs

    run.iterate = iterate
    return run.run(), queries


@pytest.mark.parametrize("sigma", [0.0, 0.1])
def test_queries_inside_region_and_radii_bounded(sigma):
    for seed in range(2):
        b, cfg = _needle_cfg(sigma, seed)
        res, queries = _audited_tr(b, cfg)
        assert queries
        for (lo, hi), x in queries:
            assert np.all(x >= lo) and np.all(x <= hi)
        for reg in res.extras["regions"]:
            assert all(P.r_min <= r <= 0.5 * math.sqrt(2) for r in reg["radius_history"])
        assert res.evaluations <= cfg.budget


def test_region_containing_optimum_never_restarted_noiseless():
    for seed in range(5):
        b, cfg = _needle_cfg(0.0, seed)
        res = tr_run(b.objective(0.0, seed), cfg)
        x_star = b.metadata.x_star
        for reg in res.extras["regions"]:
            for ev in reg["restart_log"]:
                lo, hi = np.array(ev["old_lower"]), np.array(ev["old_upper"])
                assert not (np.all(x_star >= lo) and np.all(x_star <= hi))


def test_local_certificate_contains_region_argmax():
    b, cfg = _needle_cfg(0.0, 3)
    res = tr_run(b.objective(0.0, 3), cfg)
    reg = res.extras["regions"][res.extras["winning_region"]]
    lo, hi = np.array(reg["lower"]), np.array(reg["upper"])
    # f is a Euclidean cone, so its argmax over a box is the projection of x*;
    # a grid oracle misses the noiseless active set, which is far finer than any grid
    best = np.clip(b.metadata.x_star, lo, hi)
    g = [np.linspace(lo[k], hi[k], 201) for k in range(2)]
    G = np.stack(np.meshgrid(*g, indexing="ij"), axis=-1).reshape(-1, 2)
    assert b.f(best[None, :])[0] >= b.f(G).max()
    assert res.snapshot.is_active(best[None, :])[0]


def test_local_ell_matches_records_in_region():
    b, cfg = _needle_cfg(0.1, 1)
    run = TrustRegionRun(b.objective(0.1, 1), cfg)
    res = run.run()
    snap = run.snapshot()
    for reg in run.regions:
        inside = reg.contains(snap.locations)
        want = float(np.max(snap.lcb[inside])) if inside.any() else -math.inf
        assert snap.local(*reg.box()).ell == want
    assert res.snapshot.ell == snap.local(*run.regions[res.extras["winning_region"]].box()).ell


def test_single_region_tracks_cgp():
    rt, rc = [], []
    for seed in range(10):
        b, cfg = _needle_cfg(0.0, seed, n_trust=1, r0=1.0)
        rt.append(tr_run(b.objective(0.0, seed), cfg).regret)
        base = cfg.replace(mode="known-L", trust=TrustRegionParams())
        rc.append(cgp_run(b.objective(0.0, seed), base).regret)
    assert np.median(rt) <= 2.0 * np.median(rc)


class _FixedCenters(TrustRegionRun):
    centers = [0.15, 0.5, 0.85]

    def _next_center(self):
        if self.centers:
            return np.array([self.centers.pop(0)])
        return super()._next_center()


def _three_peaks(heights):
    c = np.array([0.15, 0.5, 0.85])

    def f(x):
        return float(np.max(np.asarray(heights) - np.abs(float(x[0]) - c)))
    return f


def test_visits_decrease_with_gap():
    gaps = [0.0, 0.15, 0.45]
    visits = np.zeros(3)
    for seed in range(5):
        f = _three_peaks([1.0 - g for g in gaps])
        cfg = RunConfig(dimension=1, budget=150, sigma=0.1, mode="trust-region", seed=seed,
                        volume=VolumeSpec(method="none"),
                        trust=TrustRegionParams(n_trust=3, r0=0.1, tau_fail=1000))
        run = _FixedCenters(make_objective(f, sigma=0.1, seed=seed, f_star=1.0), cfg)
        run.centers = [0.15, 0.5, 0.85]
        res = run.run()
        audit = region_visit_audit(res.extras["regions"], lambda lo, hi: max(
            f([v]) for v in np.linspace(lo[0], hi[0], 2001)), 1.0)
        visits += [a["visits"] for a in audit]
    assert visits[0] >= visits[1] >= visits[2]


def test_result_json_has_regions(tmp_path):
    b, cfg = _needle_cfg(0.1, 0, T=40)
    res = tr_run(b.objective(0.1, 0), cfg)
    res.write(tmp_path)
    doc = json.loads((tmp_path / "result.json").read_text())
    assert len(doc["regions"]) == 5
    assert set(doc["regions"][0]) >= {"center", "radius_history", "restarts", "visits",
                                      "local_ell", "lower", "upper"}


def test_tr_run_rejects_other_modes():
    with pytest.raises(ConfigError):
        tr_run(make_objective(lambda x: 0.0), RunConfig(dimension=1, budget=5))


def test_high_dimensional_run_completes():
    b = make_benchmark("ackley", d=50)
    cfg = RunConfig(dimension=50, budget=60, sigma=0.1, lipschitz=b.metadata.lipschitz,
                    mode="trust-region", seed=0)
    res = tr_run(b.objective(0.1, 0), cfg)
    assert res.evaluations == 60 and res.stop_reason == "budget"

import math

import numpy as np
import pytest

from cgp.certificate import (GapReport, Snapshot, beta_target, confidence_radius,
                             gap_report)
from cgp.core import (CGPRun, read_trace, replication_count, score, select_query,
                      stopping_check, trace_header)
from cgp.core import cgp_run
from cgp.model import (ConfigError, ContractError, RunConfig, SampleStore, StoppingRule,
                       VolumeSpec, make_objective)
from cgp.volume import ActiveSetEstimate


def two_records():
    return Snapshot([[0.25], [0.9]], [0.8, 0.2], [0.0, 0.0], 1.0)


def tent(x):
    return 1.0 - abs(float(x[0]) - 0.3)


# -- score and selection -------------------------------------------------------

def test_score_examples():
    s = two_records()
    oracle = min(0.8 + abs(0.1 - 0.25), 0.2 + abs(0.1 - 0.9)) - 0.15
    assert score(s, [0.1]) == pytest.approx(oracle)
    assert score(s, [0.1]) == pytest.approx(0.8)
    assert score(s, [0.25]) == pytest.approx(s.envelope([[0.25]])[0])


def test_score_never_exceeds_envelope(rng):
    s = Snapshot(rng.random((9, 3)), rng.random(9), rng.uniform(0, 0.2, 9), 1.5)
    X = rng.random((1000, 3))
    assert np.all(s.score(X) <= s.envelope(X))


def test_select_query_lands_in_active_interval():
    for seed in range(5):
        x = select_query(two_records(), np.random.default_rng(seed))
        assert 0.0 <= x[0] <= 0.3 + 1e-9
        assert two_records().is_active(x[None, :])[0]


def test_select_query_moves_away_from_lone_record():
    s = Snapshot([[0.4, 0.6]], [0.0], [100.0], 1.0)
    x = select_query(s, np.random.default_rng(0))
    probe = np.random.default_rng(1).random((100, 2))
    assert s.min_distance(x[None, :])[0] >= np.median(s.min_distance(probe))


def test_select_query_deterministic():
    a = select_query(two_records(), np.random.default_rng(42))
    b = select_query(two_records(), np.random.default_rng(42))
    assert np.array_equal(a, b)


# -- replication and stopping --------------------------------------------------

def test_replication_count_examples():
    assert replication_count(0.3, 0.1) == 9
    assert replication_count(0.25, 0.1) == 7
    assert replication_count(0.1, 0.1) == 1
    with pytest.raises(ContractError):
        replication_count(0.1, 0.0)


def test_stopping_check_examples():
    vol = ActiveSetEstimate(0.08, (math.log(0.08),) * 2, np.empty((0, 1)), "grid", {})
    assert stopping_check(StoppingRule("volume-below", 0.10), None, vol)
    wide = GapReport(beta=0.0, eta_hat=0.35, gamma_hat=0.0, lipschitz=1.0)
    assert wide.eps == pytest.approx(0.7)
    assert not stopping_check(StoppingRule("gap-below", 0.05), wide, None)
    tight = GapReport(beta=0.0, eta_hat=0.0245, gamma_hat=0.0, lipschitz=1.0)
    assert stopping_check(StoppingRule("gap-below", 0.05), tight, None)
    assert not stopping_check(StoppingRule(), tight, vol)


# -- the run loop --------------------------------------------------------------

def test_single_sample_run():
    obj = make_objective(tent, sigma=0.0, seed=0, f_star=1.0)
    res = cgp_run(obj, RunConfig(dimension=1, budget=1, sigma=0.0, seed=3))
    assert res.evaluations == 1 and res.stop_reason == "budget"
    assert res.snapshot.radii[0] == 0.0
    assert res.estimate.volume_fraction == 1.0
    assert res.best_point[0] == res.trace[0].x[0]


def test_tent_noiseless_regret_and_membership():
    obj = make_objective(tent, sigma=0.0, seed=0, f_star=1.0)
    res = cgp_run(obj, RunConfig(dimension=1, budget=30, sigma=0.0, seed=0))
    # 10^4 intervals with endpoints, so the grid has a node at the maximizer; the
    # tight certificate leaves an active set far narrower than the grid spacing
    grid = np.linspace(0.0, 1.0, 10_001)
    f = 1.0 - np.abs(grid - 0.3)
    x_star = grid[np.argmax(f)]
    assert f.max() - tent(res.best_point) <= 0.05
    assert res.snapshot.is_active([[x_star]])[0]


def test_tent_noisy_coverage():
    hits = 0
    for seed in range(200):
        obj = make_objective(tent, sigma=0.1, seed=seed, f_star=1.0)
        cfg = RunConfig(dimension=1, budget=100, sigma=0.1, delta=0.05, seed=seed,
                        volume=VolumeSpec(method="none"))
        res = cgp_run(obj, cfg)
        hits += bool(res.snapshot.is_active([[0.3]])[0])
    assert hits >= 186


def test_cgp_run_rejects_other_modes():
    obj = make_objective(tent, sigma=0.0)
    with pytest.raises(ConfigError):
        cgp_run(obj, RunConfig(dimension=1, budget=5, mode="trust-region"))


def _audited_run(sigma, seed, T=80, d=2):
    c = np.array([0.3, 0.7][:d])

    def f(x):
        return 1.0 - float(np.sqrt(((np.asarray(x) - c) ** 2).sum()))

    obj = make_objective(f, sigma=sigma, seed=seed, f_star=1.0)
    cfg = RunConfig(dimension=d, budget=T, sigma=sigma, seed=seed, volume_every=5)
    run = CGPRun(obj, cfg)
    selected = []
    original = run.iterate

    def iterate(snapshot):
        obs = original(snapshot)
        selected.append((snapshot, obs[0][1]))
        return obs

    run.iterate = iterate
    return run.run(), selected, cfg


@pytest.mark.parametrize("sigma", [0.0, 0.1])
def test_queries_active_and_budget_accounting(sigma):
    for seed in range(3):
        res, selected, cfg = _audited_run(sigma, seed)
        for snap, x in selected:
            assert snap.is_active(x[None, :])[0]
        assert res.evaluations == len(res.trace) <= cfg.budget
        assert [r.t for r in res.trace] == list(range(1, res.evaluations + 1))
        assert res.best_mean == pytest.approx(max(r.best_mean for r in res.trace[-1:]))
        assert res.best_mean == res.snapshot.means.max() or sigma > 0


def test_best_mean_is_max_record_mean():
    res, _, _ = _audited_run(0.1, 4)
    store = SampleStore(2)
    for r in res.trace:
        store.ingest(r.x, r.y)
    assert res.best_mean == store.means.max()
    assert np.array_equal(res.best_point, store.locations[store.best_index()])


def _prefix_ell(trace, upto, d, L, sigma, delta, T, N_final):
    store = SampleStore(d)
    for r in trace[:upto]:
        store.ingest(r.x, r.y)
    radii = confidence_radius(sigma, store.counts, N_final, T, delta) if sigma > 0 else 0.0
    return float(np.max(store.means - radii))


@pytest.mark.parametrize("sigma", [0.0, 0.1])
def test_ell_nondecreasing_with_frozen_radii(sigma):
    res, _, cfg = _audited_run(sigma, 1)
    N = res.snapshot.N
    ells = [_prefix_ell(res.trace, t, 2, cfg.lipschitz, sigma, cfg.delta, cfg.budget, N)
            for t in range(1, res.evaluations + 1)]
    assert ells[-1] >= max(ells) - 1e-12
    if sigma == 0.0:
        # repeated noiseless observations can move a running mean by one ulp
        assert np.all(np.diff(ells) >= -1e-15)


def test_noisy_run_replicates():
    noisy, _, _ = _audited_run(0.1, 2)
    assert len({r.x for r in noisy.trace}) < noisy.evaluations


def test_replicate_matches_rule_and_cap():
    obj = make_objective(tent, sigma=0.1, seed=0)
    run = CGPRun(obj, RunConfig(dimension=1, budget=400, seed=0))
    checked = 0
    while run.store.t < 60:
        run.step()
        snap = run.snapshot()
        beta = beta_target(run.store.t, 0.1, 400, 0.05)
        cap = int(0.5 * run.remaining)
        due = snap.is_active(snap.locations) & (snap.radii > beta)
        want = sum(replication_count(float(r), beta) for r in snap.radii[due])
        obs = run.replicate(snap)
        assert len(obs) == min(want, cap)
        assert all(due[snap.locations[:, 0].tolist().index(o[1][0])] for o in obs)
        checked += bool(obs)
    assert checked > 0


def test_trace_file_columns_and_blanks(tmp_path):
    obj = make_objective(tent, sigma=0.1, seed=0, f_star=1.0)
    res = cgp_run(obj, RunConfig(dimension=1, budget=40, seed=0, volume_every=2))
    res.write(tmp_path)
    header = (tmp_path / "trace.csv").read_text().splitlines()[0].split(",")
    assert header == ["t", "x1", "y", "ell", "beta", "eta_hat", "gamma_hat", "eps",
                      "vol_fraction", "best_mean", "regret"]
    assert header == trace_header(1)
    cols = read_trace(tmp_path / "trace.csv")
    assert len(cols["t"]) == res.evaluations
    refreshed = ~np.isnan(cols["vol_fraction"])
    assert 0 < refreshed.sum() < res.evaluations
    assert np.all(np.isfinite(cols["regret"]))
    for name in ("certificate.json", "result.json"):
        assert (tmp_path / name).exists()


def test_regret_column_blank_without_f_star(tmp_path):
    obj = make_objective(tent, sigma=0.1, seed=0)
    res = cgp_run(obj, RunConfig(dimension=1, budget=10, seed=0))
    res.write(tmp_path)
    assert np.all(np.isnan(read_trace(tmp_path / "trace.csv")["regret"]))


@pytest.mark.parametrize("T", [3, 6, 10])
def test_gap_containment_in_noiseless_run(T):
    # sigma = 0: every grid member of A_T is within 2 * delta_hat of f*
    c = np.array([0.3, 0.7])

    def f(X):
        return 1.0 - np.sqrt(((np.atleast_2d(X) - c) ** 2).sum(axis=1))

    obj = make_objective(lambda x: float(f(x)[0]), sigma=0.0, seed=1, f_star=1.0)
    res = cgp_run(obj, RunConfig(dimension=2, budget=T, sigma=0.0, seed=1))
    g1 = (np.arange(400) + 0.5) / 400
    G = np.stack(np.meshgrid(g1, g1, indexing="ij"), axis=-1).reshape(-1, 2)
    members = G[res.snapshot.is_active(G)]
    assert len(members)
    dh = gap_report(res.snapshot, members).delta_hat
    assert np.all(f(members) >= 1.0 - 2 * dh - 1e-12)


def test_volume_stopping_rule_stops_early():
    obj = make_objective(tent, sigma=0.0, seed=0, f_star=1.0)
    cfg = RunConfig(dimension=1, budget=200, sigma=0.0, seed=0, volume_every=1,
                    stopping=StoppingRule("volume-below", 0.1))
    res = cgp_run(obj, cfg)
    assert res.stop_reason == "volume-threshold"
    assert res.evaluations < 200
    assert res.estimate.volume_fraction < 0.1


def test_anomaly_stops_with_best_so_far():
    # L far below the true slope makes the data inconsistent and empties A_t
    def steep(x):
        return 50.0 * float(x[0])
    obj = make_objective(steep, sigma=0.0, seed=0)
    res = cgp_run(obj, RunConfig(dimension=1, budget=50, sigma=0.0, lipschitz=1e-3, seed=0))
    assert res.stop_reason in ("anomaly", "budget")
    assert res.evaluations >= 1
    assert res.best_mean == max(r.y for r in res.trace)


def test_rerun_is_bitwise_identical(tmp_path):
    for k in range(2):
        obj = make_objective(tent, sigma=0.1, seed=9, f_star=1.0)
        cgp_run(obj, RunConfig(dimension=1, budget=60, seed=9)).write(tmp_path / str(k))
    for name in ("trace.csv", "result.json", "certificate.json"):
        assert (tmp_path / "0" / name).read_bytes() == (tmp_path / "1" / name).read_bytes()

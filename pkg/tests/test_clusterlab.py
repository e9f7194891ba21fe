import math

import numpy as np
import pytest
from scipy import stats

from rvpaths import rng as rngmod
from rvpaths.clusterlab import (InsufficientData, K_e, K_exceed, K_log, UnderpoweredTest, anticlustering_diagnostic,
                                block_count_threshold, block_sups, check_shift_invariance,
                                cluster_count_poisson_test, conditional_tail_paths, empirical_cluster_measure,
                                extract_blocks, gamma_variance_functional, occupation_quantile, running_max_law,
                                tightness_diagnostic, zero_functional)
from rvpaths.pathkit import PathBatch, PiecewiseConstantPath, sup_norm
from rvpaths.procsim import ConstantEta, ExpEta, JumpLaw, ShotNoise, shot_noise_tail_law
from rvpaths.tailcore import candidate_via_exceedance

P = PiecewiseConstantPath


def rng(*keys):
    return rngmod.substream(77, *keys)


# blocks


def test_extract_blocks_counts_and_times():
    b = extract_blocks(P.constant(0.0, 10.0, 3.0), 2.0, a_T=3.0)
    assert len(b) == 5
    np.testing.assert_allclose(b.scaled_times, [0.2, 0.4, 0.6, 0.8, 1.0])
    assert all(b[i] == P.constant(0.0, 2.0, 1.0) for i in range(5))
    assert b.T_used == 10.0


def test_extract_blocks_discards_partial_block():
    b = extract_blocks(P.constant(0.0, 11.0, 1.0), 2.0, a_T=1.0)
    assert len(b) == 5 and b.meta["discarded_length"] == pytest.approx(1.0)


def test_extract_blocks_argument_errors():
    y = P.constant(0.0, 10.0, 1.0)
    with pytest.raises(ValueError):
        extract_blocks(y, 11.0, a_T=1.0)
    with pytest.raises(ValueError):
        extract_blocks(y, 2.0)
    with pytest.raises(ValueError):
        extract_blocks(y, 2.0, a_T=1.0, u_T=1.0)


def test_blocks_reassemble_the_path():
    model = ShotNoise(ExpEta(1.0), JumpLaw(1.5, 0.7))
    path = model.simulate(rng("reassemble"), 10.0).path
    a_T = 2.5
    b = extract_blocks(path, 2.0, a_T=a_T)
    t = np.random.default_rng(0).uniform(0, 10, 500)
    i = np.floor(t / 2.0).astype(int)
    got = np.array([b[k].value_at(s - 2.0 * k)[0] for k, s in zip(i, t)]) * a_T
    np.testing.assert_allclose(got, path.value_at(t)[:, 0], rtol=1e-12)


def test_block_sups_match_single_path_sup():
    model = ShotNoise(ExpEta(1.0), JumpLaw(1.5))
    batch = model.simulate_batch(rng("bsups"), 20, 12.0)
    got = block_sups(batch, 3.0, 4)
    for r in range(20):
        for k in range(4):
            # half-open block [3k, 3k + 3): the sup over the closed window minus the value at its right end
            y = batch[r]
            vals = [abs(y.value_at(3.0 * k)[0])] + [abs(v) for b, v in zip(y.breakpoints, y.values[:, 0])
                                                     if 3.0 * k < b < 3.0 * k + 3.0]
            assert got[r, k] == pytest.approx(max(vals))


# functionals


def test_cluster_functionals_are_shift_invariant():
    batch = shot_noise_tail_law(ExpEta(1.0), 1.5).sample_y(rng("shift"), 2000)
    for K in (K_e(), K_log(), K_exceed(2.0)):
        assert check_shift_invariance(K, batch, np.random.default_rng(1))


def test_zero_functional_gives_zero():
    model = ShotNoise(ExpEta(1.0), JumpLaw(1.5))
    path = model.simulate(rng("zero"), 1000.0).path
    rep = empirical_cluster_measure(extract_blocks(path, 10.0, a_T=5.0), zero_functional(), 0.01, n_boot=50)
    assert rep.estimate == 0.0 and rep.std_error == 0.0


def test_empirical_cluster_measure_scale_mode_formula():
    y = P([0, 1, 2, 5, 6], [0, 3, 0, 2.5, 0], 8.0)
    b = extract_blocks(y, 2.0, a_T=2.0)
    rep = empirical_cluster_measure(b, K_e(), 0.05, n_boot=10)
    # blocks [0,2) and [4,6) exceed a_T = 2; sum K_e = 2 over T_used * 0.05
    assert rep.estimate == pytest.approx(2 / (8.0 * 0.05))
    with pytest.raises(ValueError):
        empirical_cluster_measure(b, K_e(), 0.0)


def test_empirical_cluster_measure_plugin_formula():
    y = P([0, 1, 2, 5, 6], [0, 3, 0, 2.5, 0], 8.0)
    b = extract_blocks(y, 2.0, u_T=2.0)
    rep = empirical_cluster_measure(b, K_e(), n_boot=10)
    # two clusters and two time units above the threshold
    assert rep.estimate == pytest.approx(1.0)
    assert rep.meta["mode"] == "plug-in"


def test_block_estimator_pooled_shot_noise():
    model = ShotNoise(ExpEta(1.0), JumpLaw(1.5))
    ke, kl = [], []
    for i in range(10):
        path = model.simulate(rng("ecm", i), 20_000.0).path
        u_T = occupation_quantile(path, 100.0)
        b = extract_blocks(path, 50.0, u_T=u_T)
        ke.append(empirical_cluster_measure(b, K_e(), n_boot=100).estimate)
        kl.append(empirical_cluster_measure(b, K_log(), n_boot=100).estimate)
    # ten independent windows at the stated T, r_T and u_T
    assert abs(np.mean(ke) - 1.0) < 0.15
    assert abs(np.mean(kl) - 1 / 1.5) < 0.1


def test_block_estimator_phase_invariance():
    model = ShotNoise(ExpEta(1.0), JumpLaw(1.5))
    path = model.simulate(rng("phase"), 20_000.0).path
    u_T = occupation_quantile(path, 100.0)
    a = empirical_cluster_measure(extract_blocks(path, 50.0, u_T=u_T), K_e(), n_boot=300)
    b = empirical_cluster_measure(extract_blocks(path, 50.0, u_T=u_T, phase=25.0), K_e(), n_boot=300)
    assert abs(a.estimate - b.estimate) < 3 * max(a.std_error, b.std_error)


def test_block_estimator_homogeneity_slope():
    model = ShotNoise(ExpEta(1.0), JumpLaw(1.5))
    T = 20_000.0
    a_T = model.calibrate_scale(T, n=2_000_000, seed=1)
    xs = np.array([0.5, 1.0, 2.0, 4.0])
    est = np.zeros(xs.size)
    for i in range(10):
        path = model.simulate(rng("homog", i), T).path
        b = extract_blocks(path, 50.0, a_T=a_T)
        est += [empirical_cluster_measure(b, K_exceed(x), 1.0 / T, n_boot=10).estimate for x in xs]
    slope = np.polyfit(np.log(xs), np.log(est / 10), 1)[0]
    assert abs(slope + 1.5) < 0.1


def test_consistency_chain_on_shot_noise():
    eta = ExpEta(1.0)
    model = ShotNoise(eta, JumpLaw(1.5))
    tail = candidate_via_exceedance(shot_noise_tail_law(eta, 1.5), 100_000, seed=0)
    reps = []
    for i in range(10):
        path = model.simulate(rng("chain", i), 20_000.0).path
        b = extract_blocks(path, 50.0, u_T=occupation_quantile(path, 100.0))
        reps.append(empirical_cluster_measure(b, K_e(), n_boot=100).estimate)
    block = np.mean(reps)
    block_se = np.std(reps, ddof=1) / math.sqrt(len(reps))
    closed = 1.0 / eta.mean
    assert abs(block - tail.estimate) < 3 * math.hypot(block_se, tail.std_error)
    assert abs(block - closed) < 3 * block_se
    assert abs(tail.estimate - closed) < 3 * tail.std_error


def test_threshold_helpers():
    y = P([0, 1, 2, 3], [5, 0, 3, 1], 4.0)
    # time strictly above the returned level stays just under the target
    assert occupation_quantile(y, 1.0) == 5.0
    assert occupation_quantile(y, 1.5) == 3.0
    assert occupation_quantile(y, 2.0) == 3.0
    assert block_count_threshold(y, 1.0, 1) == pytest.approx(4.0)
    assert block_count_threshold(y, 1.0, 2) == pytest.approx(2.0)
    with pytest.raises(InsufficientData):
        block_count_threshold(P([0, 1], [2, 2], 2.0), 1.0, 1)


# gamma variance


def test_gamma_variance_longer_sessions_self_consistent():
    rep = gamma_variance_functional(shot_noise_tail_law(ConstantEta(2.0), 1.0), 100_000, seed=0)
    # display: 2 gamma^2 * 2 = 4; direct route 2 * E[(log Y_0)^2] = 4
    assert rep.estimate == pytest.approx(4.0)
    assert abs(rep.meta["zscore_vs_direct"]) < 3


# anticlustering


def test_anticlustering_m_dependent_model():
    model = ShotNoise(ConstantEta(1.0), JumpLaw(1.5))
    r_T = 5.0
    past = {}
    for T in (100.0, 1000.0):
        rows = anticlustering_diagnostic(model, T ** (1 / 1.5), r_T, [0.0, 0.5, 1.5, 3.0], 1.0, n_events=1000,
                                         seed=0)
        assert rows[0]["estimate"] == 1.0
        est = [r["estimate"] for r in rows]
        assert all(a >= b for a, b in zip(est, est[1:]))
        # past the dependence range a fresh exceedance in a window of length 2 r_T has probability about 2 r_T / T
        for r in rows[2:]:
            assert r["lo"] <= 2 * r_T / T
        past[T] = rows[2]["estimate"]
    assert past[1000.0] < past[100.0] / 5


def test_anticlustering_large_x_vanishes():
    model = ShotNoise(ConstantEta(1.0), JumpLaw(1.5))
    rows = anticlustering_diagnostic(model, 10.0, 5.0, [1.5, 3.0], 1e6, n_events=500, seed=1)
    assert all(r["estimate"] == 0.0 for r in rows)


def test_anticlustering_insufficient_events():
    model = ShotNoise(ConstantEta(1.0), JumpLaw(1.5))
    with pytest.raises(InsufficientData, match="conditioning events"):
        anticlustering_diagnostic(model, 1e6, 2.0, [0.5], n_events=200, max_windows=4000)


# conditional tail paths


def test_conditional_tail_paths_unit_sessions():
    model = ShotNoise(ConstantEta(1.0), JumpLaw(1.5))
    out = conditional_tail_paths(model, [20.0, 50.0], 2.0, 5000, seed=0)
    exc = {o["x"]: o["panel"][0]["ensemble"] for o in out}
    # the tail process spends exactly one unit above 1; the prelimit gap closes as x grows
    assert abs(exc[50.0] - 1.0) < abs(exc[20.0] - 1.0)
    assert abs(exc[50.0] - 1.0) < 0.03
    assert out[1]["pareto_ks"] < out[0]["pareto_ks"]


def test_conditioned_marginal_matches_direct_conditioning():
    model = ShotNoise(ConstantEta(1.0), JumpLaw(1.5))
    x = 50.0
    out = conditional_tail_paths(model, [x], 2.0, 5000, seed=3)
    cond = out[0]["ensemble"].norm_at(0.0)
    direct = np.abs(model.marginal(rng("direct"), 4_000_000)) / x
    direct = direct[direct > 1]
    assert stats.ks_2samp(cond, direct).pvalue > 1e-3


def test_conditional_tail_paths_low_acceptance():
    model = ShotNoise(ConstantEta(1.0), JumpLaw(1.5))
    with pytest.raises(InsufficientData, match="lower x"):
        conditional_tail_paths(model, [1e6], 2.0, 10, seed=0, n_tail=1000)


# cluster counts


@pytest.fixture(scope="module")
def count_setup():
    model = ShotNoise(ExpEta(1.0), JumpLaw(1.5))
    return model, model.calibrate_scale(2000.0, n=2_000_000, seed=0)


def test_cluster_counts_are_poisson(count_setup):
    model, a_T = count_setup
    r = cluster_count_poisson_test(model, a_T, 50.0, 1.0, 2000.0, 1000, seed=0)
    assert r["mean_expected"] == pytest.approx(1.0)
    assert r["p_value"] > 1e-3
    assert abs(r["half_window_correlation"]) < 3 * r["correlation_se"]
    assert r["times_ks_pvalue"] > 1e-3


def test_cluster_count_homogeneity(count_setup):
    model, a_T = count_setup
    base = cluster_count_poisson_test(model, a_T, 50.0, 1.0, 2000.0, 1000, seed=1)
    half = cluster_count_poisson_test(model, a_T, 50.0, 2 ** (1 / 1.5), 2000.0, 1000, seed=2)
    assert half["mean_expected"] == pytest.approx(0.5)
    ratio = half["mean_observed"] / base["mean_observed"]
    se = ratio * math.hypot(half["mean_se"] / half["mean_observed"], base["mean_se"] / base["mean_observed"])
    assert abs(ratio - 0.5) < 3 * se


def test_cluster_count_underpowered(count_setup):
    model, a_T = count_setup
    with pytest.raises(UnderpoweredTest):
        cluster_count_poisson_test(model, a_T, 50.0, 1.0, 2000.0, 4, seed=0)


# running max


def test_running_max_discrepancy_is_exact_sup():
    sups = np.array([0.7, 1.2, 1.9, 2.6, 0.4, 5.0])
    out = running_max_law(ShotNoise(ExpEta(1.0), JumpLaw(1.5)), 10.0, [0.5, 1, 2, 3], 6, 1.0, theta=1.0,
                          sups=sups, x_range=(0.5, 3.0))
    # brute force on a fine grid, approaching each jump from both sides
    grid = np.concatenate([np.linspace(0.5, 3.0, 20001), sups[(sups >= 0.5) & (sups <= 3)] - 1e-12])
    emp = np.array([np.mean(sups <= g) for g in grid])
    brute = np.max(np.abs(emp - np.exp(-grid ** -1.5)))
    assert out["discrepancy"] == pytest.approx(brute, abs=1e-6)
    assert [row["ecdf"] for row in out["table"]] == [1 / 6, 2 / 6, 4 / 6, 5 / 6]


def test_running_max_unit_shot_noise():
    model = ShotNoise(ConstantEta(1.0), JumpLaw(1.5))
    T = 1000.0
    a_T = model.calibrate_scale(T, n=2_000_000, seed=0)
    out = running_max_law(model, T, np.linspace(0.5, 3, 11), 2000, a_T, seed=0, batch=100)
    assert out["discrepancy"] < 0.05
    assert abs(out["theta_running_max"] - 1.0) < 3 * out["theta_running_max_se"] + 0.05


# tightness


def test_tightness_ratio_grows_with_delta():
    model = ShotNoise(ConstantEta(1.0), JumpLaw(1.5))
    rows = tightness_diagnostic(model, 0.0, 1.0, [0.01, 0.05, 0.2, 0.5, 0.9], 5.0, 0.5, n=2000, seed=0)
    est = [r["estimate"] for r in rows]
    assert all(a <= b for a, b in zip(est, est[1:]))
    assert est[0] < est[-1] / 10


def test_tightness_underpowered():
    model = ShotNoise(ConstantEta(1.0), JumpLaw(1.5))
    with pytest.raises(UnderpoweredTest):
        tightness_diagnostic(model, 0.0, 1.0, [0.5], 1e8, n=10, n_marginal=1000)


def test_sup_norm_helper_on_blocks():
    y = P([0, 1], [0, 4.0], 3.0)
    b = extract_blocks(y, 1.0, a_T=2.0)
    assert [sup_norm(b[i], 0.0, 0.999) for i in range(3)] == [0.0, 2.0, 2.0]
    assert isinstance(b.blocks, PathBatch)

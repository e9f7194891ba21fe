import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from rvpaths import rng as rngmod
from rvpaths.clusterlab import gamma_variance_functional
from rvpaths.pathkit import PathBatch, PiecewiseConstantPath
from rvpaths.procsim import ConstantEta, ExpEta, UniformEta, exp_shape, ma_tail_law, shot_noise_tail_law
from rvpaths.tailcore import (EstimatorReport, anchor_density, candidate_conditional_shotnoise,
                              candidate_via_exceedance, candidate_via_theta, check_forward_identity,
                              check_independence_tilted, check_q_normalization, check_tilt_shift,
                              check_time_change, constant, exceedance_capped, infargmax_before,
                              pareto_independence_check, pareto_sample, q_from_theta, sign_sample,
                              sliding_sup_integral, spectral_from_tail, tail_from_q, theta_weights)

P = PiecewiseConstantPath


def unit_q(rng, n):
    return PathBatch(np.zeros((n, 1)), np.ones((n, 1)), np.ones(n))


# Pareto magnitude


def test_pareto_tail_probabilities():
    r = np.random.default_rng(0)
    x = pareto_sample(1.0, r, 1_000_000)
    assert abs(np.mean(x > 2) - 0.5) < 0.002
    assert np.all(x >= 1)
    x2 = pareto_sample(2.0, r, 1_000_000)
    assert abs(np.mean(x2 > 3) - 1 / 9) < 0.001


def test_pareto_rejects_nonpositive_alpha():
    with pytest.raises(ValueError):
        pareto_sample(0.0, np.random.default_rng(0))


def test_sign_sample_frequencies():
    r = np.random.default_rng(1)
    s = sign_sample(0.3, r, 200_000)
    assert set(np.unique(s)) == {-1.0, 1.0}
    assert abs(np.mean(s > 0) - 0.3) < 0.005
    assert np.all(sign_sample(1.0, r, 10) == 1.0)


def test_estimator_report_fields():
    vals = np.arange(10.0)
    rep = EstimatorReport.from_values(vals, seed=7)
    assert rep.estimate == 4.5
    assert rep.std_error == pytest.approx(np.std(vals, ddof=1) / math.sqrt(10))
    lo, hi = rep.ci95
    assert lo == pytest.approx(4.5 - 1.96 * rep.std_error) and hi == pytest.approx(4.5 + 1.96 * rep.std_error)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["seed"] == 7 and d["n"] == 10


# tail law from Q


def test_tail_from_unit_q_is_uniformly_shifted_box():
    law = tail_from_q(unit_q, 1.0, 1.0, mass_bound=1.0)
    th = law.sample_theta(rngmod.substream(0, "t"), 20_000)
    # Theta = 1[-T, 1-T) with T uniform on (0, 1)
    starts = th.breaks[:, 0]
    assert np.all(th.norm_at(0.0) == 1.0)
    assert stats.kstest(-starts, "uniform").pvalue > 1e-3
    assert np.allclose(th.exceedance(0.5), 1.0)
    y = law.sample_y(rngmod.substream(0, "y"), 20_000)
    assert np.all(y.norm_at(0.0) > 1)
    assert np.all(y.exceedance(1.0) == 1.0)


def test_tail_from_q_rejects_bad_normalization():
    with pytest.raises(ValueError):
        tail_from_q(unit_q, 1.0, 2.0, mass_bound=1.0)


# candidate extremal index


def test_candidate_exceedance_deterministic_sessions():
    rep = candidate_via_exceedance(shot_noise_tail_law(ConstantEta(2.0), 1.5), 50_000, seed=3)
    assert rep.estimate == 0.5 and rep.std_error == 0.0
    rep4 = candidate_via_exceedance(shot_noise_tail_law(ConstantEta(4.0), 0.8), 20_000, seed=3)
    assert rep4.estimate == 0.25


def test_candidate_exceedance_exponential_sessions():
    rep = candidate_via_exceedance(shot_noise_tail_law(ExpEta(1.0), 1.5), 100_000, seed=4)
    assert abs(rep.zscore(1.0)) < 3


def test_candidate_theta_unit_shot_noise_is_one_per_draw():
    law = shot_noise_tail_law(ConstantEta(1.0), 0.7)
    th = law.sample_theta(np.random.default_rng(0), 1000)
    assert np.allclose(theta_weights(th, 0.7), 1.0)
    assert candidate_via_theta(law, n=10_000).estimate == pytest.approx(1.0, abs=1e-12)


def test_candidate_theta_discretized_exponential_shape():
    step = 0.01
    shape = exp_shape(step, 25.0)
    # independent oracle: left-endpoint sum of the discretized kernel
    grid = np.exp(-step * np.arange(int(round(25.0 / step))))
    for alpha in (0.5, 0.7, 2.0):
        oracle = 1.0 / (step * np.sum(grid ** alpha))
        rep = candidate_via_theta(ma_tail_law(shape, alpha, chunk=1000), n=5000, seed=1)
        assert rep.estimate == pytest.approx(oracle, rel=1e-9)
        # the step kernel approaches alpha (the continuous value) to first order in the step
        assert abs(rep.estimate - alpha) <= alpha ** 2 * step


def test_candidate_estimators_agree_on_random_sessions():
    law = shot_noise_tail_law(UniformEta(0.0, 1.0), 0.8)
    a = candidate_via_exceedance(law, 100_000, seed=5)
    b = candidate_via_theta(law, n=100_000, seed=6)
    assert abs(a.estimate - b.estimate) < 3 * math.hypot(a.std_error, b.std_error)
    assert abs(a.zscore(2.0)) < 3 and abs(b.zscore(2.0)) < 3


@pytest.mark.parametrize("eta,target", [(ConstantEta(2.0), 0.5), (ExpEta(1.0), 1.0), (UniformEta(0.0, 1.0), 2.0)])
def test_candidate_conditional_shot_noise(eta, target):
    rep = candidate_conditional_shotnoise(eta, 1.0, 100_000, seed=2)
    if rep.std_error == 0:
        assert rep.estimate == target
    else:
        assert abs(rep.zscore(target)) < 3


# Q from Theta


def test_q_from_theta_unit_sessions():
    res = q_from_theta(shot_noise_tail_law(ConstantEta(1.0), 1.3), n=5000, seed=0)
    assert res.theta.estimate == pytest.approx(1.0, abs=1e-12)
    q = res.sample(np.random.default_rng(1), 100)
    assert all(q[i] == P.indicator(0, 1) for i in range(100))


@pytest.mark.parametrize("length", [0.5, 2.0, 3.0])
def test_q_from_theta_single_interval(length):
    res = q_from_theta(shot_noise_tail_law(ConstantEta(length), 1.0), n=5000, seed=0)
    assert res.theta.estimate == pytest.approx(1 / length, rel=1e-12)


def test_q_from_theta_discretized_exponential_alpha2():
    step = 0.01
    res = q_from_theta(ma_tail_law(exp_shape(step, 25.0), 2.0, chunk=1000), n=5000, seed=0)
    grid = np.exp(-step * np.arange(2500))
    assert res.theta.estimate == pytest.approx(1 / (step * np.sum(grid ** 2)), rel=1e-9)
    assert res.ess == pytest.approx(5000)


# identities


def test_time_change_trivial_functional():
    law = shot_noise_tail_law(ExpEta(1.0), 1.5)
    out = check_time_change(law, constant(1.0), 0.0, 2.0, 100_000, seed=0)
    assert abs(out["lhs"].estimate - 2 ** -1.5) < 3 * out["lhs"].std_error
    assert out["rhs"].estimate == pytest.approx(2 ** -1.5)
    assert abs(out["zscore"]) < 3


def test_time_change_capped_exceedance():
    law = shot_noise_tail_law(ExpEta(1.0), 1.5)
    out = check_time_change(law, exceedance_capped(1.0, 10.0), 0.5, 2.0, 100_000, seed=1)
    assert abs(out["zscore"]) < 3


def test_time_change_beyond_support_is_zero():
    law = ma_tail_law(P.indicator(0.0, 1.0), 0.5)
    out = check_time_change(law, constant(1.0), 5.0, 1.0, 20_000, seed=0)
    assert out["lhs"].estimate == 0.0 and out["rhs"].estimate == 0.0


def test_spectral_normalization_and_nonzero():
    law = shot_noise_tail_law(ConstantEta(1.0), 1.2)
    spec = spectral_from_tail(law, radius=1.0)
    z = spec.sample_z(np.random.default_rng(0), 100_000)
    assert np.all(z.sup_all() > 0)
    rep = EstimatorReport.from_values(z.norm_at(0.0) ** 1.2)
    assert abs(rep.zscore(1.0)) < 3


def test_tilt_shift_trivial_and_anchor_functional():
    spec = spectral_from_tail(shot_noise_tail_law(ExpEta(1.0), 1.5), radius=3.0)
    c = check_tilt_shift(spec, constant(2.5), 0.0, 20_000, seed=0)
    # both sides reduce to c E|Z_0|^alpha = c
    assert abs(c["lhs"].zscore(2.5)) < 3 and abs(c["rhs"].zscore(2.5)) < 3
    out = check_tilt_shift(spec, infargmax_before(0.0), 0.3, 100_000, seed=1)
    assert abs(out["zscore"]) < 3


def test_independence_tilted_deterministic_sessions():
    alpha = 1.5
    law = shot_noise_tail_law(ConstantEta(2.0), alpha)
    out = check_independence_tilted(law, constant(1.0), 2.0, 100_000, seed=0)
    assert out["rhs"].estimate == pytest.approx(2 ** -alpha * 0.5)
    assert abs(out["lhs"].zscore(2 ** -alpha * 0.5)) < 3
    assert abs(out["zscore"]) < 3


def test_independence_tilted_exceedance_indicator():
    from rvpaths.tailcore import PathFunctional
    s = PathFunctional("1{exc>1}", lambda b: (b.exceedance(0.5 * b.sup_all()) > 1).astype(float), 1.0)
    out = check_independence_tilted(shot_noise_tail_law(ExpEta(1.0), 1.0), s, 3.0, 100_000, seed=2)
    assert abs(out["zscore"]) < 3


def _ma_theta_sampler(shape_len, alpha):
    return ma_tail_law(P.indicator(0.0, shape_len), alpha)


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_forward_identity_unit_shot_noise(alpha):
    law = shot_noise_tail_law(ConstantEta(1.0), alpha)
    out = check_forward_identity(law.sample_theta, law.sample_q, 1.0, alpha, 100_000, seed=0)
    assert out["lhs"].estimate == pytest.approx(1.0)
    # closed form: alpha E[zeta^(alpha - 1)] with zeta uniform on (0, 1) equals 1
    oracle, _ = integrate.quad(lambda z: alpha * z ** (alpha - 1), 0, 1)
    assert abs(out["rhs"].estimate - oracle) < 4 * out["rhs"].std_error + 1e-12
    assert abs(out["zscore"]) < 4


def test_forward_identity_box2():
    law = ma_tail_law(P.indicator(0.0, 2.0), 0.5)
    out = check_forward_identity(law.sample_theta, law.sample_q, 0.5, 0.5, 100_000, seed=0)
    # lhs = theta 2^alpha; rhs = alpha E[zeta^(alpha-1)], zeta uniform on (0, 2)
    assert out["lhs"].estimate == pytest.approx(0.5 * 2 ** 0.5)
    oracle, _ = integrate.quad(lambda z: 0.5 * z ** -0.5 / 2, 0, 2)
    assert oracle == pytest.approx(0.5 * 2 ** 0.5)
    assert abs(out["zscore"]) < 3


def test_q_normalization_random_sessions():
    law = shot_noise_tail_law(ExpEta(1.0), 0.8)
    out = check_q_normalization(law.sample_q, 1.0, 0.8, 100_000, seed=0)
    assert abs(out["zscore"]) < 3


# anchors


def test_first_exceedance_density_unit_shot_noise():
    law = shot_noise_tail_law(ConstantEta(1.0), 1.0)
    t = np.linspace(-1.5, 0.5, 81)
    tab = anchor_density(law, "first_exceedance", t, 50_000, seed=0)
    inside = (t > -1) & (t <= 0)
    outside = (t < -1) | (t > 0)
    assert np.allclose(tab["f_hat"][inside], 1.0)
    assert np.allclose(tab["f_hat"][outside], 0.0)
    assert abs(tab["mass"] - 1.0) < 0.02
    assert tab["continuity_probability"] == pytest.approx(1.0)


def test_infargmax_density_mass():
    law = shot_noise_tail_law(ExpEta(1.0), 1.0)
    t = np.linspace(-8, 0.5, 341)
    tab = anchor_density(law, "infargmax", t, 50_000, seed=0)
    assert abs(tab["mass"] - 1.0) < 0.02
    assert np.all(tab["f_hat"][t > 0] == 0)


def test_anchor_density_rejects_unknown_anchor():
    with pytest.raises(ValueError):
        anchor_density(shot_noise_tail_law(ConstantEta(1.0), 1.0), "median", [0.0], 10)


# marginal structure


def test_pareto_marginal_and_independence():
    out = pareto_independence_check(shot_noise_tail_law(ExpEta(1.0), 1.5), 100_000, seed=0)
    assert out["ks_pvalue"] > 1e-3
    assert abs(out["correlation_z"]) < 3
    assert out["theta0_unit"] and out["y0_above_one"]


def test_gamma_variance_unit_sessions():
    # |Y_t| ^ 1 equals 1 on a unit interval, so the truncated mass is 1
    r1 = gamma_variance_functional(shot_noise_tail_law(ConstantEta(1.0), 1.0), 50_000, seed=0)
    assert r1.estimate == pytest.approx(2.0)
    # direct route: E[(log Y_0)^2] = 2 / alpha^2 for Pareto(alpha)
    assert abs(r1.meta["zscore_vs_direct"]) < 3
    r2 = gamma_variance_functional(shot_noise_tail_law(ConstantEta(1.0), 2.0), 50_000, seed=0)
    assert r2.estimate == pytest.approx(0.5)
    assert abs(r2.meta["zscore_vs_direct"]) < 3


# sliding sup integral


def _sliding_sup_grid(q, alpha, width, h=1e-3):
    """Midpoint rule in s; the sup over [-s, width - s] is exact (value at -s and every breakpoint inside)."""
    s = np.arange(-q.window_end - 1.0, width - q.window_start + 1.0, h) + h / 2
    total = 0.0
    for si in s:
        pts = np.append(q.breakpoints[(q.breakpoints > -si) & (q.breakpoints <= width - si)], -si)
        total += np.max(np.abs(q.value_at(pts)[:, 0])) ** alpha
    return h * total


def test_sliding_sup_integral_examples():
    box = P.indicator(0.0, 1.0)
    assert sliding_sup_integral(box, 1.0, 10.0) == pytest.approx(11.0)
    two = P([0, 1, 2], [1, 0, 0.5], 3.0)
    assert sliding_sup_integral(two, 1.0, 0.0) == pytest.approx(1.5)
    assert sliding_sup_integral(two, 0.5, 0.0) == pytest.approx(1 + 0.5 ** 0.5)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=4), st.sampled_from([0.5, 1.0, 2.0]),
       st.integers(0, 6))
def test_sliding_sup_integral_against_grid(vals, alpha, w):
    vals = [float(v) for v in vals] + [0.0]
    if max(vals) == 0:
        return
    q = P(np.arange(len(vals)) * 0.5, vals, 0.5 * len(vals))
    width = 0.25 * w
    assert sliding_sup_integral(q, alpha, width) == pytest.approx(_sliding_sup_grid(q, alpha, width), rel=0.01, abs=0.01)

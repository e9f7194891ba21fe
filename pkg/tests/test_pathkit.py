import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rvpaths.pathkit import (INF, NormChoice, PathBatch, PiecewiseConstantPath, batch_from_jumps, exceedance,
                             first_exceedance, infargmax, lp_power_norm, modulus_w_prime, modulus_w_second,
                             pointwise_max, restrict, shift, sup_norm)

P = PiecewiseConstantPath


def steps(breaks, values, end):
    return P(breaks, values, end)


@st.composite
def paths(draw, max_pieces=8):
    k = draw(st.integers(1, max_pieces))
    # dyadic breakpoints keep shifts by dyadic amounts exact
    lengths = [n / 64 for n in draw(st.lists(st.integers(3, 192), min_size=k, max_size=k))]
    start = draw(st.integers(-320, 320)) / 64
    vals = draw(st.lists(st.floats(-4.0, 4.0), min_size=k, max_size=k))
    breaks = start + np.concatenate(([0.0], np.cumsum(lengths[:-1])))
    return P(breaks, vals, start + sum(lengths))


# examples


def test_sup_norm_examples():
    assert sup_norm(P.indicator(0, 3, 2.0), 0, 10) == 2.0
    assert sup_norm(P.constant(0, 5, 0.0), -3, 7) == 0.0
    assert sup_norm(steps([0, 1, 2], [1, -3, 2], 3), 0, 3) == 3.0
    with pytest.raises(ValueError):
        sup_norm(P.indicator(0, 1), 2, 1)


def test_sup_norm_includes_value_at_right_end():
    y = steps([0, 1], [0, 5], 2)
    assert sup_norm(y, 0, 1) == 5.0
    assert sup_norm(y, 0, 0.999) == 0.0


def test_exceedance_examples():
    assert exceedance(P.indicator(0, 3, 2.0), 1) == 3.0
    assert exceedance(P.constant(0, 4, 0.5), 1) == 0.0
    assert exceedance(steps([0, 1, 2], [1.5, 0, 1.5], 4), 1) == 3.0
    assert exceedance(P.constant(0, 1, 0.0, outside=2.0), 1) == INF
    with pytest.raises(ValueError):
        exceedance(P.indicator(0, 1), 0.0)


def test_lp_power_examples():
    assert lp_power_norm(P.indicator(0, 1), 2) == 1.0
    assert lp_power_norm(P.indicator(0, 3, 2.0), 1.5) == pytest.approx(3 * 2 ** 1.5, rel=1e-12)
    with pytest.raises(ValueError):
        lp_power_norm(P.constant(0, 1, 1.0, outside=1.0), 1)


def test_lp_power_discretized_exponential_against_quadrature():
    step = 1e-3
    f = P.from_grid(0.0, step, np.exp(-step * np.arange(int(30 / step))))
    oracle, _ = integrate.quad(lambda t: math.exp(-2 * t), 0, math.inf)
    assert abs(lp_power_norm(f, 2) - oracle) < 1e-3


def test_shift_examples():
    assert shift(P.indicator(0, 1), 2) == P.indicator(2, 3)
    y = steps([0, 1.5, 2], [1, -2, 3], 4)
    same = shift(y, 0.0)
    assert np.array_equal(same.breakpoints, y.breakpoints) and np.array_equal(same.values, y.values)
    assert shift(shift(y, 1.0), -1.0) == y


def test_restrict_examples():
    assert restrict(P.indicator(0, 3, 2.0), 1, 2) == P.indicator(1, 2, 2.0)
    y = steps([0, 1, 2], [1, -3, 2], 3)
    assert restrict(y, 0, 3) == y
    assert restrict(P.constant(0, 4, 0.0), 1, 2) == P.constant(1, 2, 0.0)
    with pytest.raises(ValueError):
        restrict(y, 2, 2)


def test_infargmax_examples():
    assert infargmax(steps([0, 1, 2], [1, 0, 1], 3)) == 0.0
    y = steps([0, 1, 2], [1, 0, 2], 3)
    assert infargmax(y) == 2.0
    assert infargmax(shift(P.indicator(0, 1), 5)) == 5.0
    assert infargmax(P.constant(0, 1, 0.0)) == INF


def test_first_exceedance_examples():
    assert first_exceedance(P.indicator(1, 2, 2.0)) == 1.0
    assert first_exceedance(P.constant(0, 3, 0.5)) == INF
    assert first_exceedance(steps([0, 1], [0.9, 3], 4)) == 1.0


def test_moduli_examples():
    const = P.constant(0, 2, 1.0)
    assert modulus_w_prime(const, 0, 2, 0.5) == 0.0 and modulus_w_second(const, 0, 2, 0.5) == 0.0
    one_jump = steps([0, 1], [0, 1], 2)
    for d in (0.1, 0.5, 1.5):
        assert modulus_w_second(one_jump, 0, 2, d) == 0.0
    two = steps([0, 1, 1.3], [0, 1, 2], 2)
    assert modulus_w_prime(two, 0, 2, 0.5) >= 1.0
    assert modulus_w_second(two, 0, 2, 0.5) == 1.0
    with pytest.raises(ValueError):
        modulus_w_prime(two, 0, 2, 2.0)
    with pytest.raises(ValueError):
        modulus_w_second(two, 0, 2, 0.0)


def _w_prime_grid(path, a, b, delta, h):
    """w' by exhaustive search over cuts on the grid a + h*Z.

    When breakpoints and delta lie on that grid, rounding every cut of an
    admissible partition up to the grid keeps it admissible and cannot raise
    any cell's oscillation, so the grid search is exact.
    """
    n = int(round((b - a) / h))
    m = int(round(delta / h))
    grid = a + h * np.arange(n + 1)
    vals = path.value_at(grid[:-1])[:, 0]
    best = np.full(n + 1, INF)
    best[0] = 0.0
    for j in range(m, n + 1):
        for i in range(0, j - m + 1):
            if best[i] < INF:
                cell = vals[i:j]
                best[j] = min(best[j], max(best[i], float(cell.max() - cell.min())))
    return best[n]


@st.composite
def grid_paths(draw, h=0.25):
    k = draw(st.integers(1, 6))
    lengths = draw(st.lists(st.integers(1, 6), min_size=k, max_size=k))
    vals = draw(st.lists(st.integers(-4, 4), min_size=k, max_size=k))
    breaks = h * np.concatenate(([0], np.cumsum(lengths[:-1])))
    return P(breaks, np.asarray(vals, dtype=float), h * sum(lengths))


@settings(max_examples=150, deadline=None)
@given(grid_paths(), st.integers(1, 12))
def test_w_prime_matches_grid_search(y, m):
    h = 0.25
    a, b = y.window_start, y.window_end
    delta = m * h
    if not delta < b - a:
        return
    assert modulus_w_prime(y, a, b, delta) == _w_prime_grid(y, a, b, delta, h)


def test_serialization_roundtrip_and_inf_sentinel():
    y = steps([0, 1, 2], [1, -3, 2], 3)
    assert P.from_json(y.to_json()) == y
    d = y.to_dict()
    assert d["window"] == [0.0, 3.0] and d["dim"] == 1
    csv_text = y.to_csv(1.0)
    assert csv_text.splitlines()[0] == "t,v1"


def test_constructor_coalesces_and_validates():
    assert steps([0, 1, 2], [1, 1, 2], 3) == steps([0, 2], [1, 2], 3)
    with pytest.raises(ValueError):
        P([0, 0], [1, 2], 1)
    with pytest.raises(ValueError):
        P([0], [math.nan], 1)
    with pytest.raises(ValueError):
        P([0], [1], 0)


def test_vector_norms():
    y = P([0, 1], [[3, 4], [-1, 0.5]], 2)
    assert sup_norm(y, 0, 2, NormChoice.EUCLIDEAN) == 5.0
    assert sup_norm(y, 0, 2, NormChoice.MAX_COORD) == 4.0
    with pytest.raises(ValueError):
        sup_norm(y, 0, 2, NormChoice.SUP_ABS)


def test_batch_agrees_with_single_path_operations():
    rng = np.random.default_rng(3)
    ys = []
    for _ in range(20):
        k = rng.integers(1, 6)
        b = np.sort(rng.uniform(-2, 2, k))
        b[0] = -2.0
        ys.append(P(np.unique(b), rng.normal(0, 2, np.unique(b).size), 2.5))
    batch = PathBatch.from_paths(ys)
    np.testing.assert_allclose(batch.sup(-1.0, 1.0), [sup_norm(y, -1.0, 1.0) for y in ys])
    np.testing.assert_allclose(batch.exceedance(1.0), [exceedance(y, 1.0) for y in ys])
    np.testing.assert_allclose(batch.lp_power(1.5), [lp_power_norm(y, 1.5) for y in ys])
    np.testing.assert_allclose(batch.infargmax(), [infargmax(y) for y in ys])
    np.testing.assert_allclose(batch.first_exceedance(1.0), [first_exceedance(y) for y in ys])


def test_batch_from_jumps_is_running_sum():
    rows = np.array([0, 0, 1, 0])
    times = np.array([0.5, -1.0, 0.2, 1.5])
    jumps = np.array([1.0, 2.0, -1.0, 3.0])
    b = batch_from_jumps(rows, times, jumps, 2, 0.0, 2.0)
    assert b[0] == P([0, 0.5, 1.5], [2, 3, 6], 2.0)
    assert b[1] == P([0, 0.2], [0, -1], 2.0)


def test_pointwise_max_of_boxes():
    m = pointwise_max(P.indicator(0, 2, 1.0), P.indicator(1, 3, 2.0))
    assert m == P([0, 1], [1, 2], 3.0)


# properties


@settings(max_examples=100, deadline=None)
@given(paths(), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_exceedance_monotone_in_level(y, l1, l2):
    lo, hi = min(l1, l2), max(l1, l2)
    assert exceedance(y, lo) >= exceedance(y, hi)


@settings(max_examples=100, deadline=None)
@given(paths(), st.floats(0.1, 3.0), st.floats(0.01, 100.0))
def test_exceedance_homogeneity(y, level, c):
    assert exceedance(y.scale(c), c * level) == exceedance(y, level)


@settings(max_examples=100, deadline=None)
@given(paths(), st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 5))
def test_sup_norm_shift_covariance(y, t, a, width):
    t = round(t * 64) / 64
    a = round(a * 64) / 64
    width = round(width * 64) / 64
    assert sup_norm(shift(y, t), a + t, a + width + t) == sup_norm(y, a, a + width)


@settings(max_examples=100, deadline=None)
@given(paths(), st.floats(0.1, 3.0), st.floats(0.01, 50.0))
def test_lp_power_homogeneity(y, p, c):
    base = lp_power_norm(y, p)
    assert lp_power_norm(y.scale(c), p) == pytest.approx(c ** p * base, rel=1e-12, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(paths(), st.floats(0.05, 2.0))
def test_w_second_below_w_prime(y, delta):
    a, b = y.window_start, y.window_end
    if not delta < b - a:
        return
    assert modulus_w_second(y, a, b, delta) <= modulus_w_prime(y, a, b, delta) + 1e-12


@settings(max_examples=100, deadline=None)
@given(paths(), st.floats(-10, 10), st.floats(0.01, 100))
def test_anchor_equivariance(y, t, c):
    t = round(t * 64) / 64
    ia = infargmax(y)
    if ia != INF:
        assert infargmax(shift(y, t)) == ia + t
        assert infargmax(y.scale(c)) == ia
    fe = first_exceedance(y, 1.0)
    if fe != INF:
        assert first_exceedance(shift(y, t), 1.0) == fe + t
    assert first_exceedance(y.scale(c), c) == fe


@settings(max_examples=60, deadline=None)
@given(paths(), st.floats(-3, 3), st.floats(0.1, 3))
def test_restrict_idempotent(y, a, w):
    r = restrict(y, a, a + w)
    assert restrict(r, a, a + w) == r

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from jammed_rtp.distances import (
    EmpiricalMixedMeasure,
    EmptySampleError,
    WindowError,
    default_bin_width,
    fit_rate,
    mixed_distance_bracket,
    tv_floor,
    tv_to_analytic,
    wasserstein_x,
)
from jammed_rtp.harmonic import harmonic_invariant
from jammed_rtp.measures import instantaneous_linear
from jammed_rtp.streams import TAG_AUX, Streams

M = instantaneous_linear(1.0, 1.0, 2.0)


def exact_sample(measure, n, seed):
    return measure.sample(Streams(seed, np.arange(n), TAG_AUX))


def test_histogram_cells():
    x = np.array([0.0, 0.0, 0.1, 0.2, 0.25, 3.0])
    k = np.array([1, 2, 0, 0, 1, 0])
    emp = EmpiricalMixedMeasure.from_sample((x, k), 3, 0.1, 1.0)
    np.testing.assert_array_equal(emp.atom_counts, [0, 1, 1])
    # bins are right-closed: 0.1 -> bin 0, 0.2 -> bin 1
    assert emp.hist[0, 0] == 1 and emp.hist[0, 1] == 1 and emp.hist[1, 2] == 1
    np.testing.assert_array_equal(emp.overflow, [1, 0, 0])
    assert emp.counts().sum() == 6


def test_empty_and_small_samples():
    with pytest.raises(EmptySampleError):
        EmpiricalMixedMeasure.from_sample((np.zeros(0), np.zeros(0, int)), 3, 0.1, 1.0)
    with pytest.raises(EmptySampleError):
        tv_to_analytic(exact_sample(M, 500, 1), M)


def test_tv_of_exact_sample_is_noise_level():
    small = tv_to_analytic(exact_sample(M, 10_000, 1), M, h=0.2, bootstrap=50)
    large = tv_to_analytic(exact_sample(M, 1_000_000, 1), M, h=0.2, bootstrap=50)
    assert large.value < small.value < 0.05
    assert large.value < 0.005
    assert large.stderr > 0


def test_tv_of_point_mass():
    x = np.full(5000, 1.0)
    k = np.zeros(5000, dtype=int)
    d = tv_to_analytic((x, k), M)
    # all the mass sits in one cell whose exact mass is tiny
    assert d.value > 0.99


def test_tv_floor_and_harmonic_cells():
    hm = harmonic_invariant(1.0, 1.0, 1.0)
    assert default_bin_width(hm) == pytest.approx(0.05)
    assert default_bin_width(M) == pytest.approx(0.075)
    fl = tv_floor(hm, 20_000, seed=3, bootstrap=20)
    assert 0 < fl.value < 0.05


def test_wasserstein_against_scipy():
    rng = np.random.default_rng(0)
    a = rng.exponential(1.0, 700)
    b = rng.exponential(1.3, 450)
    assert wasserstein_x(a, b, 1) == pytest.approx(stats.wasserstein_distance(a, b), rel=1e-10)


def test_wasserstein_shift_and_order():
    a = np.linspace(0, 1, 101)
    assert wasserstein_x(a, a + 0.3, 2) == pytest.approx(0.3)
    assert wasserstein_x(a, a, 1) == 0.0
    with pytest.raises(EmptySampleError):
        wasserstein_x([], a)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0, 10), min_size=1, max_size=40),
    st.lists(st.floats(0, 10), min_size=1, max_size=40),
    st.lists(st.floats(0, 10), min_size=1, max_size=40),
    st.sampled_from([1.0, 2.0]),
)
def test_wasserstein_is_a_metric(a, b, c, p):
    ab, ba = wasserstein_x(a, b, p), wasserstein_x(b, a, p)
    assert ab == pytest.approx(ba, abs=1e-12)
    assert ab <= wasserstein_x(a, c, p) + wasserstein_x(c, b, p) + 1e-9


def test_mixed_bracket_ordering():
    xa, ka = exact_sample(M, 20_000, 1)
    xb, kb = exact_sample(M, 20_000, 2)
    lo, up = mixed_distance_bracket((xa, ka), (xb, kb), 1.0, bootstrap=10, seed=0)
    assert lo.value <= up.value
    assert up.value < 0.1 and lo.stderr > 0
    same_lo, same_up = mixed_distance_bracket((xa, ka), (xa, ka))
    assert same_lo.value == 0.0 and same_up.value == 0.0


def test_mixed_bracket_counts_mode_disagreement():
    x = np.zeros(100)
    lo, up = mixed_distance_bracket((x, np.zeros(100, int)), (x, np.ones(100, int)))
    assert lo.value == 0.0
    assert up.value == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mixed_distance_bracket((x, np.zeros(100, int)), (x[:50], np.zeros(50, int)))


def test_fit_recovers_exact_rate():
    t = np.arange(1.0, 9.0)
    fit = fit_rate(t, 3.0 * np.exp(-0.7 * t))
    assert fit.rate == pytest.approx(0.7, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0))
    assert fit.points_used == 8
    assert set(fit.to_dict()) >= {"rate", "stderr", "window", "chi2_red"}


def test_fit_with_noise_and_weights():
    rng = np.random.default_rng(5)
    t = np.arange(2.0, 13.0)
    y = np.exp(-0.5 * t)
    se = 0.02 * y
    fit = fit_rate(t, y * (1 + rng.normal(0, 0.02, t.size)), se)
    assert abs(fit.rate - 0.5) < 4 * fit.stderr
    assert fit.stderr < 0.05


def test_fit_floor_exclusion_and_window_errors():
    t = np.arange(1.0, 11.0)
    y = np.exp(-t) + 0.01
    se = np.full(t.size, 1e-3)
    fit = fit_rate(t, y, se, floor=0.01)
    assert fit.points_used < t.size
    with pytest.raises(WindowError):
        fit_rate(t, y - 0.5)
    with pytest.raises(WindowError):
        fit_rate(t, y, window=(1.0, 3.0))

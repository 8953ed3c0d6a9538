import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jammed_rtp.chains import (
    ParameterError,
    finite_chain,
    instantaneous_chain,
    spectral_gap,
    spectrum,
    stationary_closed_form,
    stationary_law,
)

rates = st.floats(0.01, 100.0)


def test_instantaneous_layout():
    ch = instantaneous_chain(1.5)
    assert ch.tags == ("+2", "0", "-2")
    np.testing.assert_array_equal(ch.values, [2, 0, -2])
    np.testing.assert_allclose(ch.Q.sum(axis=1), 0)
    assert spectral_gap(ch) == 3.0


def test_finite_layout():
    ch = finite_chain(1.0, 2.0)
    assert ch.tags == ("+2", "+1", "0+-", "00", "-1", "-2")
    np.testing.assert_allclose(ch.Q.sum(axis=1), 0, atol=1e-15)
    assert spectral_gap(ch) == 1.0


def test_q_is_read_only():
    ch = instantaneous_chain(1.0)
    with pytest.raises(ValueError):
        ch.Q[0, 0] = 1.0


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_rejects_bad_rates(bad):
    with pytest.raises(ParameterError):
        instantaneous_chain(bad)
    with pytest.raises(ParameterError):
        finite_chain(1.0, bad)


def test_jump_probabilities_rows():
    P = finite_chain(0.7, 1.3).jump_probabilities()
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert np.all(np.diag(P) == 0)


@given(a=rates, b=rates)
def test_finite_stationary_closed_form(a, b):
    ch = finite_chain(a, b)
    pi = stationary_closed_form(ch)
    assert abs(pi.sum() - 1) < 1e-12
    assert np.max(np.abs(pi @ ch.Q)) <= 1e-12 * max(a, b)
    np.testing.assert_allclose(stationary_law(ch), pi, atol=1e-10)


@given(a=rates, b=rates)
def test_finite_spectrum_matches_eigvals(a, b):
    ch = finite_chain(a, b)
    ev = np.sort(np.linalg.eigvals(ch.Q).real)[::-1]
    np.testing.assert_allclose(ev, spectrum(ch), atol=1e-9 * max(a, b))


@given(w=rates)
def test_instantaneous_spectrum(w):
    ch = instantaneous_chain(w)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(ch.Q).real)[::-1], spectrum(ch), atol=1e-10 * w)
    np.testing.assert_allclose(stationary_law(ch), [0.25, 0.5, 0.25], atol=1e-12)

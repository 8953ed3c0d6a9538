import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jammed_rtp.chains import ParameterError, finite_chain, instantaneous_chain
from jammed_rtp.dynamics import (
    Above,
    AtomIndicator,
    Harmonic,
    Linear,
    Polynomial,
    ProcessSpec,
    State,
    first_passage_times,
    flow,
    hit_zero_time,
    is_glued,
    occupation_average,
    simulate_ensemble,
    simulate_path,
)

LIN = ProcessSpec(Linear(1.0), 2.0, instantaneous_chain(1.0))
FIN = ProcessSpec(Linear(1.0), 3.0, finite_chain(1.0, 1.0))
HAR = ProcessSpec(Harmonic(1.0), 1.0, instantaneous_chain(1.0))


def test_linear_flow_and_hitting():
    assert flow(LIN, "+2", 1.0, 0.5) == 2.0
    assert flow(LIN, "-2", 1.0, 10.0) == 0.0
    assert hit_zero_time(LIN, "-2", 1.0) == pytest.approx(1 / 6)
    assert hit_zero_time(LIN, "+2", 1.0) == math.inf


def test_harmonic_flow_and_hitting():
    assert flow(HAR, "+2", 0.2, 1.0) == pytest.approx(1 - 0.8 * math.exp(-2))
    assert hit_zero_time(HAR, "-2", 0.5) == pytest.approx(math.log(1.5) / 2)
    assert flow(HAR, "0", 0.3, 0.25) == pytest.approx(0.3 * math.exp(-0.5))


def test_glued_sets():
    assert [is_glued(LIN, t) for t in LIN.chain.tags] == [False, True, True]
    assert list(FIN.glued()) == [False, False, True, True, True, True]
    # v = 2c makes the "+1" mode exactly balanced and glued
    edge = ProcessSpec(Linear(1.0), 2.0, finite_chain(1.0, 1.0))
    assert edge.glued()[1]
    assert list(HAR.glued()) == [False, True, True]


def test_spec_validation():
    with pytest.raises(ParameterError):
        ProcessSpec(Linear(2.0), 2.0, instantaneous_chain(1.0))
    with pytest.raises(ParameterError):
        Linear(0.0)
    with pytest.raises(ParameterError):
        Harmonic(-1.0)
    with pytest.raises(ValueError):
        State(-0.1, "+2")
    with pytest.raises(ValueError):
        LIN.mode_index("+1")


def test_path_structure():
    tr = simulate_path(FIN, State(0.5, "00"), 50.0, seed=3)
    ev = tr.events()
    assert ev[0][2] == "start"
    assert np.all(np.diff(tr.times) >= 0)
    assert np.all(tr.xs >= 0)
    for t, s, kind in ev:
        if kind == "hitZero":
            assert s.x == 0.0
    assert tr.end_state() == tr.state_at(50.0)


def test_path_reproducible():
    a = simulate_path(LIN, State(1.0, "0"), 20.0, seed=8)
    b = simulate_path(LIN, State(1.0, "0"), 20.0, seed=8)
    c = simulate_path(LIN, State(1.0, "0"), 20.0, seed=9)
    np.testing.assert_array_equal(a.times, b.times)
    assert not np.array_equal(a.times[:5], c.times[:5])


def test_path_state_continuous_between_events():
    tr = simulate_path(HAR, State(0.2, "+2"), 10.0, seed=1)
    for t in tr.times[1:6]:
        before = tr.state_at(t - 1e-9).x
        assert abs(before - tr.state_at(t).x) < 1e-6


def test_harmonic_stays_in_support():
    snap = simulate_ensemble(HAR, State(0.5, "0"), 5.0, 20_000, seed=2)
    assert snap.x.max() <= HAR.v / HAR.potential.mu + 1e-12


def test_ensemble_matches_paths():
    snaps = simulate_ensemble(LIN, State(0.5, "+2"), [1.0, 3.0], 6, seed=11)
    for i in range(6):
        tr = simulate_path(LIN, State(0.5, "+2"), 3.0, seed=11, replica=i)
        for s in snaps:
            st_ = tr.state_at(s.t)
            assert s.x[i] == pytest.approx(st_.x, abs=1e-12)
            assert s.chain_tags[s.modes[i]] == st_.mode


def test_ensemble_chunk_and_thread_invariance():
    a = simulate_ensemble(FIN, State(0.0, "+2"), [0.5, 2.0], 1000, seed=4)
    b = simulate_ensemble(FIN, State(0.0, "+2"), [0.5, 2.0], 1000, seed=4, chunk=137, threads=3)
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s.x, t.x)
        np.testing.assert_array_equal(s.modes, t.modes)


def test_ensemble_arguments():
    with pytest.raises(ValueError):
        simulate_ensemble(LIN, State(0, "0"), [2.0, 1.0], 10, 0)
    with pytest.raises(ValueError):
        simulate_ensemble(LIN, State(0, "0"), 1.0, 0, 0)
    single = simulate_ensemble(LIN, State(0, "0"), 1.0, 10, 0)
    assert single.size == 10 and len(single.states()) == 10


def test_ensemble_mode_marginal_relaxes_to_pi_q():
    snap = simulate_ensemble(LIN, State(0.0, "+2"), 8.0, 50_000, seed=5)
    freq = np.bincount(snap.modes, minlength=3) / snap.size
    se = np.sqrt(np.array([0.25, 0.5, 0.25]) * 0.75 / snap.size)
    assert np.all(np.abs(freq - [0.25, 0.5, 0.25]) < 4 * se + 1e-3)


def test_occupation_average_matches_quadrature():
    tr = simulate_path(LIN, State(0.3, "+2"), 6.0, seed=12)
    grid = np.linspace(0, 6.0, 60001)
    xs = np.array([tr.state_at(t).x for t in grid])
    ms = [tr.state_at(t).mode for t in grid]
    dt = grid[1] - grid[0]
    direct_poly = np.trapezoid(xs**2, dx=dt) / 6.0
    assert occupation_average(tr, Polynomial((0.0, 0.0, 1.0))) == pytest.approx(direct_poly, rel=1e-4)
    direct_above = np.mean(xs > 0.5)
    assert occupation_average(tr, Above(0.5)) == pytest.approx(direct_above, abs=2e-4)
    direct_atom = np.mean([(x == 0.0) and m == "0" for x, m in zip(xs, ms)])
    assert occupation_average(tr, AtomIndicator("0")) == pytest.approx(direct_atom, abs=2e-4)


def test_first_passage():
    tau = first_passage_times(LIN, State(0.0, "+2"), 1.0, 10.0, 2000, seed=1)
    # starting in +2 at 0 with drift 2, the level is reached by 0.5 at the earliest
    assert np.all(tau >= 0.5 - 1e-12)
    assert np.mean(tau == 0.5) == pytest.approx(math.exp(-1.0), abs=0.04)
    assert np.all(first_passage_times(LIN, State(2.0, "0"), 1.0, 10.0, 5, seed=1) == 0)


@settings(max_examples=25, deadline=None)
@given(x0=st.floats(0, 5), seed=st.integers(0, 2**32), horizon=st.floats(0.1, 20))
def test_path_is_nonnegative_and_clamped(x0, seed, horizon):
    tr = simulate_path(FIN, State(x0, "-1"), horizon, seed)
    assert np.all(tr.xs >= 0)
    # a glued mode never leaves 0 until the next jump
    glued = FIN.glued()
    for i in range(len(tr) - 1):
        if tr.xs[i] == 0.0 and glued[tr.modes[i]]:
            assert tr.xs[i + 1] == 0.0

import math

import numpy as np
import pytest

from jammed_rtp.chains import finite_chain, instantaneous_chain, stationary_closed_form
from jammed_rtp.couplings import (
    SINGLE_STATES,
    CouplingError,
    couple_harmonic_synchronous,
    couple_linear_synchronous,
    coupled_ensemble,
    domination_ensemble,
    lift,
    meeting_time_tv,
    pair_driver,
    relative_mode,
    single_particle_generator,
    single_velocity_dominate,
)
from jammed_rtp.dynamics import Harmonic, Linear, ProcessSpec, State, simulate_ensemble
from jammed_rtp.measures import finite_linear, instantaneous_linear

LIN = ProcessSpec(Linear(1.0), 2.0, instantaneous_chain(1.0))
FIN = ProcessSpec(Linear(1.0), 3.0, finite_chain(1.0, 1.0))
HAR = ProcessSpec(Harmonic(1.0), 1.0, instantaneous_chain(1.0))


@pytest.mark.parametrize("kind", ["instantaneous", "finite"])
def test_lift_is_a_right_inverse(kind):
    chain = instantaneous_chain(1.0) if kind == "instantaneous" else finite_chain(1.0, 1.0)
    for tag in chain.tags:
        assert relative_mode(kind, *lift(kind, tag)) == tag


@pytest.mark.parametrize("chain", [instantaneous_chain(1.3), finite_chain(0.7, 2.1)])
def test_two_particles_lump_to_the_relative_chain(chain):
    S = SINGLE_STATES[chain.kind]
    q = single_particle_generator(chain)
    states = [(a, b) for a in S for b in S]
    Q2 = np.kron(q, np.eye(len(S))) + np.kron(np.eye(len(S)), q)
    rel = [chain.index(relative_mode(chain.kind, a, b)) for a, b in states]
    for i, s in enumerate(states):
        lumped = np.zeros(chain.size)
        for j in range(len(states)):
            lumped[rel[j]] += Q2[i, j]
        np.testing.assert_allclose(lumped, chain.Q[rel[i]], atol=1e-14)


@pytest.mark.parametrize("chain", [instantaneous_chain(1.3), finite_chain(0.7, 2.1)])
def test_each_copy_of_the_driver_is_markov_with_q(chain):
    drv = pair_driver(chain)
    np.testing.assert_allclose(drv.Q.sum(axis=1), 0, atol=1e-13)
    for modes in (drv.mode_a, drv.mode_b):
        for i in range(drv.size):
            lumped = np.bincount(modes, weights=drv.Q[i], minlength=chain.size)
            np.testing.assert_allclose(lumped, chain.Q[modes[i]], atol=1e-13)


def test_synced_states_are_absorbing():
    drv = pair_driver(finite_chain(1.0, 1.0))
    for i in np.nonzero(drv.synced)[0]:
        assert drv.mode_a[i] == drv.mode_b[i]
        out = np.nonzero(drv.Q[i])[0]
        assert np.all(drv.synced[out])


def test_single_coupled_path():
    cp = couple_linear_synchronous(FIN, State(0.0, "+2"), State(2.0, "-2"), 30.0, seed=1)
    a, b = cp.path_a, cp.path_b
    after = a.times >= cp.coalescence_time
    assert np.all(a.modes[after] == b.modes[after])
    assert cp.synced_time >= cp.coalescence_time
    assert cp.meeting_time >= cp.coalescence_time
    m = a.times >= cp.meeting_time
    np.testing.assert_array_equal(a.xs[m], b.xs[m])


def test_coupling_rejects_wrong_potential():
    with pytest.raises(CouplingError):
        couple_linear_synchronous(HAR, State(0, "0"), State(0, "0"), 1.0, 0)
    with pytest.raises(CouplingError):
        couple_harmonic_synchronous(LIN, State(0, "0"), State(0, "0"), 1.0, 0)
    with pytest.raises(CouplingError):
        meeting_time_tv(HAR, State(0, "0"), None, [1.0], 10, 0)


def test_coupled_pair_csv(tmp_path):
    cp = couple_harmonic_synchronous(HAR, State(0.9, "+2"), State(0.1, "-2"), 5.0, seed=2)
    p = tmp_path / "pair.csv"
    cp.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,xA,sigmaA,xB,sigmaB,coalesced_flag"
    assert len(lines) == len(cp.path_a) + 1


@pytest.mark.parametrize("spec,b", [(LIN, State(3.0, "-2")), (FIN, State(0.0, "00")), (HAR, State(0.1, "-2"))])
def test_pathwise_properties_hold(spec, b):
    rep = coupled_ensemble(spec, State(0.5, "+2"), b, [0.5, 2.0, 6.0], 10_000, seed=5)
    assert rep.violations == 0
    assert rep.segments_checked > 10_000
    assert rep.worst_slack >= -1e-12
    assert np.all(np.diff(rep.not_synced) <= 0)
    assert np.all(rep.mode_mismatch <= rep.mismatch)


def test_copies_have_the_right_marginal_law():
    t = [1.0, 3.0]
    n = 40_000
    rep = coupled_ensemble(FIN, State(0.5, "+2"), State(0.0, "00"), t, n, seed=9, check=False, keep=True)
    ref = simulate_ensemble(FIN, State(0.5, "+2"), t, n, seed=10)
    for (xa, ka, _, _), s in zip(rep.snapshots, ref):
        se = math.sqrt(xa.var() / n + s.x.var() / n)
        assert abs(xa.mean() - s.x.mean()) < 5 * se
        for j in range(FIN.chain.size):
            p = np.mean(s.modes == j)
            assert abs(np.mean(ka == j) - p) < 5 * math.sqrt(2 * p * (1 - p) / n) + 1e-9


def test_mode_mismatch_envelope():
    # from a single lifted start the modes differ with probability at most 2 exp(-lambda_Q t)
    t = np.array([0.5, 1.0, 2.0, 3.0])
    rep = coupled_ensemble(LIN, State(0.0, "+2"), instantaneous_linear(1, 1, 2), t, 20_000, seed=2024, check=False)
    se = np.sqrt(rep.mode_mismatch * (1 - rep.mode_mismatch) / rep.n)
    assert np.all(rep.mode_mismatch <= 2 * np.exp(-2.0 * t) + 4 * se)


def test_meeting_time_tv_from_stationarity_is_small():
    m = finite_linear(1, 1, 1, 3)
    times, p, se = meeting_time_tv(FIN, State(0.0, "00"), m, [1.0, 4.0, 8.0], 20_000, seed=1)
    assert p[0] > p[1] > p[2]
    assert np.all(se >= 0) and np.all(p <= 1)


def test_domination_single_path():
    d = single_velocity_dominate(FIN, State(1.0, "+1"), 20.0, seed=2)
    assert d.min_slack >= 0
    assert np.all(d.y1 + d.y2 >= d.x - 1e-12)
    assert np.all(d.y1 >= 0) and np.all(d.y2 >= 0)
    np.testing.assert_array_equal(
        [relative_mode("finite", a, b) for a, b in zip(d.s1, d.s2)], [FIN.chain.tags[k] for k in d.modes]
    )


def test_domination_ensemble():
    rep = domination_ensemble(FIN, State(0.0, "+2"), 20.0, 10_000, seed=3)
    assert rep.violations == 0
    assert np.all(rep.ysum >= rep.x - 1e-9)


def test_domination_needs_finite_linear():
    with pytest.raises(CouplingError):
        domination_ensemble(LIN, State(0.0, "+2"), 1.0, 10, 0)

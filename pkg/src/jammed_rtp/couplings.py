"""Synchronous couplings of two copies, and the single-velocity construction.

Each relative mode is the image f(s1, s2) of two single-particle velocities.
A coupling runs two independent pair chains (s_i, s~_i), one per particle,
and both copies follow the clamped flow of their own relative mode between
the combined jump times.  Pathwise properties are checked in event callbacks
so that they are verified on every segment, not only at observation times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chains import ModeChain
from .dynamics import (
    JUMP,
    START,
    EnsembleEngine,
    ProcessSpec,
    State,
    Trajectory,
    initial_arrays,
)
from .streams import TAG_DYNAMICS, Streams

__all__ = [
    "CouplingError",
    "PairDriver",
    "pair_driver",
    "single_particle_generator",
    "relative_mode",
    "lift",
    "CoupledPair",
    "couple_linear_synchronous",
    "couple_harmonic_synchronous",
    "CoupledEnsembleReport",
    "coupled_ensemble",
    "SingleVelocityDecomposition",
    "single_velocity_dominate",
    "DominationReport",
    "domination_ensemble",
    "meeting_time_tv",
]


# rounding allowance for y1 + y2 - x; the three positions are updated separately
# so their floating-point errors accumulate along a path
DOMINATION_TOL = 1e-12


class CouplingError(ValueError):
    """Coupling requested for a process it does not apply to."""


SINGLE_STATES = {"instantaneous": (1, -1), "finite": (1, 0, -1)}

# canonical (s1, s2) preimage of each relative mode
_LIFTS = {
    "instantaneous": {"+2": (-1, 1), "0": (1, 1), "-2": (1, -1)},
    "finite": {"+2": (-1, 1), "+1": (0, 1), "0+-": (1, 1), "00": (0, 0), "-1": (1, 0), "-2": (1, -1)},
}


def relative_mode(kind: str, s1: int, s2: int) -> str:
    d = s2 - s1
    if d != 0:
        return f"{d:+d}"
    if kind == "instantaneous":
        return "0"
    return "00" if s1 == 0 else "0+-"


def lift(kind: str, tag: str) -> tuple[int, int]:
    return _LIFTS[kind][tag]


def single_particle_generator(chain: ModeChain) -> np.ndarray:
    if chain.kind == "instantaneous":
        w = chain.params["omega"]
        return np.array([[-w, w], [w, -w]])
    a, b = chain.params["alpha"], chain.params["beta"]
    return np.array([[-a, a, 0.0], [b / 2, -b, b / 2], [0.0, a, -a]])


def _pair_generator(chain: ModeChain):
    """Generator of one particle's pair (s, s~) and its state list."""
    S = SINGLE_STATES[chain.kind]
    states = [(a, b) for a in S for b in S]
    idx = {s: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))

    def add(src, dst, rate):
        Q[idx[src], idx[dst]] += rate

    if chain.kind == "instantaneous":
        w = chain.params["omega"]
        for a, b in states:
            if a == b:
                add((a, b), (-a, -a), w)
            else:
                add((a, b), (a, a), w)
                add((a, b), (b, b), w)
    else:
        al, be = chain.params["alpha"], chain.params["beta"]
        for a, b in states:
            if (a, b) == (0, 0):
                add((0, 0), (1, 1), be / 2)
                add((0, 0), (-1, -1), be / 2)
                continue
            add((a, b), (0, 0), al)
            if a == 0:
                add((a, b), (1, b), be / 2)
                add((a, b), (-1, b), be / 2)
            elif b == 0:
                add((a, b), (a, 1), be / 2)
                add((a, b), (a, -1), be / 2)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return states, Q


@dataclass(frozen=True, eq=False)
class PairDriver:
    """Product of two independent pair chains, one per particle.

    State index is p1 * m + p2 where p_i indexes the pair (s_i, s~_i).
    """

    chain: ModeChain
    pair_states: tuple
    Q: np.ndarray
    mode_a: np.ndarray  # relative mode index of copy A per driver state
    mode_b: np.ndarray
    synced: np.ndarray  # both pairs on the diagonal: modes agree forever

    @property
    def size(self) -> int:
        return self.Q.shape[0]

    def index(self, s1, s1t, s2, s2t):
        m = len(self.pair_states)
        pos = {s: i for i, s in enumerate(self.pair_states)}
        return np.array([pos[(a, b)] * m + pos[(c, d)] for a, b, c, d in zip(s1, s1t, s2, s2t)], dtype=np.int64)

    def start(self, modes_a, modes_b):
        """Driver states from the canonical lifts of two arrays of mode indices."""
        tags = self.chain.tags
        la = [lift(self.chain.kind, tags[k]) for k in np.asarray(modes_a)]
        lb = [lift(self.chain.kind, tags[k]) for k in np.asarray(modes_b)]
        return self.index([p[0] for p in la], [p[0] for p in lb], [p[1] for p in la], [p[1] for p in lb])


def pair_driver(chain: ModeChain) -> PairDriver:
    states, Qp = _pair_generator(chain)
    m = len(states)
    I = np.eye(m)
    Q = np.kron(Qp, I) + np.kron(I, Qp)
    ma, mb, sync = [], [], []
    for p1 in states:
        for p2 in states:
            ma.append(chain.index(relative_mode(chain.kind, p1[0], p2[0])))
            mb.append(chain.index(relative_mode(chain.kind, p1[1], p2[1])))
            sync.append(p1[0] == p1[1] and p2[0] == p2[1])
    return PairDriver(chain, tuple(states), Q, np.array(ma), np.array(mb), np.array(sync))


# single coupled paths


@dataclass
class CoupledPair:
    path_a: Trajectory
    path_b: Trajectory
    coalescence_time: float  # modes agree at every event from here to the horizon
    meeting_time: float  # first time the two states coincide (inf if not within horizon)
    synced_time: float  # both pair chains on their diagonals

    def to_csv(self, path):
        tags = self.path_a.spec.chain.tags
        a, b = self.path_a, self.path_b
        with open(path, "w") as fh:
            fh.write("t,xA,sigmaA,xB,sigmaB,coalesced_flag\n")
            for t, xa, ka, xb, kb in zip(a.times, a.xs, a.modes, b.xs, b.modes):
                flag = int(t >= self.coalescence_time)
                fh.write(f"{t:.17g},{xa:.17g},{tags[ka]},{xb:.17g},{tags[kb]},{flag}\n")


def _hit_or_zero(fl, x, k):
    return 0.0 if x == 0.0 else float(fl.hit_time(np.float64(x), k))


def _couple(spec: ProcessSpec, init_a: State, init_b: State, horizon: float, seed: int, replica: int) -> CoupledPair:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    drv = pair_driver(spec.chain)
    ka, kb = spec.mode_index(init_a.mode), spec.mode_index(init_b.mode)
    k0 = drv.start([ka], [kb])
    base = spec.mode_flow()
    eng = EnsembleEngine(
        drv.Q, [base.reindex(drv.mode_a), base.reindex(drv.mode_b)], k0, [init_a.x, init_b.x],
        Streams(seed, [replica], TAG_DYNAMICS),
    )
    rec = [(0.0, float(init_a.x), float(init_b.x), int(k0[0]))]

    def on_event(e, idx):
        rec.append((float(e.t[0]), float(e.x[0][0]), float(e.x[1][0]), int(e.k[0])))

    eng.advance(horizon, on_event)
    times = np.array([r[0] for r in rec])
    xa = np.array([r[1] for r in rec])
    xb = np.array([r[2] for r in rec])
    ks = np.array([r[3] for r in rec])
    ma, mb = drv.mode_a[ks], drv.mode_b[ks]
    kinds = np.full(len(rec), JUMP, dtype=np.int8)
    kinds[0] = START
    pa = Trajectory(spec, times, xa, ma, kinds, float(horizon), xa, times)
    pb = Trajectory(spec, times, xb, mb, kinds.copy(), float(horizon), xb, times)

    diff = np.nonzero(ma != mb)[0]
    if diff.size == 0:
        coal = 0.0
    elif diff[-1] == len(rec) - 1:
        coal = np.inf
    else:
        coal = float(times[diff[-1] + 1])
    sy = np.nonzero(drv.synced[ks])[0]
    synced = float(times[sy[0]]) if sy.size else np.inf

    meet = np.inf
    glued = spec.glued()
    ends = np.append(times[1:], horizon)
    for i in range(len(rec)):
        if ma[i] != mb[i]:
            continue
        if xa[i] == xb[i]:
            meet = float(times[i])
            break
        if not glued[ma[i]]:
            continue
        ta, tb = _hit_or_zero(base, xa[i], ma[i]), _hit_or_zero(base, xb[i], mb[i])
        tm = times[i] + max(ta, tb)
        if tm <= ends[i]:
            meet = float(tm)
            break
    return CoupledPair(pa, pb, coal, meet, synced)


def couple_linear_synchronous(spec, init_a: State, init_b: State, horizon: float, seed: int, replica: int = 0):
    if not spec.is_linear:
        raise CouplingError("the linear synchronous coupling needs a linear potential; use the harmonic coupling")
    return _couple(spec, init_a, init_b, horizon, seed, replica)


def couple_harmonic_synchronous(spec, init_a: State, init_b: State, horizon: float, seed: int, replica: int = 0):
    if spec.is_linear:
        raise CouplingError("the harmonic synchronous coupling needs a harmonic potential")
    if spec.chain.kind != "instantaneous":
        raise CouplingError("the harmonic process is defined for the instantaneous chain only")
    return _couple(spec, init_a, init_b, horizon, seed, replica)


# vectorised coupled ensembles


@dataclass
class CoupledEnsembleReport:
    times: np.ndarray
    mismatch: np.ndarray  # fraction with (xA, sA) != (xB, sB) at each time
    mode_mismatch: np.ndarray  # fraction with sA != sB at each time
    not_synced: np.ndarray  # fraction whose pair chains have not both coalesced
    n: int
    segments_checked: int
    violations: int  # order (linear) or contraction (harmonic) failures on equal-mode segments
    worst_slack: float  # min over equal-mode segments of the pathwise margin
    snapshots: list  # (xA, kA, xB, kB) per time


def coupled_ensemble(spec: ProcessSpec, init_a, init_b, times, n: int, seed: int, check: bool = True,
                     keep: bool = False, chunk: int = 100_000) -> CoupledEnsembleReport:
    """Run n coupled pairs; ``init_a``/``init_b`` are States or invariant samplers.

    When ``check`` is set, every segment on which the two modes agree is tested:
    ordering is preserved (linear) or the gap contracts by exp(-2 mu dt)
    (harmonic).
    """
    times = [float(t) for t in times]
    drv = pair_driver(spec.chain)
    base = spec.mode_flow()
    flows = [base.reindex(drv.mode_a), base.reindex(drv.mode_b)]
    mis = np.zeros(len(times))
    mmis = np.zeros(len(times))
    nsync = np.zeros(len(times))
    stats = {"segments": 0, "violations": 0, "slack": np.inf}
    snaps = [[] for _ in times]
    two_mu = None if spec.is_linear else 2.0 * spec.potential.mu
    for s in range(0, n, chunk):
        reps = np.arange(s, min(n, s + chunk), dtype=np.uint64)
        xa, ka = initial_arrays(spec, init_a, seed, reps)
        xb, kb = initial_arrays(spec, init_b, seed, reps)
        k0 = drv.start(ka, kb)
        eng = EnsembleEngine(drv.Q, flows, k0, [xa, xb], Streams(seed, reps, TAG_DYNAMICS))
        prev = {"k": eng.k.copy(), "xa": eng.x[0].copy(), "xb": eng.x[1].copy(), "t": eng.t.copy()}

        def on_event(e, idx):
            k = prev["k"][idx]
            same = drv.mode_a[k] == drv.mode_b[k]
            if np.any(same):
                i = idx[same]
                d0 = prev["xa"][i] - prev["xb"][i]
                d1 = e.x[0][i] - e.x[1][i]
                if two_mu is None:
                    # ordering: sign can only move towards equality
                    slack = np.where(d0 >= 0, d1, -d1)
                    slack = np.where(d0 == 0, -np.abs(d1), slack)
                else:
                    dt = e.t[i] - prev["t"][i]
                    slack = np.exp(-two_mu * dt) * np.abs(d0) - np.abs(d1)
                stats["segments"] += i.size
                stats["violations"] += int(np.sum(slack < -1e-12))
                stats["slack"] = min(stats["slack"], float(slack.min()))
            prev["k"][idx] = e.k[idx]
            prev["xa"][idx] = e.x[0][idx]
            prev["xb"][idx] = e.x[1][idx]
            prev["t"][idx] = e.t[idx]

        for j, t in enumerate(times):
            eng.advance(t, on_event if check else None)
            if check:
                # close the open segments at the observation time
                sub = np.arange(reps.size)
                on_event(eng, sub)
            ma, mb = drv.mode_a[eng.k], drv.mode_b[eng.k]
            diff = (ma != mb) | (eng.x[0] != eng.x[1])
            mis[j] += diff.sum()
            mmis[j] += (ma != mb).sum()
            nsync[j] += (~drv.synced[eng.k]).sum()
            if keep:
                snaps[j].append((eng.x[0].copy(), ma, eng.x[1].copy(), mb))
    if keep:
        snaps = [tuple(np.concatenate(p) for p in zip(*chunks)) for chunks in snaps]
    return CoupledEnsembleReport(
        np.array(times), mis / n, mmis / n, nsync / n, n, stats["segments"], stats["violations"],
        stats["slack"], snaps if keep else [],
    )


def meeting_time_tv(spec: ProcessSpec, init_a: State, law_b, t_grid, n: int, seed: int, chunk: int = 100_000):
    """Coupling-inequality TV bound P(X(t) != X~(t)) with X~(0) drawn from ``law_b``.

    Returns (times, estimate, standard error).
    """
    if not spec.is_linear:
        raise CouplingError("the total-variation coupling bound is for the linear processes")
    rep = coupled_ensemble(spec, init_a, law_b, t_grid, n, seed, check=False, chunk=chunk)
    p = rep.mismatch
    return rep.times, p, np.sqrt(p * (1 - p) / n)


# single velocity construction


def _single_velocity_setup(spec: ProcessSpec):
    if not spec.is_linear or spec.chain.kind != "finite":
        raise CouplingError("the single-velocity construction needs the finite chain and a linear potential")
    S = SINGLE_STATES["finite"]
    Qs = single_particle_generator(spec.chain)
    I = np.eye(3)
    Q = np.kron(Qs, I) + np.kron(I, Qs)
    pairs = [(a, b) for a in S for b in S]
    c, v = spec.potential.c, spec.v
    from .dynamics import LinearFlow

    mode = np.array([spec.chain.index(relative_mode("finite", a, b)) for a, b in pairs])
    fx = spec.mode_flow().reindex(mode)
    # y1 moves with -c - v s1, y2 with -c + v s2, so that y1' + y2' matches x'
    fy1 = LinearFlow(np.array([-c - v * a for a, _ in pairs]))
    fy2 = LinearFlow(np.array([-c + v * b for _, b in pairs]))
    return pairs, Q, mode, [fx, fy1, fy2]


def _breakpoint_slack(flows, x0s, k, dt):
    """min over the segment of y1 + y2 - x, evaluated at every clamp breakpoint."""
    cand = [np.zeros_like(dt), dt]
    for f, x0 in zip(flows, x0s):
        h = f.hit_time(x0, k)
        cand.append(np.where(h < dt, h, dt))
    worst = np.full(dt.shape, np.inf)
    for s in cand:
        x, y1, y2 = (f(x0, k, s) for f, x0 in zip(flows, x0s))
        tol = DOMINATION_TOL * np.maximum(1.0, x)
        worst = np.minimum(worst, y1 + y2 - x + tol)
    return worst


@dataclass
class SingleVelocityDecomposition:
    times: np.ndarray
    x: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    modes: np.ndarray
    horizon: float
    min_slack: float  # min of y1 + y2 - x over all segments, after the rounding allowance


def single_velocity_dominate(spec: ProcessSpec, init: State, horizon: float, seed: int, replica: int = 0):
    pairs, Q, mode, flows = _single_velocity_setup(spec)
    k_rel = spec.mode_index(init.mode)
    s1, s2 = lift("finite", spec.chain.tags[k_rel])
    k0 = pairs.index((s1, s2))
    x0 = float(init.x)
    eng = EnsembleEngine(Q, flows, [k0], [x0, x0 / 2, x0 / 2], Streams(seed, [replica], TAG_DYNAMICS))
    rec = [(0.0, x0, x0 / 2, x0 / 2, k0)]
    worst = [np.inf]
    last = {"k": np.array([k0]), "t": 0.0, "x": [np.array([x0]), np.array([x0 / 2]), np.array([x0 / 2])]}

    def on_event(e, idx):
        dt = np.array([e.t[0] - last["t"]])
        worst[0] = min(worst[0], float(_breakpoint_slack(flows, last["x"], last["k"], dt)[0]))
        rec.append((float(e.t[0]), float(e.x[0][0]), float(e.x[1][0]), float(e.x[2][0]), int(e.k[0])))
        last.update(k=e.k.copy(), t=float(e.t[0]), x=[a.copy() for a in e.x])

    eng.advance(horizon, on_event)
    dt = np.array([horizon - last["t"]])
    worst[0] = min(worst[0], float(_breakpoint_slack(flows, last["x"], last["k"], dt)[0]))
    arr = np.array(rec)
    ks = arr[:, 4].astype(np.int64)
    return SingleVelocityDecomposition(
        arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3],
        np.array([pairs[k][0] for k in ks]), np.array([pairs[k][1] for k in ks]), mode[ks],
        float(horizon), worst[0],
    )


@dataclass
class DominationReport:
    n: int
    segments_checked: int
    violations: int
    min_slack: float
    x: np.ndarray  # final x
    ysum: np.ndarray  # final y1 + y2


def domination_ensemble(spec: ProcessSpec, init: State, horizon: float, n: int, seed: int, chunk: int = 100_000):
    """Vectorised domination check over n independent single-velocity constructions."""
    pairs, Q, mode, flows = _single_velocity_setup(spec)
    s1, s2 = lift("finite", spec.chain.tags[spec.mode_index(init.mode)])
    k0 = pairs.index((s1, s2))
    x0 = float(init.x)
    stats = {"segments": 0, "violations": 0, "slack": np.inf}
    xs, ys = [], []
    for s in range(0, n, chunk):
        reps = np.arange(s, min(n, s + chunk), dtype=np.uint64)
        eng = EnsembleEngine(Q, flows, k0, [x0, x0 / 2, x0 / 2], Streams(seed, reps, TAG_DYNAMICS))
        prev = {"k": eng.k.copy(), "t": eng.t.copy(), "x": [a.copy() for a in eng.x]}

        def check(e, idx):
            dt = e.t[idx] - prev["t"][idx]
            sl = _breakpoint_slack(flows, [a[idx] for a in prev["x"]], prev["k"][idx], dt)
            stats["segments"] += idx.size
            stats["violations"] += int(np.sum(sl < 0))
            stats["slack"] = min(stats["slack"], float(sl.min()))
            prev["k"][idx] = e.k[idx]
            prev["t"][idx] = e.t[idx]
            for j in range(3):
                prev["x"][j][idx] = e.x[j][idx]

        eng.advance(horizon, check)
        check(eng, np.arange(reps.size))
        xs.append(eng.x[0].copy())
        ys.append(eng.x[1] + eng.x[2])
    return DominationReport(n, stats["segments"], stats["violations"], stats["slack"], np.concatenate(xs), np.concatenate(ys))

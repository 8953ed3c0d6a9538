"""Exact event-driven simulation of the jammed relative coordinate.

Between mode changes the distance follows an explicit flow clamped at 0, so
no time step appears anywhere.  Randomness comes from per-replica counter
streams: a replica uses exactly one draw (holding time, successor) each time
it enters a mode.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .chains import ModeChain, ParameterError
from .streams import TAG_DYNAMICS, TAG_INIT, Streams

__all__ = [
    "Linear",
    "Harmonic",
    "ProcessSpec",
    "State",
    "Trajectory",
    "Snapshot",
    "LinearFlow",
    "HarmonicFlow",
    "JumpSampler",
    "EnsembleEngine",
    "flow",
    "is_glued",
    "hit_zero_time",
    "simulate_path",
    "simulate_ensemble",
    "occupation_average",
    "AtomIndicator",
    "Above",
    "Polynomial",
    "first_passage_times",
    "START",
    "JUMP",
    "HIT_ZERO",
]

START, JUMP, HIT_ZERO = 0, 1, 2
KIND_NAMES = {START: "start", JUMP: "jump", HIT_ZERO: "hitZero"}


@dataclass(frozen=True)
class Linear:
    c: float

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise ParameterError("linear force c must be positive")


@dataclass(frozen=True)
class Harmonic:
    mu: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ParameterError("stiffness mu must be positive")


@dataclass(frozen=True, eq=False)
class ProcessSpec:
    potential: Linear | Harmonic
    v: float
    chain: ModeChain

    def __post_init__(self):
        if not (np.isfinite(self.v) and self.v > 0):
            raise ParameterError("propulsion speed v must be positive")
        if isinstance(self.potential, Linear) and not self.v > self.potential.c:
            raise ParameterError("the linear process needs v > c")

    @property
    def is_linear(self) -> bool:
        return isinstance(self.potential, Linear)

    def mode_index(self, mode) -> int:
        if isinstance(mode, (int, np.integer)):
            if not 0 <= mode < self.chain.size:
                raise ValueError(f"mode index {mode} out of range")
            return int(mode)
        tag = getattr(mode, "tag", mode)
        try:
            return self.chain.index(str(tag))
        except ValueError:
            raise ValueError(f"unknown mode {mode!r} for the {self.chain.kind} chain") from None

    def mode_flow(self) -> "LinearFlow | HarmonicFlow":
        vals = self.chain.values
        if self.is_linear:
            return LinearFlow(self.v * vals - 2.0 * self.potential.c)
        mu = self.potential.mu
        return HarmonicFlow(mu, self.v * vals / (2.0 * mu))

    def glued(self) -> np.ndarray:
        vals = self.chain.values
        if self.is_linear:
            return self.v * vals <= 2.0 * self.potential.c
        return vals <= 0


@dataclass(frozen=True)
class State:
    x: float
    mode: str

    def __post_init__(self):
        if not (np.isfinite(self.x) and self.x >= 0):
            raise ValueError("state position must be a finite nonnegative number")


class LinearFlow:
    """x -> max(0, x + drift[k] t)."""

    def __init__(self, drift):
        self.drift = np.asarray(drift, dtype=float)

    def reindex(self, m) -> "LinearFlow":
        return LinearFlow(self.drift[np.asarray(m)])

    def __call__(self, x, k, t):
        return np.maximum(0.0, x + self.drift[k] * t)

    def hit_time(self, x, k):
        d = self.drift[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where((d < 0) & (x > 0), x / -d, np.inf)
        return out

    def level_time(self, x, k, level):
        """Time for the unclamped flow to reach ``level`` from below (inf if never)."""
        d = self.drift[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(d > 0, (level - x) / d, np.inf)


class HarmonicFlow:
    """x -> max(0, x* + exp(-2 mu t)(x - x*)) with x* = v sigma / (2 mu)."""

    def __init__(self, mu: float, xstar):
        self.mu = float(mu)
        self.xstar = np.asarray(xstar, dtype=float)

    def reindex(self, m) -> "HarmonicFlow":
        return HarmonicFlow(self.mu, self.xstar[np.asarray(m)])

    def __call__(self, x, k, t):
        xs = self.xstar[k]
        return np.maximum(0.0, xs + np.exp(-2.0 * self.mu * t) * (x - xs))

    def hit_time(self, x, k):
        xs = self.xstar[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where((xs < 0) & (x > 0), np.log((x - xs) / -xs) / (2.0 * self.mu), np.inf)
        return out

    def level_time(self, x, k, level):
        xs = self.xstar[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(xs > level, np.log((xs - x) / (xs - level)) / (2.0 * self.mu), np.inf)


def flow(spec: ProcessSpec, mode, x0: float, t: float) -> float:
    if t < 0 or x0 < 0:
        raise ValueError("flow needs t >= 0 and x0 >= 0")
    return float(spec.mode_flow()(x0, spec.mode_index(mode), t))


def is_glued(spec: ProcessSpec, mode) -> bool:
    return bool(spec.glued()[spec.mode_index(mode)])


def hit_zero_time(spec: ProcessSpec, mode, x0: float) -> float:
    return float(spec.mode_flow().hit_time(np.float64(x0), spec.mode_index(mode)))


class JumpSampler:
    """Holding time and successor for a generator, from one two-uniform draw."""

    def __init__(self, Q):
        Q = np.asarray(Q, dtype=float)
        n = Q.shape[0]
        self.rate = -np.diag(Q).copy()
        P = Q / self.rate[:, None]
        np.fill_diagonal(P, 0.0)
        cum = np.cumsum(P, axis=1)
        for i in range(n):
            last = np.nonzero(P[i] > 0)[0][-1]
            cum[i, last:] = 2.0
        self.cum = cum

    def __call__(self, k, u1, u2):
        hold = -np.log1p(-u1) / self.rate[k]
        nxt = np.sum(self.cum[k] <= u2[:, None], axis=1)
        return hold, nxt


class EnsembleEngine:
    """Vectorised exact simulation of several clamped flows driven by one chain.

    ``flows`` are indexed by the driver state.  Pending jumps are kept between
    calls to :meth:`advance`, so observing at extra times does not change the
    paths.
    """

    def __init__(self, Q, flows: Sequence, k0, x0s: Sequence, streams: Streams):
        self.jumps = JumpSampler(Q)
        self.flows = list(flows)
        n = streams.size
        self.k = np.broadcast_to(np.asarray(k0, dtype=np.int64), (n,)).copy()
        self.x = [np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy() for x in x0s]
        self.t = np.zeros(n)
        self.streams = streams
        u1, u2 = streams.uniform2()
        hold, self.k_next = self.jumps(self.k, u1, u2)
        self.t_next = hold
        self.now = 0.0
        self.jump_count = np.zeros(n, dtype=np.int64)

    def _jump(self, idx, on_event: Callable | None = None):
        dt = self.t_next[idx] - self.t[idx]
        k = self.k[idx]
        for j, f in enumerate(self.flows):
            self.x[j][idx] = f(self.x[j][idx], k, dt)
        self.t[idx] = self.t_next[idx]
        self.k[idx] = self.k_next[idx]
        self.jump_count[idx] += 1
        u1, u2 = self.streams.uniform2(idx)
        hold, nxt = self.jumps(self.k[idx], u1, u2)
        self.t_next[idx] = self.t[idx] + hold
        self.k_next[idx] = nxt
        if on_event is not None:
            on_event(self, idx)

    def advance(self, t: float, on_event: Callable | None = None):
        if t < self.now:
            raise ValueError("cannot advance backwards in time")
        while True:
            idx = np.nonzero(self.t_next <= t)[0]
            if idx.size == 0:
                break
            self._jump(idx, on_event)
        dt = t - self.t
        for j, f in enumerate(self.flows):
            self.x[j] = f(self.x[j], self.k, dt)
        self.t[:] = t
        self.now = t
        return self


@dataclass
class Trajectory:
    """Event list of one path; segment i runs from times[i] to times[i+1] (or horizon)."""

    spec: ProcessSpec
    times: np.ndarray
    xs: np.ndarray
    modes: np.ndarray
    kinds: np.ndarray
    horizon: float
    # position and time of the last mode change preceding each event
    origin_x: np.ndarray = field(repr=False, default=None)
    origin_t: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.times)

    def events(self):
        tags = self.spec.chain.tags
        return [
            (float(t), State(float(x), tags[k]), KIND_NAMES[int(e)])
            for t, x, k, e in zip(self.times, self.xs, self.modes, self.kinds)
        ]

    def state_at(self, t: float) -> State:
        if not 0 <= t <= self.horizon:
            raise ValueError("time outside the trajectory")
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        k = int(self.modes[i])
        x = self.spec.mode_flow()(self.origin_x[i], k, t - self.origin_t[i])
        return State(float(x), self.spec.chain.tags[k])

    def end_state(self) -> State:
        return self.state_at(self.horizon)

    def segments(self):
        """(start time, duration, start x, mode) for every segment."""
        ends = np.append(self.times[1:], self.horizon)
        return self.times, ends - self.times, self.xs, self.modes

    def to_csv(self, path):
        tags = self.spec.chain.tags
        with open(path, "w") as fh:
            fh.write("t,x,sigma,event_kind\n")
            for t, x, k, e in zip(self.times, self.xs, self.modes, self.kinds):
                fh.write(f"{t:.17g},{x:.17g},{tags[k]},{KIND_NAMES[int(e)]}\n")


def _check_init(spec: ProcessSpec, init: State) -> int:
    if not isinstance(init, State):
        raise TypeError("init must be a State")
    return spec.mode_index(init.mode)


def simulate_path(spec: ProcessSpec, init: State, horizon: float, seed: int, replica: int = 0) -> Trajectory:
    """Exact path with hitZero events, driven by stream (seed, replica)."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    k = _check_init(spec, init)
    fl = spec.mode_flow()
    jumps = JumpSampler(spec.chain.Q)
    streams = Streams(seed, [replica], TAG_DYNAMICS)
    rate = jumps.rate.tolist()
    cum = jumps.cum.tolist()
    buf_e, buf_u2 = [], []
    pos = 0

    def draw(kk):
        nonlocal buf_e, buf_u2, pos
        if pos == len(buf_e):
            u1, u2 = streams.prefetch(0, 4096)
            buf_e, buf_u2 = (-np.log1p(-u1)).tolist(), u2.tolist()
            pos = 0
        e, u = buf_e[pos], buf_u2[pos]
        pos += 1
        return e / rate[kk], bisect.bisect_right(cum[kk], u)

    # scalar versions of the flow; the ensemble engine uses the same formulas
    if isinstance(fl, LinearFlow):
        drift = fl.drift.tolist()

        def step(x, kk, dt):
            return max(0.0, x + drift[kk] * dt)

        def hit(x, kk):
            d = drift[kk]
            return x / -d if (d < 0 and x > 0) else math.inf
    else:
        xstar = fl.xstar.tolist()
        two_mu = 2.0 * fl.mu

        def step(x, kk, dt):
            xs_ = xstar[kk]
            return max(0.0, xs_ + math.exp(-two_mu * dt) * (x - xs_))

        def hit(x, kk):
            xs_ = xstar[kk]
            return math.log((x - xs_) / -xs_) / two_mu if (xs_ < 0 and x > 0) else math.inf

    times, xs, modes, kinds, ox, ot = [0.0], [float(init.x)], [k], [START], [float(init.x)], [0.0]
    x0, t0 = float(init.x), 0.0
    hold, nxt = draw(k)
    t_jump = t0 + hold
    while True:
        th = hit(x0, k)
        if th < math.inf:
            t_hit = t0 + th
            if t_hit < t_jump and t_hit < horizon:
                times.append(t_hit), xs.append(0.0), modes.append(k), kinds.append(HIT_ZERO)
                ox.append(x0), ot.append(t0)
        if t_jump > horizon:
            break
        x0 = step(x0, k, t_jump - t0)
        t0 = t_jump
        k = nxt
        times.append(t0), xs.append(x0), modes.append(k), kinds.append(JUMP)
        ox.append(x0), ot.append(t0)
        hold, nxt = draw(k)
        t_jump = t0 + hold
    return Trajectory(
        spec,
        np.array(times),
        np.array(xs),
        np.array(modes, dtype=np.int64),
        np.array(kinds, dtype=np.int8),
        float(horizon),
        np.array(ox),
        np.array(ot),
    )


@dataclass
class Snapshot:
    t: float
    x: np.ndarray
    modes: np.ndarray
    seed: int
    replicas: np.ndarray
    chain_tags: tuple[str, ...]

    @property
    def size(self) -> int:
        return int(self.x.size)

    def states(self) -> list[State]:
        return [State(float(x), self.chain_tags[k]) for x, k in zip(self.x, self.modes)]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("replica,x,sigma\n")
            for r, x, k in zip(self.replicas, self.x, self.modes):
                fh.write(f"{int(r)},{x:.17g},{self.chain_tags[k]}\n")


def initial_arrays(spec: ProcessSpec, init, seed: int, replicas):
    """Initial (x, mode index) arrays for a point state or an invariant sampler."""
    n = len(replicas)
    if isinstance(init, State):
        return np.full(n, float(init.x)), np.full(n, spec.mode_index(init.mode), dtype=np.int64)
    if hasattr(init, "sample"):
        x, k = init.sample(Streams(seed, replicas, TAG_INIT))
        return np.asarray(x, dtype=float), np.asarray(k, dtype=np.int64)
    raise TypeError("init must be a State or an object with a sample(streams) method")


def _run_chunk(spec, init, times, seed, replicas):
    x0, k0 = initial_arrays(spec, init, seed, replicas)
    eng = EnsembleEngine(spec.chain.Q, [spec.mode_flow()], k0, [x0], Streams(seed, replicas, TAG_DYNAMICS))
    out = []
    for t in times:
        eng.advance(t)
        out.append((eng.x[0].copy(), eng.k.copy()))
    return out


def simulate_ensemble(
    spec: ProcessSpec,
    init,
    t,
    n: int,
    seed: int,
    threads: int = 1,
    chunk: int = 50_000,
):
    """Advance n replicas to time t (a float) or through a sorted list of times.

    Returns one Snapshot, or a list of them when ``t`` is a sequence.  Replica i
    always uses stream (seed, i), so chunking and threading do not matter.
    """
    if not isinstance(n, (int, np.integer)) or n < 1 or n >= 2**32:
        raise ValueError("replica count must be an integer in [1, 2^32)")
    single = np.ndim(t) == 0
    times = [float(t)] if single else [float(s) for s in t]
    if any(s < 0 for s in times) or any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("observation times must be nonnegative and sorted")
    starts = list(range(0, n, chunk))
    jobs = [np.arange(s, min(n, s + chunk), dtype=np.uint64) for s in starts]
    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda r: _run_chunk(spec, init, times, seed, r), jobs))
    else:
        parts = [_run_chunk(spec, init, times, seed, r) for r in jobs]
    reps = np.arange(n, dtype=np.uint64)
    snaps = []
    for i, s in enumerate(times):
        x = np.concatenate([p[i][0] for p in parts])
        k = np.concatenate([p[i][1] for p in parts])
        snaps.append(Snapshot(s, x, k, int(seed), reps, spec.chain.tags))
    return snaps[0] if single else snaps


# test functions for occupation averages


@dataclass(frozen=True)
class AtomIndicator:
    mode: str


@dataclass(frozen=True)
class Above:
    """1{x > level}, optionally restricted to one mode."""

    level: float
    mode: str | None = None


@dataclass(frozen=True)
class Polynomial:
    """sum_j coeffs[j] x^j, optionally restricted to one mode."""

    coeffs: tuple[float, ...]
    mode: str | None = None


def _mode_mask(spec, modes, tag):
    if tag is None:
        return np.ones(modes.shape, dtype=bool)
    return modes == spec.mode_index(tag)


def occupation_average(traj: Trajectory, f) -> float:
    """Exact time average of f along the path, divided by the horizon."""
    spec = traj.spec
    t0, dur, x0, modes = traj.segments()
    fl = spec.mode_flow()
    H = traj.horizon
    if isinstance(f, AtomIndicator):
        k = spec.mode_index(f.mode)
        glued = spec.glued()[k]
        sel = (modes == k) & (x0 == 0.0)
        return float(np.sum(dur[sel]) / H) if glued else 0.0
    if isinstance(f, Above):
        mask = _mode_mask(spec, modes, f.mode)
        return float(np.sum(_time_above(fl, x0[mask], modes[mask], dur[mask], f.level)) / H)
    if isinstance(f, Polynomial):
        mask = _mode_mask(spec, modes, f.mode)
        return float(np.sum(_poly_integral(spec, x0[mask], modes[mask], dur[mask], f.coeffs)) / H)
    if callable(f):
        total = 0.0
        for xi, ki, di in zip(x0, modes, dur):
            if di <= 0:
                continue
            g = lambda s: f(float(fl(np.float64(xi), ki, s)), spec.chain.tags[ki])
            val, _ = integrate.quad(g, 0.0, float(di), limit=200)
            total += val
        return total / H
    raise TypeError("unsupported test function")


def _time_above(fl, x0, k, dur, level):
    """Length of {s in [0, dur]: flow(x0, k, s) > level}; the flow is monotone."""
    out = np.zeros_like(x0)
    start_above = x0 > level
    end_x = fl(x0, k, dur)
    end_above = end_x > level
    both = start_above & end_above
    out[both] = dur[both]
    down = start_above & ~end_above
    up = ~start_above & end_above
    if np.any(down):
        # time until the flow drops to `level`
        if isinstance(fl, LinearFlow):
            d = fl.drift[k[down]]
            out[down] = (x0[down] - level) / -d
        else:
            xs = fl.xstar[k[down]]
            out[down] = np.log((x0[down] - xs) / (level - xs)) / (2 * fl.mu)
    if np.any(up):
        out[up] = dur[up] - fl.level_time(x0[up], k[up], level)
    return out


def _poly_integral(spec, x0, k, dur, coeffs):
    fl = spec.mode_flow()
    coeffs = np.asarray(coeffs, dtype=float)
    th = np.minimum(fl.hit_time(x0, k), dur)
    # hit_time is inf at x = 0; a glued mode there never moves
    th = np.where((x0 == 0.0) & spec.glued()[k], 0.0, th)
    # on [th, dur] the path sits at 0
    at_zero = coeffs[0] * (dur - th)
    if isinstance(fl, LinearFlow):
        d = fl.drift[k]
        total = np.zeros_like(x0)
        for j, cj in enumerate(coeffs):
            if cj == 0:
                continue
            small = np.abs(d) < 1e-300
            with np.errstate(divide="ignore", invalid="ignore"):
                val = ((x0 + d * th) ** (j + 1) - x0 ** (j + 1)) / ((j + 1) * d)
            val = np.where(small, x0**j * th, val)
            total += cj * val
        return total + at_zero
    mu = fl.mu
    xs = fl.xstar[k]
    A = x0 - xs
    total = np.zeros_like(x0)
    from math import comb

    for n, cn in enumerate(coeffs):
        if cn == 0:
            continue
        for j in range(n + 1):
            rate = 2.0 * mu * j
            integ = th if j == 0 else (1.0 - np.exp(-rate * th)) / rate
            total += cn * comb(n, j) * xs ** (n - j) * A**j * integ
    return total + at_zero


def first_passage_times(spec: ProcessSpec, init: State, level: float, t_max: float, n: int, seed: int):
    """First times x exceeds ``level`` for n replicas (inf if not before t_max)."""
    x0, k0 = initial_arrays(spec, init, seed, np.arange(n, dtype=np.uint64))
    eng = EnsembleEngine(spec.chain.Q, [spec.mode_flow()], k0, [x0], Streams(seed, np.arange(n), TAG_DYNAMICS))
    fl = eng.flows[0]
    tau = np.where(x0 > level, 0.0, np.inf)
    alive = np.isinf(tau)
    while np.any(alive):
        idx = np.nonzero(alive & (eng.t < t_max))[0]
        if idx.size == 0:
            break
        seg_end = np.minimum(eng.t_next[idx], t_max)
        dt = seg_end - eng.t[idx]
        x = eng.x[0][idx]
        k = eng.k[idx]
        lt = fl.level_time(x, k, level)
        hit = lt <= dt
        tau[idx[hit]] = eng.t[idx[hit]] + lt[hit]
        alive[idx[hit]] = False
        go = idx[~hit & (eng.t_next[idx] <= t_max)]
        if go.size:
            eng._jump(go)
        stop = idx[~hit & (eng.t_next[idx] > t_max)]
        alive[stop] = False
    return tau

"""Distance estimators between ensembles and analytic laws, and rate fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EmptySampleError",
    "WindowError",
    "EmpiricalMixedMeasure",
    "DistanceEstimate",
    "tv_to_analytic",
    "tv_floor",
    "default_bin_width",
    "wasserstein_x",
    "mixed_distance_bracket",
    "RateFit",
    "fit_rate",
]


class EmptySampleError(ValueError):
    pass


class WindowError(ValueError):
    """The fit window contains unusable points."""


def _xk(sample):
    """(x, mode index) arrays from a Snapshot or an (x, k) pair."""
    if hasattr(sample, "x") and hasattr(sample, "modes"):
        return np.asarray(sample.x, dtype=float), np.asarray(sample.modes, dtype=np.int64)
    x, k = sample
    return np.asarray(x, dtype=float), np.asarray(k, dtype=np.int64)


@dataclass
class EmpiricalMixedMeasure:
    atom_counts: np.ndarray  # per mode, samples with x == 0
    hist: np.ndarray  # (modes, bins) counts on (0, x_max]
    overflow: np.ndarray  # per mode, samples beyond x_max
    h: float
    x_max: float
    N: int

    @classmethod
    def from_sample(cls, sample, modes: int, h: float, x_max: float) -> "EmpiricalMixedMeasure":
        if not h > 0:
            raise ValueError("bin width must be positive")
        x, k = _xk(sample)
        if x.size == 0:
            raise EmptySampleError("empty snapshot")
        nb = int(round(x_max / h))
        atom = x == 0.0
        atoms = np.bincount(k[atom], minlength=modes)
        over = x > nb * h
        overflow = np.bincount(k[over], minlength=modes)
        inside = ~atom & ~over
        # bin j holds (j h, (j + 1) h]
        j = np.clip(np.ceil(x[inside] / h).astype(np.int64) - 1, 0, nb - 1)
        hist = np.zeros((modes, nb), dtype=np.int64)
        np.add.at(hist, (k[inside], j), 1)
        out = cls(atoms, hist, overflow, float(h), nb * float(h), int(x.size))
        assert out.atom_counts.sum() + out.hist.sum() + out.overflow.sum() == out.N
        return out

    def counts(self) -> np.ndarray:
        """All cells flattened: atoms, then histogram rows, then overflow."""
        return np.concatenate([self.atom_counts, self.hist.ravel(), self.overflow])


@dataclass
class DistanceEstimate:
    value: float
    kind: str  # tvHistogram, wassersteinXQuantile, mixedUpper, mixedLower
    stderr: float
    extra: dict = field(default_factory=dict)


def default_bin_width(measure) -> float:
    """0.05 in units of the natural length of the law (1/tail rate, or v/mu)."""
    rate = measure.tail_rate()
    if math.isinf(rate):
        return 0.05 * measure.xmax
    return 0.05 / rate


def _analytic_cells(measure, h: float, x_max: float) -> np.ndarray:
    n = measure.size
    nb = int(round(x_max / h))
    edges = np.arange(nb + 1) * h
    rows = [np.asarray(measure.cell_mass(k, edges[:-1], edges[1:]), dtype=float) for k in range(n)]
    over = [float(measure.cell_mass(k, nb * h, np.inf)) for k in range(n)]
    return np.concatenate([np.asarray(measure.atoms, dtype=float), np.concatenate(rows), over])


def _support_end(measure, tol: float = 1e-7) -> float:
    if math.isinf(measure.tail_rate()):
        return float(measure.xmax)
    x = 1.0 / measure.tail_rate()
    while float(measure.tail(x)) > tol:
        x *= 1.5
    return x


def tv_to_analytic(sample, measure, h: float | None = None, x_max: float | None = None,
                   bootstrap: int = 200, seed: int = 0) -> DistanceEstimate:
    """Histogram TV distance between an ensemble and an analytic mixed law.

    Cells are the atoms, bins of width h per mode on (0, x_max], and one
    overflow cell per mode beyond x_max, each compared with its exact mass.
    """
    if h is None:
        h = default_bin_width(measure)
    if x_max is None:
        x_max = _support_end(measure)
    x_max = h * max(1, math.ceil(x_max / h - 1e-9))
    emp = EmpiricalMixedMeasure.from_sample(sample, measure.size, h, x_max)
    if emp.N < 1000:
        raise EmptySampleError("need at least 10^3 samples for the histogram estimator")
    target = _analytic_cells(measure, h, x_max)
    counts = emp.counts()
    value = 0.5 * float(np.abs(counts / emp.N - target).sum())
    rng = np.random.default_rng(seed)
    boots = rng.multinomial(emp.N, counts / emp.N, size=bootstrap) / emp.N
    se = float(np.std(0.5 * np.abs(boots - target).sum(axis=1), ddof=1)) if bootstrap > 1 else 0.0
    return DistanceEstimate(value, "tvHistogram", se, {"h": h, "x_max": x_max, "N": emp.N})


def tv_floor(measure, n: int, h: float | None = None, seed: int = 0, bootstrap: int = 50) -> DistanceEstimate:
    """Self-distance of an exact sample of ``measure``: the estimator's bias floor."""
    from .streams import TAG_AUX, Streams

    x, k = measure.sample(Streams(seed, np.arange(n, dtype=np.uint64), TAG_AUX))
    return tv_to_analytic((x, k), measure, h, bootstrap=bootstrap, seed=seed)


def wasserstein_x(xa, xb, p: float = 1.0) -> float:
    """1-D Wasserstein-p distance between two empirical laws via the quantile coupling."""
    a, b = np.sort(np.asarray(xa, dtype=float)), np.sort(np.asarray(xb, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptySampleError("empty sample")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b) ** p) ** (1 / p))
    # merge the two quantile grids
    qa = np.arange(1, a.size + 1) / a.size
    qb = np.arange(1, b.size + 1) / b.size
    q = np.union1d(qa, qb)
    w = np.diff(np.concatenate([[0.0], q]))
    ia = np.minimum(np.searchsorted(qa, q - 1e-15), a.size - 1)
    ib = np.minimum(np.searchsorted(qb, q - 1e-15), b.size - 1)
    return float(np.sum(w * np.abs(a[ia] - b[ib]) ** p) ** (1 / p))


def _spread(n_take: int, n_from: int) -> np.ndarray:
    """n_take ranks spread evenly through 0..n_from-1."""
    if n_take == 0:
        return np.zeros(0, dtype=np.int64)
    return np.floor((np.arange(n_take) + 0.5) * n_from / n_take).astype(np.int64)


def _coupling_cost(xa, ka, xb, kb, p):
    """Cost of the explicit mode-first coupling of two equal-size samples."""
    n = xa.size
    modes = np.union1d(ka, kb)
    cost = 0.0
    rest_a, rest_b = [], []
    for m in modes:
        a = np.sort(xa[ka == m])
        b = np.sort(xb[kb == m])
        if a.size >= b.size:
            keep = np.zeros(a.size, dtype=bool)
            keep[_spread(b.size, a.size)] = True
            cost += float(np.sum(np.abs(a[keep] - b) ** p))
            rest_a.append(a[~keep])
        else:
            keep = np.zeros(b.size, dtype=bool)
            keep[_spread(a.size, b.size)] = True
            cost += float(np.sum(np.abs(a - b[keep]) ** p))
            rest_b.append(b[~keep])
    ra = np.sort(np.concatenate(rest_a)) if rest_a else np.zeros(0)
    rb = np.sort(np.concatenate(rest_b)) if rest_b else np.zeros(0)
    cost += float(np.sum(np.abs(ra - rb) ** p))
    return (cost / n) ** (1 / p) + ra.size / n


def mixed_distance_bracket(sample_a, sample_b, p: float = 1.0, bootstrap: int = 0, seed: int = 0):
    """(lower, upper) bracket on the mixed distance between two samples of equal size.

    The lower bound drops the mode term and uses the quantile coupling on x;
    the upper bound is the cost of an explicit coupling.
    """
    if p < 1:
        raise ValueError("the mixed distance needs p >= 1")
    xa, ka = _xk(sample_a)
    xb, kb = _xk(sample_b)
    if xa.size == 0 or xb.size == 0:
        raise EmptySampleError("empty sample")
    if xa.size != xb.size:
        raise ValueError("the explicit coupling needs samples of equal size")
    lo = wasserstein_x(xa, xb, p)
    up = _coupling_cost(xa, ka, xb, kb, p)
    se_lo = se_up = 0.0
    if bootstrap > 1:
        rng = np.random.default_rng(seed)
        vals = []
        for _ in range(bootstrap):
            ia = rng.integers(0, xa.size, xa.size)
            ib = rng.integers(0, xb.size, xb.size)
            vals.append((wasserstein_x(xa[ia], xb[ib], p), _coupling_cost(xa[ia], ka[ia], xb[ib], kb[ib], p)))
        vals = np.array(vals)
        se_lo, se_up = (float(s) for s in vals.std(axis=0, ddof=1))
    return (
        DistanceEstimate(lo, "mixedLower", se_lo, {"p": p}),
        DistanceEstimate(up, "mixedUpper", se_up, {"p": p}),
    )


@dataclass
class RateFit:
    rate: float
    intercept: float
    stderr: float
    t_window: tuple
    points_used: int
    residuals: list
    chi2_red: float
    times: list

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "window": list(self.t_window),
            "points_used": self.points_used,
            "times": self.times,
            "residuals": self.residuals,
            "chi2_red": self.chi2_red,
        }


def fit_rate(t, value, stderr=None, window=None, floor: float | None = None) -> RateFit:
    """Weighted least squares of log(value) on t; rate = -slope.

    Points within three standard errors of ``floor`` (the estimator's bias
    floor) are dropped before fitting.  Weights are (value / stderr)^2.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(value, dtype=float)
    se = np.zeros_like(y) if stderr is None else np.asarray(stderr, dtype=float)
    lo, hi = (-np.inf, np.inf) if window is None else window
    m = (t >= lo) & (t <= hi)
    if floor is not None:
        m &= y - floor > 3 * se
    if np.any(y[m] <= 0):
        raise WindowError("nonpositive values inside the fit window; the bias floor has been reached")
    if m.sum() < 4:
        raise WindowError(f"only {int(m.sum())} usable points in the window; need at least 4")
    tt, ly = t[m], np.log(y[m])
    rel = se[m] / y[m]
    if np.all(rel > 0):
        w = 1.0 / rel**2
    else:
        w = np.ones_like(tt)
    X = np.column_stack([np.ones_like(tt), tt])
    W = np.diag(w)
    cov = np.linalg.inv(X.T @ W @ X)
    beta = cov @ X.T @ W @ ly
    res = ly - X @ beta
    dof = tt.size - 2
    chi2 = float(res @ W @ res / dof)
    if np.all(rel > 0):
        cov = cov * max(1.0, chi2)
    else:
        cov = cov * chi2
    return RateFit(
        float(-beta[1]), float(beta[0]), float(math.sqrt(max(cov[1, 1], 0.0))), (float(lo), float(hi)),
        int(tt.size), [float(r) for r in res], chi2, [float(s) for s in tt],
    )

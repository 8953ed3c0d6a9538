"""Invariant measure of the instantaneous harmonic process.

With b = omega/mu and y = mu x / v in (0, 1), the bulk densities are built
from P = pi_2 + pi_0 + pi_-2, Q = pi_2 + pi_-2 and R = pi_2 - pi_-2 = y P.
For b != 1 both P and Q are regularized Gauss functions of y^2; for b = 1
they reduce to the complete elliptic integrals, P ~ K(1 - y^2) and
Q ~ E(1 - y^2).  Atoms sit at (0, 0) and (0, -2).
"""

from __future__ import annotations

import json
import math

import numpy as np
from scipy import integrate, special as sps

from .chains import ParameterError
from .special import (
    ellipe_complement,
    ellipk_complement,
    gamma,
    hyp2f1_regularized,
    hyp3f2_one_regularized,
)
from .streams import Streams

__all__ = ["HarmonicMeasure", "UnsupportedParameterError", "harmonic_invariant", "POLE_TOL"]

POLE_TOL = 1e-6
TAGS = ("+2", "0", "-2")


class UnsupportedParameterError(ParameterError):
    """b too close to a point where the closed form is singular."""


def _check_b(b: float):
    if abs(b - 1.0) < POLE_TOL and b != 1.0:
        raise UnsupportedParameterError(f"b = {b!r} is within {POLE_TOL} of 1 but not equal to it")
    if abs(b - 0.5) < POLE_TOL:
        raise UnsupportedParameterError("b = 1/2 is a pole of the closed form")
    odd = 2 * round((b - 1) / 2) + 1
    if odd >= 3 and abs(b - odd) < POLE_TOL:
        raise UnsupportedParameterError(f"b = {b!r} is too close to the odd integer {odd}")


def _quad(f, a, b, rtol=1e-13, atol=0.0):
    res = integrate.tanhsinh(f, a, b, rtol=rtol, atol=atol, maxlevel=14)
    if not np.all(res.success):
        raise ArithmeticError(f"quadrature did not converge (error estimate {np.max(res.error):.3e})")
    return res.integral


def y_integral(g, ylo=0.0, yhi=1.0, rtol=1e-13):
    """Integral of g(y, 1 - y^2) dy over [ylo, yhi] inside [0, 1].

    Uses y = sin(theta) below 1/sqrt(2) and y = cos(phi) above, so that both
    endpoint singularities are resolved in a variable that is accurate near 0.
    """
    ylo = np.clip(np.asarray(ylo, dtype=float), 0.0, 1.0)
    yhi = np.clip(np.asarray(yhi, dtype=float), 0.0, 1.0)
    cut = math.sqrt(0.5)

    def lower(th):
        s, c = np.sin(th), np.cos(th)
        return g(s, c * c) * c

    def upper(ph):
        s, c = np.sin(ph), np.cos(ph)
        return g(c, s * s) * s

    a1 = np.arcsin(np.minimum(ylo, cut))
    b1 = np.arcsin(np.minimum(yhi, cut))
    a2 = np.arccos(np.maximum(yhi, cut))
    b2 = np.arccos(np.maximum(ylo, cut))
    out = np.zeros(np.broadcast(a1, b1).shape)
    m1 = np.broadcast_to(b1 > a1, out.shape)
    m2 = np.broadcast_to(b2 > a2, out.shape)
    if np.any(m1):
        out[m1] += _quad(lower, np.broadcast_to(a1, out.shape)[m1], np.broadcast_to(b1, out.shape)[m1], rtol)
    if np.any(m2):
        out[m2] += _quad(upper, np.broadcast_to(a2, out.shape)[m2], np.broadcast_to(b2, out.shape)[m2], rtol)
    return out[()] if out.ndim == 0 else out


class HarmonicMeasure:
    """Invariant law of (x, sigma) for the instantaneous harmonic process."""

    def __init__(self, omega: float, mu: float, v: float):
        for k, x in {"omega": omega, "mu": mu, "v": v}.items():
            if not (np.isfinite(x) and x > 0):
                raise ParameterError(f"{k} must be positive, got {x!r}")
        self.omega, self.mu, self.v = float(omega), float(mu), float(v)
        self.b = b = self.omega / self.mu
        _check_b(b)
        self.tags = TAGS
        self.xmax = self.v / self.mu
        if b == 1.0:
            self.scale = 4.0 * self.mu / (self.v * (8.0 + math.pi**2))
        else:
            self.scale = 1.0
            # solve the three marginal-weight equations for C1, C2, C3
            m2 = self._mass_of(lambda y, w: 0.5 * (self._q(y, w) + y * self._p(y, w)))
            self.scale = 0.25 / m2
        m0 = self._mass_of(lambda y, w: self._p(y, w) - self._q(y, w))
        mm2 = self._mass_of(lambda y, w: 0.5 * (self._q(y, w) - y * self._p(y, w)))
        self.atoms = np.array([0.0, 0.5 - m0, 0.25 - mm2])

    # unnormalized P and Q as functions of y and w = 1 - y^2
    def _p(self, y, w):
        b = self.b
        y = np.asarray(y, dtype=float)
        w = np.asarray(w, dtype=float)
        if b == 1.0:
            return ellipk_complement(np.maximum(y * y, 1e-300))
        z = 1.0 - w
        t1 = _hyp(1.5 - b, 1.0 - b / 2, (3.0 - b) / 2, z, w)
        with np.errstate(divide="ignore"):
            t2 = gamma(b - 0.5) * y ** (b - 1.0) * _hyp(0.5, 1.0 - b / 2, (b + 1.0) / 2, z, w) / math.sqrt(math.pi)
        return t1 - t2

    def _q(self, y, w):
        b = self.b
        y = np.asarray(y, dtype=float)
        w = np.asarray(w, dtype=float)
        if b == 1.0:
            return ellipe_complement(y * y)
        z = 1.0 - w
        t1 = 2.0 * _hyp(0.5 - b, 1.0 - b / 2, (1.0 - b) / 2, z, w) / (1.0 - 2.0 * b)
        t2 = gamma(b - 0.5) * y ** (b + 1.0) * _hyp(1.0 - b / 2, 1.5, (b + 3.0) / 2, z, w) / (2.0 * math.sqrt(math.pi))
        return t1 - t2

    def _mass_of(self, g):
        """Integral over x in (0, v/mu) of scale * g, substituting y = sin(theta)."""

        return float(self.scale * self.xmax * y_integral(g))

    # public densities
    def _yw(self, x):
        x = np.asarray(x, dtype=float)
        y = np.clip(x / self.xmax, 0.0, 1.0)
        return y, (1.0 - y) * (1.0 + y)

    def P(self, x):
        y, w = self._yw(x)
        return self.scale * self._p(y, w)

    def Q(self, x):
        y, w = self._yw(x)
        return self.scale * self._q(y, w)

    def density_x(self, x):
        x = np.asarray(x, dtype=float)
        out = self.P(x)
        return np.where((x > 0) & (x < self.xmax), out, np.where(x <= 0, out, 0.0))

    def density(self, x, mode):
        k = self.mode_index(mode)
        y, w = self._yw(x)
        P = self.scale * self._p(y, w)
        Q = self.scale * self._q(y, w)
        if k == 0:
            return 0.5 * (Q + y * P)
        if k == 1:
            return P - Q
        return 0.5 * (Q - y * P)

    def mode_index(self, mode) -> int:
        if isinstance(mode, (int, np.integer)):
            return int(mode)
        return self.tags.index(str(getattr(mode, "tag", mode)))

    @property
    def size(self) -> int:
        return 3

    @property
    def d0(self) -> float:
        """Atom of the x-marginal at 0."""
        return float(self.atoms.sum())

    @property
    def C(self) -> float:
        return self.scale

    def _mode_g(self, k):
        """Density of mode k as a function of (y, 1 - y^2), per unit y."""

        def g(y, w):
            P = self.scale * self._p(y, w)
            Q = self.scale * self._q(y, w)
            dens = [0.5 * (Q + y * P), P - Q, 0.5 * (Q - y * P)][k]
            return dens * self.xmax

        return g

    def continuous_mass_by_mode(self) -> np.ndarray:
        return np.array([float(y_integral(self._mode_g(k))) for k in range(3)])

    def mass_by_mode(self) -> np.ndarray:
        return self.atoms + self.continuous_mass_by_mode()

    def total_mass(self) -> float:
        return float(self.mass_by_mode().sum())

    def cell_mass(self, mode, lo, hi):
        """Mass of mode ``mode`` on (lo, hi] by quadrature in theta."""
        k = self.mode_index(mode)
        lo = np.clip(np.asarray(lo, dtype=float), 0.0, self.xmax)
        hi = np.clip(np.asarray(hi, dtype=float), 0.0, self.xmax)
        return y_integral(self._mode_g(k), lo / self.xmax, hi / self.xmax, rtol=1e-11)

    def cdf_x(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.xmax)
        cont = sum(self.cell_mass(k, np.zeros_like(x), x) for k in range(3))
        return self.d0 + cont

    def tail(self, x):
        return 1.0 - self.cdf_x(x)

    def tail_rate(self) -> float:
        return math.inf  # compact support

    def moment(self, p: float) -> float:
        if p < 0:
            raise ParameterError("moment order must be nonnegative")
        if p == 0:
            return self.total_mass()

        def g(y, w):
            return (self.xmax * y) ** p * self.scale * self._p(y, w) * self.xmax

        return float(y_integral(g))

    # closed forms printed for the x-marginal, kept as an independent cross-check
    def d0_closed_form(self) -> float:
        b = self.b
        if b == 1.0:
            return 8.0 / (8.0 + math.pi**2)
        f1 = hyp3f2_one_regularized((0.5, 0.5 - b, 1 - b / 2), (1.5, 0.5 - b / 2))
        f2 = hyp3f2_one_regularized((1.5, 1 - b / 2, (b + 2) / 2), ((b + 3) / 2, (b + 4) / 2))
        g = gamma((b + 3) / 2)
        # 2^(3b+2) / 8^b = 4, divide through to keep the terms in range
        num = 4.0 * (b - 1) * g
        den = (b - 1) * (math.pi**1.5 * b * (b + 1) / math.cos(math.pi * b / 2) * f1 + 4 * g)
        den -= math.sqrt(math.pi) * b * (b + 1) * gamma(1.5 - b / 2) * gamma(2 * b + 1) * f2 / 8.0**b
        return float(num / den)

    def C_closed_form(self) -> float:
        b = self.b
        if b == 1.0:
            return 4.0 * self.mu / (self.v * (8.0 + math.pi**2))
        d0 = self.d0_closed_form()
        f1 = hyp3f2_one_regularized((0.5, 1.5 - b, 1 - b / 2), (1.5, 1.5 - b / 2))
        f2 = hyp3f2_one_regularized((0.5, 1 - b / 2, b / 2), ((b + 1) / 2, (b + 2) / 2))
        den = math.pi * f1 - gamma(b - 0.5) * gamma(b / 2) * f2
        return float(2 * math.sqrt(math.pi) * (1 - d0) * (self.mu / self.v) / den)

    # sampling
    def _envelope(self):
        if not hasattr(self, "_env"):
            a = 0.95 * min(1.0, self.b)
            th = np.concatenate([
                np.logspace(-9, math.log10(math.pi / 4), 400),
                math.pi / 2 - np.logspace(-9, math.log10(math.pi / 4), 400),
            ])
            y = np.sin(th)
            c = np.cos(th)
            target = self.scale * self._p(y, c * c) * self.xmax
            # log(1 - y) from the accurate complement cos^2 = (1 - y)(1 + y)
            env = np.exp((a - 1) * (np.log(y) + np.log(c * c) - np.log1p(y)) - sps.betaln(a, a))
            M = 1.5 * float(np.max(target / env))
            self._env = (a, M)
        return self._env

    def sample(self, streams: Streams):
        u_atom, u_mode = streams.uniform2()
        n = streams.size
        x = np.zeros(n)
        k = np.zeros(n, dtype=np.int64)
        cum_atoms = np.cumsum(self.atoms)
        in_atom = u_atom < cum_atoms[-1]
        k[in_atom] = np.minimum(np.searchsorted(cum_atoms, u_atom[in_atom], side="right"), 2)
        a, M = self._envelope()
        todo = np.nonzero(~in_atom)[0]
        for _ in range(100_000):
            if todo.size == 0:
                break
            u1, u2 = streams.uniform2(todo)
            y = sps.betaincinv(a, a, u1)
            y = np.clip(y, 1e-300, 1.0 - 1e-16)
            w = (1.0 - y) * (1.0 + y)
            target = self.scale * self._p(y, w) * self.xmax
            env = np.exp((a - 1) * (np.log(y) + np.log1p(-y)) - sps.betaln(a, a))
            ratio = target / (M * env)
            if np.any(ratio > 1.0):
                raise ArithmeticError("rejection envelope too small; increase its safety factor")
            acc = u2 < ratio
            done = todo[acc]
            x[done] = y[acc] * self.xmax
            todo = todo[~acc]
        else:
            raise ArithmeticError("rejection sampling did not terminate")
        cont = ~in_atom
        if np.any(cont):
            dens = np.stack([np.clip(self.density(x[cont], j), 0.0, None) for j in range(3)], axis=1)
            cum = np.cumsum(dens, axis=1)
            k[cont] = np.minimum(np.sum(cum <= (u_mode[cont] * cum[:, -1])[:, None], axis=1), 2)
        return x, k

    def to_json(self, grid: int = 201) -> str:
        xs = np.linspace(0.0, self.xmax, grid)[1:-1]
        fmt = lambda t: format(float(t), ".17g")
        doc = {
            "regime": "harmonic",
            "params": {"omega": fmt(self.omega), "mu": fmt(self.mu), "v": fmt(self.v)},
            "b": fmt(self.b),
            "d0": fmt(self.d0),
            "atoms": {t: fmt(d) for t, d in zip(self.tags, self.atoms)},
            "density_table": {"x": [fmt(t) for t in xs], "p": [fmt(t) for t in self.density_x(xs)]},
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "HarmonicMeasure":
        p = json.loads(text)["params"]
        return cls(float(p["omega"]), float(p["mu"]), float(p["v"]))


def _hyp(a, b, c, z, w):
    """Regularized 2F1 at z, with the complement w = 1 - z supplied for accuracy."""
    if a + b < c:
        return hyp2f1_regularized(a, b, c, z, w=w)
    # divergent at z = 1: stay just inside the support
    w = np.maximum(w, 1e-300)
    return hyp2f1_regularized(a, b, c, np.minimum(z, 1.0 - w), w=w)


def harmonic_invariant(omega: float, mu: float, v: float) -> HarmonicMeasure:
    return HarmonicMeasure(omega, mu, v)

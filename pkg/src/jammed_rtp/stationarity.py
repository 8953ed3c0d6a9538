"""Generator-residual stationarity oracle.

For a candidate invariant law pi and a test function f,

    int L f dpi = sum_sigma d_sigma L f(0, sigma) + sum_sigma int L f(x, sigma) pi_sigma(x) dx,

which vanishes when pi is invariant.  The drift term at x = 0 only counts
for modes that are not glued.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .dynamics import ProcessSpec
from .harmonic import HarmonicMeasure, y_integral
from .measures import MixtureMeasure

__all__ = ["TestFunction", "standard_family", "generator_residual", "residuals", "perturb_atom", "QuadratureError"]


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TestFunction:
    name: str
    shape: Callable  # u -> g(u)
    dshape: Callable  # u -> g'(u)
    weights: np.ndarray  # per-mode multiplier
    scale: float

    def f(self, x):
        u = np.asarray(x, dtype=float) / self.scale
        return np.multiply.outer(self.shape(u), self.weights)

    def df(self, x):
        u = np.asarray(x, dtype=float) / self.scale
        return np.multiply.outer(self.dshape(u) / self.scale, self.weights)


_SHAPES = {
    "exp": (lambda u: np.exp(-u), lambda u: -np.exp(-u)),
    "xexp": (lambda u: u * np.exp(-u), lambda u: (1 - u) * np.exp(-u)),
    "exp2": (lambda u: np.exp(-2 * u), lambda u: -2 * np.exp(-2 * u)),
    "coslor": (
        lambda u: np.cos(u) / (1 + u * u),
        lambda u: (-np.sin(u) * (1 + u * u) - 2 * u * np.cos(u)) / (1 + u * u) ** 2,
    ),
}


def standard_family(values, scale: float) -> list[TestFunction]:
    """Four x-shapes times five mode weightings, x measured in units of ``scale``."""
    values = np.asarray(values, dtype=float)
    n = values.size
    e = np.eye(n)
    weights = {
        "first": e[0],
        "middle": e[n // 2],
        "last": e[-1],
        "velocity": values,
        "alternating": (-1.0) ** np.arange(n),
    }
    return [
        TestFunction(f"{sn}*{wn}", s, ds, w, float(scale))
        for sn, (s, ds) in _SHAPES.items()
        for wn, w in weights.items()
    ]


def _drift(spec: ProcessSpec, x):
    vals = spec.chain.values
    x = np.asarray(x, dtype=float)
    if spec.is_linear:
        return np.broadcast_to(spec.v * vals - 2 * spec.potential.c, x.shape + vals.shape)
    return -2 * spec.potential.mu * x[..., None] + spec.v * vals


def _Lf(spec: ProcessSpec, tf: TestFunction, x):
    """L f(x, sigma) for x > 0, shape (len(x), modes)."""
    return _drift(spec, x) * tf.df(x) + tf.f(x) @ spec.chain.Q.T


def generator_residual(measure, spec: ProcessSpec, tf: TestFunction, tol: float = 1e-10) -> float:
    n = spec.chain.size
    if measure.size != n:
        raise ValueError("measure and process have different mode sets")
    # boundary term
    zero = np.zeros(1)
    drift0 = _drift(spec, zero)[0] * ~spec.glued()
    L0 = drift0 * tf.df(zero)[0] + tf.f(zero)[0] @ spec.chain.Q.T
    total = float(np.dot(measure.atoms, L0))
    if isinstance(measure, MixtureMeasure):
        coef, rates = measure.coef, measure.rates

        def integrand(x):
            dens = np.exp(np.multiply.outer(np.atleast_1d(x), rates)) @ coef
            return float(np.sum(_Lf(spec, tf, np.atleast_1d(x)) * dens))

        val, err = integrate.quad(integrand, 0.0, np.inf, epsabs=tol / 10, epsrel=1e-12, limit=400)
        if err > tol:
            raise QuadratureError(f"quadrature error estimate {err:.3e} exceeds {tol:.1e}")
        return total + val
    if isinstance(measure, HarmonicMeasure):
        xmax = measure.xmax
        gs = [measure._mode_g(k) for k in range(n)]

        def g(y, w):
            x = y * xmax
            Lf = _Lf(spec, tf, x)
            dens = np.stack([gk(y, w) for gk in gs], axis=-1)
            return np.sum(Lf * dens, axis=-1)

        return total + float(y_integral(g, rtol=1e-12))
    raise TypeError("unsupported measure type")


def residuals(measure, spec: ProcessSpec, family=None) -> dict[str, float]:
    if family is None:
        family = standard_family(spec.chain.values, natural_scale(measure))
    return {tf.name: generator_residual(measure, spec, tf) for tf in family}


def natural_scale(measure) -> float:
    if isinstance(measure, HarmonicMeasure):
        return measure.xmax
    return 1.0 / measure.tail_rate()


def perturb_atom(measure: MixtureMeasure, mode, delta: float) -> MixtureMeasure:
    """Add ``delta`` to one atom and renormalize; used to probe oracle sensitivity."""
    k = measure.mode_index(mode)
    atoms = np.array(measure.atoms)
    atoms[k] += delta
    s = 1.0 + delta
    return MixtureMeasure(
        measure.kind, measure.regime + " (perturbed)", dict(measure.params), measure.tags,
        atoms / s, np.array(measure.weights) / s, measure.rates, measure.vectors,
    )

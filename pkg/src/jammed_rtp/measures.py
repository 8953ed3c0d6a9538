"""Closed-form invariant measures of the linear processes.

Both linear processes have invariant measures of the form

    sum_sigma (d_sigma delta_0 + sum_i c_i a_sigma(zeta_i) e^{zeta_i x} dx) x delta_sigma,

which :class:`MixtureMeasure` represents directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .chains import ParameterError, finite_chain, instantaneous_chain, stationary_closed_form
from .streams import Streams

__all__ = [
    "RegimeError",
    "ConsistencyError",
    "MixtureMeasure",
    "PolynomialPair",
    "instantaneous_linear",
    "polynomials",
    "eigenvector_a",
    "finite_linear",
    "finite_drifts",
]


class RegimeError(ParameterError):
    """Parameters outside the regime covered by a closed form."""


class ConsistencyError(ArithmeticError):
    """A closed-form object failed its own defining identity."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class MixtureMeasure:
    kind: str  # chain kind
    regime: str
    params: dict
    tags: tuple[str, ...]
    atoms: np.ndarray
    weights: np.ndarray  # c_i
    rates: np.ndarray  # zeta_i < 0
    vectors: np.ndarray  # a(zeta_i), shape (terms, modes)

    def __post_init__(self):
        for name in ("atoms", "weights", "rates", "vectors"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.rates >= 0):
            raise ValueError("mixture rates must be negative")

    @property
    def size(self) -> int:
        return len(self.tags)

    def mode_index(self, mode) -> int:
        if isinstance(mode, (int, np.integer)):
            return int(mode)
        return self.tags.index(str(getattr(mode, "tag", mode)))

    # per-mode coefficients of e^{zeta_i x}
    @property
    def coef(self) -> np.ndarray:
        return self.weights[:, None] * self.vectors

    def density(self, x, mode):
        """Density of the continuous part in mode ``mode`` at x > 0."""
        k = self.mode_index(mode)
        x = np.asarray(x, dtype=float)
        e = np.exp(np.multiply.outer(x, self.rates))
        return e @ self.coef[:, k]

    def density_x(self, x):
        x = np.asarray(x, dtype=float)
        e = np.exp(np.multiply.outer(x, self.rates))
        return e @ self.coef.sum(axis=1)

    def derivative(self, x, mode):
        k = self.mode_index(mode)
        x = np.asarray(x, dtype=float)
        e = np.exp(np.multiply.outer(x, self.rates))
        return e @ (self.coef[:, k] * self.rates)

    def continuous_mass_by_mode(self) -> np.ndarray:
        return (self.coef / -self.rates[:, None]).sum(axis=0)

    def mass_by_mode(self) -> np.ndarray:
        return self.atoms + self.continuous_mass_by_mode()

    def total_mass(self) -> float:
        return float(math.fsum(self.mass_by_mode()))

    def atom_x(self) -> float:
        return float(self.atoms.sum())

    def cell_mass(self, mode, lo, hi):
        """Mass of mode ``mode`` on the x-interval (lo, hi], analytic."""
        k = self.mode_index(mode)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        out = 0.0
        for c, z in zip(self.coef[:, k], self.rates):
            out = out + c * (np.exp(z * lo) - np.exp(z * hi)) / -z
        return out

    def cdf_x(self, x):
        x = np.asarray(x, dtype=float)
        out = self.atom_x() + sum(
            w * (1.0 - np.exp(z * x)) / -z for w, z in zip(self.coef.sum(axis=1), self.rates)
        )
        return np.where(x < 0, 0.0, out)

    def tail(self, x):
        """pi({x' > x}) for x >= 0."""
        x = np.asarray(x, dtype=float)
        return sum(w * np.exp(z * x) / -z for w, z in zip(self.coef.sum(axis=1), self.rates))

    def tail_rate(self) -> float:
        return float(-np.max(self.rates))

    def moment(self, p: float) -> float:
        if p < 0:
            raise ParameterError("moment order must be nonnegative")
        if p == 0:
            return self.total_mass()
        w = self.coef.sum(axis=1)
        return float(sum(wi * math.gamma(p + 1) / (-z) ** (p + 1) for wi, z in zip(w, self.rates)))

    def fokker_planck_residual(self, x, Q, drift) -> np.ndarray:
        """-V Pi'(x) + Q^T Pi(x) at the points x (rows) for every mode (columns)."""
        x = np.asarray(x, dtype=float)
        e = np.exp(np.multiply.outer(x, self.rates))
        Pi = e @ self.coef
        dPi = e @ (self.coef * self.rates[:, None])
        return -dPi * drift[None, :] + Pi @ np.asarray(Q)

    def _inverse_cdf(self, target):
        """Solve G(x) = target for the continuous x-CDF G by bisection."""
        w = self.coef.sum(axis=1)
        rates = self.rates

        def G(x):
            return sum(wi * (1.0 - np.exp(z * x)) / -z for wi, z in zip(w, rates))

        lo = np.zeros_like(target)
        hi = np.full_like(target, 60.0 / float(np.min(-rates)))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = G(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-12 * np.maximum(1.0, hi)):
                break
        return 0.5 * (lo + hi)

    def sample(self, streams: Streams):
        """Exact draws (x, mode index), one per stream replica."""
        u_atom, u_x = streams.uniform2()
        u_mode, _ = streams.uniform2()
        n = streams.size
        x = np.zeros(n)
        k = np.zeros(n, dtype=np.int64)
        cum_atoms = np.cumsum(self.atoms)
        in_atom = u_atom < cum_atoms[-1]
        k[in_atom] = np.minimum(np.searchsorted(cum_atoms, u_atom[in_atom], side="right"), self.size - 1)
        cont = ~in_atom
        if np.any(cont):
            mass_c = float(self.continuous_mass_by_mode().sum())
            xc = self._inverse_cdf(u_x[cont] * mass_c)
            dens = np.clip(np.exp(np.multiply.outer(xc, self.rates)) @ self.coef, 0.0, None)
            cum = np.cumsum(dens, axis=1)
            pick = np.sum(cum <= (u_mode[cont] * cum[:, -1])[:, None], axis=1)
            x[cont] = xc
            k[cont] = np.minimum(pick, self.size - 1)
        return x, k

    def to_json(self) -> str:
        doc = {
            "regime": self.regime,
            "kind": self.kind,
            "tags": list(self.tags),
            "params": {k: _fmt(v) for k, v in self.params.items()},
            "atoms": {t: _fmt(d) for t, d in zip(self.tags, self.atoms)},
            "terms": [
                {"c": _fmt(c), "zeta": _fmt(z), "a": [_fmt(a) for a in vec]}
                for c, z, vec in zip(self.weights, self.rates, self.vectors)
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MixtureMeasure":
        doc = json.loads(text)
        tags = tuple(doc.get("tags", doc["atoms"].keys()))
        return cls(
            kind=doc["kind"],
            regime=doc["regime"],
            params={k: float(v) for k, v in doc["params"].items()},
            tags=tags,
            atoms=[float(doc["atoms"][t]) for t in tags],
            weights=[float(t["c"]) for t in doc["terms"]],
            rates=[float(t["zeta"]) for t in doc["terms"]],
            vectors=[[float(a) for a in t["a"]] for t in doc["terms"]],
        )


def _check_linear(c, v, **rates):
    for k, x in {"c": c, "v": v, **rates}.items():
        if not (np.isfinite(x) and x > 0):
            raise ParameterError(f"{k} must be positive, got {x!r}")
    if not v > c:
        raise RegimeError("closed forms need v > c")


def instantaneous_linear(omega: float, c: float, v: float) -> MixtureMeasure:
    _check_linear(c, v, omega=omega)
    w = omega
    zeta = -2 * c * w / (v * v - c * c)
    atoms = [0.0, c / (c + v), c * v / (c + v) ** 2]
    a = [
        c * w / (2 * (v * v - c * c)),
        c * w / (c + v) ** 2,
        c * (v - c) * w / (2 * (c + v) ** 3),
    ]
    tags = instantaneous_chain(omega).tags
    return MixtureMeasure("instantaneous", "instantaneous", {"omega": w, "c": c, "v": v}, tags, atoms, [1.0], [zeta], [a])


@dataclass(frozen=True)
class PolynomialPair:
    """Coefficients (highest degree first) of the two characteristic polynomials."""

    P2: tuple[float, float, float]
    P3: tuple[float, ...]

    def zeta2(self) -> float:
        A, B, C = self.P2
        # C < 0 < A, so the roots have opposite signs; this form avoids cancellation
        disc = math.sqrt(B * B - 4 * A * C)
        return (2 * C) / (-B + disc) if B <= 0 else (-B - disc) / (2 * A)

    def zeta3(self) -> float | None:
        if len(self.P3) < 4 or self.P3[0] >= 0:
            return None
        return _negative_cubic_root(self.P3)

    def negative_roots(self) -> tuple[float, float | None]:
        return self.zeta2(), self.zeta3()


def polynomials(alpha: float, beta: float, c: float, v: float) -> PolynomialPair:
    _check_linear(c, v, alpha=alpha, beta=beta)
    a, b = alpha, beta
    P2 = (c * (v - c) * (v + c), (2 * a + b) * c * c - b * v * v, -a * (a + b) * c)
    lead = 2 * c * (2 * c - v) * (2 * c + v)
    rest = (
        2 * (a * v * v - (8 * a + 4 * b) * c * c),
        2 * c * (5 * a * a + 5 * a * b + b * b),
        -(2 * a**3 + 3 * a * a * b + a * b * b),
    )
    # v = 2c: the cubic coefficient vanishes identically
    P3 = rest if v == 2 * c else (lead,) + rest
    return PolynomialPair(P2, P3)


def _negative_cubic_root(coef) -> float:
    """Unique negative root of a cubic with p(0) < 0 and p(-inf) = +inf."""
    a3, a2, a1, a0 = coef

    def p(x):
        return ((a3 * x + a2) * x + a1) * x + a0

    bound = 1.0 + max(abs(a2 / a3), abs(a1 / a3), abs(a0 / a3))
    lo, hi = -bound, 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if p(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(lo)):
            break
    x = 0.5 * (lo + hi)
    d = (3 * a3 * x + 2 * a2) * x + a1
    if d != 0:
        x -= p(x) / d
    return x


def finite_drifts(c: float, v: float) -> np.ndarray:
    return np.array([2 * v - 2 * c, v - 2 * c, -2 * c, -2 * c, -v - 2 * c, -2 * v - 2 * c])


def eigenvector_a(zeta: float, alpha: float, beta: float, c: float, v: float, check: bool = True) -> np.ndarray:
    """Kernel vector of -zeta V + Q^T for zeta a root of P2 or P3."""
    a, b, z = alpha, beta, zeta
    # factored forms of the quadratics in zeta; they cancel badly near v = c otherwise
    N = 2 * z * z * (v - c) * (v - 2 * c) + 2 * z * (a * (2 * v - 3 * c) + b * (v - c)) + 2 * a * a + a * b
    D = 2 * z * z * (v + c) * (v + 2 * c) - 2 * z * (a * (2 * v + 3 * c) + b * (v + c)) + 2 * a * a + a * b
    if D == 0:
        raise ConsistencyError("rho(zeta) has a vanishing denominator")
    rho = N / D
    g = 3 * c * z - 2 * a - b
    vec = np.array([
        -g * a * a * b * b,
        4 * g * (c * z - v * z - a) * a * a * b,
        -2 * N * (c * z - b) * a * b,
        -4 * N * (c * z - a) * a * a,
        4 * rho * g * (c * z + v * z - a) * a * a * b,
        -rho * g * a * a * b * b,
    ])
    if check:
        M = -z * np.diag(finite_drifts(c, v)) + finite_chain(a, b).Q.T
        res = np.max(np.abs(M @ vec))
        scale = np.max(np.abs(vec)) * max(1.0, np.max(np.abs(M)))
        if res > 1e-10 * scale:
            # N(zeta) cancels badly when alpha >> beta and v is close to c;
            # one inverse-iteration step recovers the kernel vector
            with np.errstate(all="ignore"):
                y = np.linalg.lstsq(M + 1e-14 * scale / np.max(np.abs(vec)) * np.eye(6), vec, rcond=None)[0]
            if np.all(np.isfinite(y)) and np.any(y):
                y *= np.dot(y, vec) / np.dot(y, y)
                r2 = np.max(np.abs(M @ y))
                if r2 < res:
                    vec, res = y, r2
                    scale = np.max(np.abs(vec)) * max(1.0, np.max(np.abs(M)))
        if res > 1e-10 * scale:
            raise ConsistencyError(f"zeta={z!r} is not a root: residual {res:.3e}")
    return vec


def finite_linear(alpha: float, beta: float, c: float, v: float) -> MixtureMeasure:
    _check_linear(c, v, alpha=alpha, beta=beta)
    a, b = alpha, beta
    pq = polynomials(a, b, c, v)
    z2, z3 = pq.negative_roots()
    a2 = eigenvector_a(z2, a, b, c, v)
    piq = stationary_closed_form(finite_chain(a, b))
    norm = 4 * a * a * (a + b) ** 2
    params = {"alpha": a, "beta": b, "c": c, "v": v}
    tags = finite_chain(a, b).tags
    if v <= 2 * c:
        c2 = -z2 / (4 * (-3 * c * z2 + 2 * a + b) * (a + b) ** 2 * a * a)
        atoms = piq + c2 * a2 / z2
        atoms[0] = 0.0
        return MixtureMeasure("finite", "finite v<=2c", params, tags, atoms, [c2], [z2], [a2])
    if z3 is None:
        raise ConsistencyError("expected a negative root of P3 for v > 2c")
    a3 = eigenvector_a(z3, a, b, c, v)
    c2 = -z2 * z3 / (norm * (3 * c * z2 - 2 * a - b) * (z2 - z3))
    c3 = z2 * z3 / (norm * (3 * c * z3 - 2 * a - b) * (z2 - z3))
    atoms = piq + c2 * a2 / z2 + c3 * a3 / z3
    atoms[0] = atoms[1] = 0.0
    return MixtureMeasure("finite", "finite v>2c", params, tags, atoms, [c2, c3], [z2, z3], [a2, a3])

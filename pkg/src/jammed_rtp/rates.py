"""Analytic rate objects: Chernoff eigenvalue, rate function, hitting exponents
and the decay-rate bounds for the linear and harmonic processes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .chains import ModeChain, finite_chain, instantaneous_chain, spectral_gap, stationary_closed_form
from .dynamics import ProcessSpec
from .measures import MixtureMeasure, finite_linear, instantaneous_linear, polynomials

__all__ = [
    "DomainError",
    "EigenstructureError",
    "ChernoffProblem",
    "chernoff_lambda",
    "chernoff_lambda_closed",
    "RateFunction",
    "rate_function",
    "rate_function_closed",
    "lezaud_bound",
    "lezaud_raw",
    "LEZAUD_CONSTANT",
    "lyapunov_bound",
    "lyapunov_constant_bound",
    "tv_upper_curve",
    "hitting_lambda",
    "hitting_laplace_exact",
    "lambda1",
    "lambda1_validity",
    "lambda1_prime0",
    "lambda1_prime0_richardson",
    "chernoff_lambda_prime",
    "rate_function_prime_closed",
    "UpperRateFinite",
    "upper_rate_finite",
    "upper_rate_finite_closed",
    "optimality_ratio",
    "DecayBounds",
    "decay_bounds",
    "WassersteinRate",
    "wasserstein_rate",
    "f_q_dirac",
]

LEZAUD_CONSTANT = (3.0 - math.sqrt(5.0)) / 4.0


class DomainError(ValueError):
    """Argument outside the domain where a rate object is defined."""


class EigenstructureError(ArithmeticError):
    """The eigenvalue pattern a formula relies on does not hold at this argument."""


# Chernoff eigenvalue and rate function


@dataclass(frozen=True, eq=False)
class ChernoffProblem:
    Q: np.ndarray
    S: np.ndarray  # diagonal of pi_Q
    V: np.ndarray  # diagonal of normalised velocities sigma / 2
    chain: ModeChain

    @classmethod
    def from_chain(cls, chain: ModeChain) -> "ChernoffProblem":
        return cls(chain.Q, stationary_closed_form(chain), chain.values / 2.0, chain)

    def symmetric(self, u: float) -> np.ndarray:
        """S^(1/2) (Q + uV) S^(-1/2), symmetrised."""
        r = np.sqrt(self.S)
        B = (r[:, None] * self.Q / r[None, :]) + np.diag(u * self.V)
        return 0.5 * (B + B.T)


def _top(problem: ChernoffProblem, u: float):
    w, vec = linalg.eigh(problem.symmetric(u))
    return w[-1], vec[:, -1]


def chernoff_lambda(problem: ChernoffProblem, u: float) -> float:
    return float(_top(problem, u)[0])


def chernoff_lambda_prime(problem: ChernoffProblem, u: float) -> float:
    # Hellmann-Feynman: the u-derivative of the symmetrised matrix is diag(V)
    g = _top(problem, u)[1]
    return float(np.dot(g * g, problem.V))


def chernoff_lambda_closed(omega: float, u):
    return -2.0 * omega + np.sqrt(np.asarray(u, dtype=float) ** 2 + 4.0 * omega * omega)


@dataclass
class RateFunction:
    problem: ChernoffProblem
    closed_form: str | None = None

    def Lambda(self, u: float) -> float:
        return chernoff_lambda(self.problem, u)

    def maximiser(self, R: float) -> float:
        """u* with Lambda'(u*) = R, so that I(R) = u* R - Lambda(u*) and I'(R) = u*."""
        R = float(R)
        if abs(R) >= 1.0:
            raise DomainError("the maximiser is at infinity for |R| >= 1")
        if R == 0.0:
            return 0.0
        g = lambda u: chernoff_lambda_prime(self.problem, u) - R
        step = 1.0 if R > 0 else -1.0
        a, b = 0.0, step
        if g(a) * step >= 0:
            # R is below the rounding level of Lambda'(0)
            return 0.0
        while g(b) * step < 0:
            a, b = b, 2 * b
            if abs(b) > 1e12:
                raise ArithmeticError("could not bracket the maximiser")
        lo, hi = min(a, b), max(a, b)
        return optimize.brentq(g, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)

    def I(self, R: float) -> float:
        R = float(R)
        if abs(R) > 1.0:
            raise DomainError(f"normalised velocity {R} lies outside [-1, 1]")
        if abs(R) == 1.0:
            # limit of uR - Lambda(u): minus the exit rate of the extreme mode
            k = int(np.argmax(R * self.problem.V))
            return float(-self.problem.Q[k, k])
        u = self.maximiser(R)
        return max(0.0, u * R - self.Lambda(u))

    def I_prime(self, R: float) -> float:
        return self.maximiser(R)


def rate_function(chain: ModeChain) -> RateFunction:
    tag = "2 omega (1 - sqrt(1 - R^2))" if chain.kind == "instantaneous" else None
    return RateFunction(ChernoffProblem.from_chain(chain), tag)


def rate_function_closed(omega: float, R):
    R = np.asarray(R, dtype=float)
    if np.any(np.abs(R) > 1):
        raise DomainError("|R| must be at most 1")
    return 2.0 * omega * (1.0 - np.sqrt(1.0 - R * R))


def rate_function_prime_closed(omega: float, R):
    R = np.asarray(R, dtype=float)
    return 2.0 * omega * R / np.sqrt(1.0 - R * R)


def lezaud_raw(alpha: float, beta: float, R: float) -> float:
    """alpha R g((1 + r) R) with g(X) = 2X / (1 + sqrt(1 + 4X))^2."""
    X = (1.0 + alpha / beta) * R
    return alpha * R * 2.0 * X / (1.0 + math.sqrt(1.0 + 4.0 * X)) ** 2


def lezaud_bound(alpha: float, beta: float, R: float) -> float:
    if not (alpha > 0 and beta > 0) or not 0 <= R <= 1:
        raise DomainError("need alpha, beta > 0 and R in [0, 1]")
    return LEZAUD_CONSTANT * min(alpha * R, alpha * (1.0 + alpha / beta) * R * R)


# Lyapunov bound and the total-variation upper curve


def _linear_parts(spec: ProcessSpec):
    if not spec.is_linear:
        raise DomainError("this bound is for the linear processes")
    c, v = spec.potential.c, spec.v
    rf = rate_function(spec.chain)
    R = c / v
    if spec.chain.kind == "instantaneous":
        w = spec.chain.params["omega"]
        I, Ip = float(rate_function_closed(w, R)), float(rate_function_prime_closed(w, R))
    else:
        I, Ip = rf.I(R), rf.I_prime(R)
    return c, v, I, Ip


def _lyap_coeffs(spec: ProcessSpec, lam: float):
    c, v, I, Ip = _linear_parts(spec)
    if not 0 < lam < I:
        raise DomainError(f"lambda must lie in (0, I(c/v)) = (0, {I:.17g}), got {lam!r}")
    a = lam / (2 * c)
    b = Ip / (2 * v) - (I - lam) / (2 * c)
    K = lam / (I - lam) / np.sqrt(stationary_closed_form(spec.chain))
    return a, b, K


def lyapunov_bound(spec: ProcessSpec, x: float, mode, lam: float) -> float:
    """Upper bound on E[exp(lam tau_0)] started from (x, mode)."""
    a, b, K = _lyap_coeffs(spec, lam)
    k = spec.mode_index(mode)
    return float(math.exp(a * x) + K[k] * math.exp(b * x))


def lyapunov_constant_bound(spec: ProcessSpec, lam: float) -> float:
    """Computable upper bound on max over modes of L f(0, sigma).

    Off the glued modes the process leaves 0 at once, so L f(0, s) = -lam f(0, s) <= 0.
    At a glued mode f(0, s) = 1 and L f(0, s) = sum_{s' != s} q f(0, s') + q_ss,
    where f(0, s') is 1 for glued s' and at most the Lyapunov bound otherwise.
    """
    a, b, K = _lyap_coeffs(spec, lam)
    glued = spec.glued()
    fbar0 = np.where(glued, 1.0, 1.0 + K)
    Q = spec.chain.Q
    best = 0.0
    for s in np.nonzero(glued)[0]:
        val = sum(Q[s, j] * fbar0[j] for j in range(Q.shape[0]) if j != s) + Q[s, s]
        best = max(best, float(val))
    return best


def _pi_of_fbar(spec: ProcessSpec, measure: MixtureMeasure, lam: float) -> float:
    a, b, K = _lyap_coeffs(spec, lam)
    total = float(np.dot(measure.atoms, 1.0 + K))
    for rate, coef in zip(measure.rates, measure.coef):
        for e, w in ((a, np.ones_like(K)), (b, K)):
            if e + rate >= 0:
                raise DomainError("the Lyapunov bound is not integrable against the invariant law")
            total += float(np.dot(coef, w)) / -(e + rate)
    return total


def tv_upper_curve(spec: ProcessSpec, x: float, mode, lam: float, t, measure: MixtureMeasure | None = None):
    """Fully evaluable version of the coupling bound on the TV distance to pi at time t."""
    if measure is None:
        measure = _invariant(spec)
    fx = lyapunov_bound(spec, x, mode, lam)
    pf = _pi_of_fbar(spec, measure, lam)
    C = lyapunov_constant_bound(spec, lam)
    lq = spectral_gap(spec.chain)
    t = np.asarray(t, dtype=float)
    return (fx + 2.0 + pf + 2.0 * t * C) * np.exp(-lq * lam / (lq + lam) * t)


def _invariant(spec: ProcessSpec) -> MixtureMeasure:
    c, v = spec.potential.c, spec.v
    if spec.chain.kind == "instantaneous":
        return instantaneous_linear(spec.chain.params["omega"], c, v)
    return finite_linear(spec.chain.params["alpha"], spec.chain.params["beta"], c, v)


# hitting-time exponents


def hitting_lambda(omega: float, c: float, v: float, u: float) -> float:
    if not u < 0:
        raise DomainError("the hitting exponent is defined for u < 0")
    if not v > c > 0:
        raise DomainError("need v > c > 0")
    disc = u * u * v * v - 4 * u * v * v * omega + 4 * c * c * omega * omega
    return (c * u - 2 * c * omega - math.sqrt(disc)) / (2 * (v * v - c * c))


def hitting_laplace_exact(omega: float, c: float, v: float, u: float, L: float, x: float = 0.0, mode: str = "+2") -> float:
    """E[exp(u tau_L)] for the instantaneous linear process, tau_L = first time x > L.

    Solves V F' + (Q + u) F = 0 on (0, L) with the glued boundary relations at 0
    and f_{+2}(L) = 1.
    """
    if not 0 <= x <= L:
        raise DomainError("need 0 <= x <= L")
    Q = instantaneous_chain(omega).Q
    V = np.diag([2 * v - 2 * c, -2 * c, -2 * v - 2 * c])
    A = -np.linalg.solve(V, Q + u * np.eye(3))
    F0 = np.array([1 - 2 * u / omega + u * u / (2 * omega * omega), 1 - u / (2 * omega), 1.0])
    gamma = (linalg.expm(L * A) @ F0)[0]
    F = linalg.expm(x * A) @ F0 / gamma
    return float(F[("+2", "0", "-2").index(mode)])


def _A1(alpha, beta, c, v, u):
    V1 = np.array([v - c, -c, -c - v])
    Q1 = np.array([[-alpha, alpha, 0.0], [beta / 2, -beta, beta / 2], [0.0, alpha, -alpha]])
    return -(Q1 + u * np.eye(3)) / V1[:, None]


def _A1_spectrum(alpha, beta, c, v, u):
    w = np.linalg.eigvals(_A1(alpha, beta, c, v, u))
    scale = max(1.0, float(np.max(np.abs(w))))
    if np.max(np.abs(w.imag)) > 1e-12 * scale:
        raise EigenstructureError(f"A1({u}) has complex eigenvalues")
    w = np.sort(w.real)[::-1]
    if np.min(np.diff(w[::-1])) <= 1e-12 * scale:
        raise EigenstructureError(f"A1({u}) has a repeated eigenvalue")
    if not w[0] > 0 or not w[1] <= 1e-12 * scale or not w[2] < 0:
        raise EigenstructureError(f"A1({u}) does not have one positive and two nonpositive eigenvalues")
    return w


def lambda1(alpha: float, beta: float, c: float, v: float, u: float) -> float:
    if u > 0:
        raise DomainError("Lambda_1 is defined on a left neighbourhood of 0")
    return float(-_A1_spectrum(alpha, beta, c, v, u)[0])


def lambda1_validity(alpha: float, beta: float, c: float, v: float, u_min: float = -1e3) -> float:
    """Left end U of the interval (U, 0] on which A1 keeps three distinct real eigenvalues
    of the required signs.  Returns ``u_min`` if the pattern holds all the way."""

    def ok(u):
        try:
            _A1_spectrum(alpha, beta, c, v, u)
            return True
        except EigenstructureError:
            return False

    if not ok(-1e-12):
        raise EigenstructureError("the eigenvalue pattern fails next to u = 0")
    lo = -1e-3 * (alpha + beta)
    while ok(lo):
        if lo <= u_min:
            return u_min
        lo *= 2
    hi = lo / 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-12 * abs(lo):
            break
    return hi


def lambda1_prime0(alpha: float, beta: float, c: float, v: float) -> float:
    """Lambda_1'(0) from left and right eigenvectors of the top eigenvalue of A1(0)."""
    A = _A1(alpha, beta, c, v, 0.0)
    w, vl, vr = linalg.eig(A, left=True, right=True)
    k = int(np.argmax(w.real))
    dA = -np.diag(1.0 / np.array([v - c, -c, -c - v]))
    l, r = vl[:, k].real, vr[:, k].real
    dX = float(l @ dA @ r / (l @ r))
    return -dX


def lambda1_prime0_richardson(alpha, beta, c, v, h: float = 1e-6) -> float:
    """One-sided check value: Richardson-extrapolated backward differences."""
    f0 = lambda1(alpha, beta, c, v, 0.0)
    d1 = (f0 - lambda1(alpha, beta, c, v, -h)) / h
    d2 = (f0 - lambda1(alpha, beta, c, v, -h / 2)) / (h / 2)
    return 2 * d2 - d1


@dataclass
class UpperRateFinite:
    exact: float  # (2 / Lambda_1'(0)) (-zeta_2)
    stated: float  # 4 alpha (1 + alpha/beta) (c/v)^2
    lambda1_prime0: float
    zeta2: float


def upper_rate_finite(alpha: float, beta: float, c: float, v: float) -> UpperRateFinite:
    z2 = polynomials(alpha, beta, c, v).zeta2()
    lp = lambda1_prime0(alpha, beta, c, v)
    R = c / v
    return UpperRateFinite(2.0 / lp * -z2, 4 * alpha * (1 + alpha / beta) * R * R, lp, z2)


def upper_rate_finite_closed(alpha: float, r: float, R: float) -> float:
    s = math.sqrt((4 * r * r - 2) * R**2 + R**4 + 1)
    num = (
        (4 * r * r + 2 * r - 1) * R**2
        + R**4 * (s + 4 * r * (2 * r * r + r - 1) - 1)
        - s
        + (2 * r + 1) * R**6
        + 1
    )
    den = 2 * r * ((4 * r * r - 1) * R**4 + (4 * r - 1) * R**2 + R**6 + 1)
    return 2 * alpha * num / den


def optimality_ratio(r: float, R: float) -> float:
    """(2/Lambda_1'(0))(-zeta_2) / (alpha (1 + r) R^2); scale free, so alpha = v = 1."""
    u = upper_rate_finite(1.0, 1.0 / r, R, 1.0)
    return u.exact / ((1 + r) * R * R)


# headline decay-rate bounds


@dataclass
class DecayBounds:
    lower_rate: float  # best rate the coupling argument gives, lam_Q I / (lam_Q + I)
    lower_stated: float
    upper_exact: float
    upper_stated: float
    kind: str
    R: float
    r: float | None = None
    extra: dict = field(default_factory=dict)

    def ordered(self) -> bool:
        return 0 < self.lower_stated <= self.lower_rate <= self.upper_exact <= self.upper_stated


def decay_bounds(spec: ProcessSpec) -> DecayBounds:
    if not spec.is_linear:
        raise DomainError("decay bounds in total variation are for the linear processes; use wasserstein_rate")
    c, v = spec.potential.c, spec.v
    R = c / v
    lq = spectral_gap(spec.chain)
    if spec.chain.kind == "instantaneous":
        w = spec.chain.params["omega"]
        I = float(rate_function_closed(w, R))
        return DecayBounds(
            lq * I / (lq + I), 0.5 * w * R * R, 4 * w * c * c / (c * c + v * v), 4 * w * R * R,
            "instantaneous", R, None, {"I": I, "lambda_Q": lq, "guaranteed": w * (1 - math.sqrt(1 - R * R))},
        )
    a, b = spec.chain.params["alpha"], spec.chain.params["beta"]
    I = rate_function(spec.chain).I(R)
    up = upper_rate_finite(a, b, c, v)
    stated_low = 0.5 * lezaud_bound(a, b, R)
    return DecayBounds(
        lq * I / (lq + I), stated_low, up.exact, up.stated, "finite", R, a / b,
        {"I": I, "lambda_Q": lq, "lambda1_prime0": up.lambda1_prime0, "zeta2": up.zeta2},
    )


# harmonic Wasserstein rate


@dataclass
class WassersteinRate:
    omega: float
    mu: float
    p: float
    q: float
    s: float
    rate: float  # exponential rate of the full bound, min(main, 2 omega)
    main_rate: float  # (2 omega mu / s) / (omega / s + p mu)
    q_limit_rate: float  # min(omega / p, mu)

    def prefactor(self, F: float, v: float) -> float:
        return (1 + 2 ** (1 / self.s)) ** (1 / self.p) * (F + v / self.mu)

    def bound(self, t, F: float, v: float):
        t = np.asarray(t, dtype=float)
        return self.prefactor(F, v) * np.exp(-self.main_rate * t) + 2 * np.exp(-2 * self.omega * t)


def wasserstein_rate(omega: float, mu: float, p: float, q: float) -> WassersteinRate:
    if not (omega > 0 and mu > 0):
        raise DomainError("omega and mu must be positive")
    if not 1 <= p < q:
        raise DomainError("need 1 <= p < q")
    s = math.inf if q == p else 1.0 / (1.0 - p / q)
    main = (2 * omega * mu / s) / (omega / s + p * mu)
    return WassersteinRate(omega, mu, p, q, s, min(main, 2 * omega), main, min(omega / p, mu))


def f_q_dirac(x: float, v: float, mu: float) -> float:
    return max(x, v / mu)

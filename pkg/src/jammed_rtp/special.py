"""Hypergeometric and elliptic functions used by the invariant measures.

Gamma and its reciprocal come from scipy.special; everything else is
evaluated here so that the parameter regimes we care about are handled
explicitly (near-integer c - a - b, slowly convergent 3F2 at unit argument).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as sps

__all__ = [
    "ConvergenceError",
    "gamma",
    "rgamma",
    "hyp2f1",
    "hyp2f1_regularized",
    "hyp3f2_one_regularized",
    "ellipk",
    "ellipe",
    "ellipk_complement",
    "ellipe_complement",
]

SERIES_CAP = 1_000_000
_EPS = 2.0**-52


class ConvergenceError(ArithmeticError):
    """Raised when a series fails to reach the requested accuracy."""


def gamma(x):
    return sps.gamma(x)


def rgamma(x):
    return sps.rgamma(x)


def _is_nonpos_int(a: float, tol: float = 1e-14) -> bool:
    return a <= tol and abs(a - round(a)) <= tol * max(1.0, abs(a))


def _series(a: float, b: float, c: float, z: np.ndarray, cap: int) -> np.ndarray:
    """Plain Gauss series sum_n (a)_n (b)_n / ((c)_n n!) z^n, vectorised in z."""
    z = np.asarray(z, dtype=float)
    total = np.ones_like(z)
    term = np.ones_like(z)
    comp = np.zeros_like(z)
    for n in range(cap):
        term = term * ((a + n) * (b + n) / ((c + n) * (n + 1.0))) * z
        # Kahan summation keeps long series near z = 1 honest
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if not np.any(np.abs(term) > 1e-17 * np.abs(total)):
            # the ratio test bound: remaining terms shrink geometrically
            return total
    raise ConvergenceError(f"2F1({a}, {b}; {c}; z) series did not converge in {cap} terms")


def hyp2f1(a: float, b: float, c: float, z, cap: int = SERIES_CAP, w=None):
    """Gauss hypergeometric 2F1(a, b; c; z) for real z in [0, 1].

    z = 1 is accepted only when c - a - b > 0 (Gauss summation).
    """
    if _is_nonpos_int(c) and not (_is_nonpos_int(a) and a > c) and not (_is_nonpos_int(b) and b > c):
        raise ValueError("c is a non-positive integer; use hyp2f1_regularized")
    return _hyp2f1(a, b, c, z, cap, w)


def hyp2f1_regularized(a: float, b: float, c: float, z, cap: int = SERIES_CAP, w=None):
    """2F1(a, b; c; z) / Gamma(c), finite for every real c.

    ``w`` optionally carries 1 - z computed without cancellation.
    """
    if _is_nonpos_int(c):
        m = int(round(-c))
        # lift through the pole of Gamma(c)
        pref = sps.poch(a, m + 1) * sps.poch(b, m + 1) / math.factorial(m + 1)
        z = np.asarray(z, dtype=float)
        return pref * z ** (m + 1) * _hyp2f1(a + m + 1, b + m + 1, m + 2.0, z, cap, w)
    return rgamma(c) * _hyp2f1(a, b, c, z, cap, w)


def _hyp2f1(a, b, c, z, cap, w=None):
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    wfull = 1.0 - z if w is None else np.broadcast_to(np.asarray(w, dtype=float), z.shape)
    if np.any((z < 0) | (z > 1)) or np.any(np.isnan(z)):
        raise ValueError("hyp2f1 is only implemented for z in [0, 1]")
    out = np.empty_like(z)

    terminating = _is_nonpos_int(a) or _is_nonpos_int(b)
    d = c - a - b
    at_one = (z == 1.0) if w is None else (wfull == 0.0)
    if np.any(at_one):
        if terminating:
            out[at_one] = _series(a, b, c, np.ones(1), cap)[0]
        elif d > 0:
            out[at_one] = gamma(c) * gamma(d) * rgamma(c - a) * rgamma(c - b)
        else:
            raise ValueError("2F1 diverges at z = 1 when c - a - b <= 0")
    rest = ~at_one
    if terminating:
        out[rest] = _series(a, b, c, z[rest], cap)
        return out[0] if scalar else out

    low = rest & (z <= 0.5)
    high = rest & (z > 0.5)
    if np.any(low):
        out[low] = _series(a, b, c, z[low], cap)
    if np.any(high):
        zh = z[high]
        if abs(d - round(d)) < 1e-9:
            # connection coefficients are singular; fall back to the direct series
            out[high] = _series(a, b, c, zh, cap)
        else:
            w = wfull[high]
            g1 = gamma(c) * gamma(d) * rgamma(c - a) * rgamma(c - b)
            g2 = gamma(c) * gamma(-d) * rgamma(a) * rgamma(b)
            f1 = _series(a, b, 1.0 - d, w, cap) if g1 != 0 else 0.0
            f2 = _series(c - a, c - b, 1.0 + d, w, cap) if g2 != 0 else 0.0
            out[high] = g1 * f1 + g2 * w**d * f2
    return out[0] if scalar else out


def hyp3f2_one_regularized(a, b) -> float:
    """3F2(a1, a2, a3; b1, b2; 1) / (Gamma(b1) Gamma(b2)).

    Needs s = b1 + b2 - a1 - a2 - a3 > 0 unless the series terminates.  For
    small s the partial sums behave like S + N^(-s) (A0 + A1/N + ...), so the
    limit is extrapolated from exact partial sums at N = 100, 200, ..., 6400.
    """
    a = [float(t) for t in a]
    b = [float(t) for t in b]
    if len(a) != 3 or len(b) != 2:
        raise ValueError("expected three numerator and two denominator parameters")
    for bj in b:
        if _is_nonpos_int(bj):
            raise ValueError("denominator parameter is a non-positive integer")
    pref = float(rgamma(b[0]) * rgamma(b[1]))
    terminating = any(_is_nonpos_int(t) for t in a)
    s = sum(b) - sum(a)
    if not terminating and s <= 0:
        raise ValueError(f"3F2 at unit argument diverges: b1 + b2 - a1 - a2 - a3 = {s:.6g}")

    if terminating or s > 8.0:
        terms = [1.0]
        t = 1.0
        biggest = 1.0
        for n in range(SERIES_CAP):
            t *= (a[0] + n) * (a[1] + n) * (a[2] + n) / ((b[0] + n) * (b[1] + n) * (n + 1.0))
            terms.append(t)
            biggest = max(biggest, abs(t))
            if abs(t) < 1e-18 * biggest and n > 4:
                return pref * math.fsum(terms)
        raise ConvergenceError("3F2 direct summation hit the term cap")
    return pref * _extrapolated_sum(a, b, s)


def _extrapolated_sum(a, b, s, order: int = 6, n0: int = 100) -> float:
    ns = [n0 * 2**j for j in range(order + 1)]
    n = np.arange(ns[-1] - 1, dtype=float)
    ratio = (a[0] + n) * (a[1] + n) * (a[2] + n) / ((b[0] + n) * (b[1] + n) * (n + 1.0))
    terms = np.concatenate([[1.0], np.cumprod(ratio)])
    partial = np.array([math.fsum(terms[:m]) for m in ns])
    design = np.array([[1.0] + [float(m) ** (-s - k) for k in range(order)] for m in ns])
    scale = np.abs(design).max(axis=0)
    sol = np.linalg.solve(design / scale, partial)
    return float(sol[0] / scale[0])


def _agm(a: np.ndarray, b: np.ndarray):
    """Arithmetic-geometric mean together with sum 2^(n-1) c_n^2 for n >= 1."""
    a = a.copy()
    b = b.copy()
    acc = np.zeros_like(a)
    p = 0.5
    for _ in range(64):
        an = 0.5 * (a + b)
        cn = 0.5 * (a - b)
        b = np.sqrt(a * b)
        a = an
        p *= 2.0
        acc += p * cn * cn
        if np.all(np.abs(cn) <= 4 * _EPS * a):
            break
    return a, acc


def ellipk_complement(m1):
    """K evaluated at parameter m = 1 - m1, computed directly from m1 in (0, 1]."""
    m1 = np.asarray(m1, dtype=float)
    if np.any(m1 <= 0) or np.any(m1 > 1):
        raise ValueError("complementary parameter must lie in (0, 1]")
    a, _ = _agm(np.ones_like(m1), np.sqrt(m1))
    return np.pi / (2.0 * a)


def ellipe_complement(m1):
    """E evaluated at parameter m = 1 - m1, m1 in [0, 1]."""
    m1 = np.asarray(m1, dtype=float)
    if np.any(m1 < 0) or np.any(m1 > 1):
        raise ValueError("complementary parameter must lie in [0, 1]")
    out = np.ones_like(m1)
    pos = m1 > 0
    if np.any(pos):
        mm = m1[pos]
        a, acc = _agm(np.ones_like(mm), np.sqrt(mm))
        k = np.pi / (2.0 * a)
        # c_0^2 = m contributes with weight 1/2
        out[pos] = k * (1.0 - 0.5 * (1.0 - mm) - acc)
    return out[()] if out.ndim == 0 else out


def ellipk(m):
    """Complete elliptic integral of the first kind, parameter convention, m in [0, 1)."""
    m = np.asarray(m, dtype=float)
    if np.any(m < 0) or np.any(m >= 1):
        raise ValueError("parameter must lie in [0, 1)")
    out = ellipk_complement(1.0 - m)
    return out[()] if np.ndim(out) == 0 else out


def ellipe(m):
    """Complete elliptic integral of the second kind, m in [0, 1]."""
    m = np.asarray(m, dtype=float)
    return ellipe_complement(1.0 - m)

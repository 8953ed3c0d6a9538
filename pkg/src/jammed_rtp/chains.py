"""Relative-velocity mode chains for two jammed run-and-tumble particles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mode",
    "ModeChain",
    "ParameterError",
    "instantaneous_chain",
    "finite_chain",
    "stationary_law",
    "stationary_closed_form",
    "spectrum",
    "spectral_gap",
]


class ParameterError(ValueError):
    """Invalid model parameters."""


@dataclass(frozen=True)
class Mode:
    tag: str
    value: int


@dataclass(frozen=True, eq=False)
class ModeChain:
    """Finite-state generator together with the relative velocity of each mode.

    ``kind`` is "instantaneous" or "finite"; ``params`` keeps the rates the
    chain was built from so closed forms can be looked up later.
    """

    kind: str
    modes: tuple[Mode, ...]
    Q: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @property
    def size(self) -> int:
        return len(self.modes)

    @property
    def values(self) -> np.ndarray:
        return np.array([m.value for m in self.modes], dtype=float)

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(m.tag for m in self.modes)

    def index(self, tag: str) -> int:
        return self.tags.index(tag)

    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.Q).copy()

    def jump_probabilities(self) -> np.ndarray:
        """Embedded jump-chain transition matrix."""
        r = self.exit_rates()
        P = self.Q / r[:, None]
        np.fill_diagonal(P, 0.0)
        return P


def _positive(**kw):
    for k, x in kw.items():
        if not (np.isfinite(x) and x > 0):
            raise ParameterError(f"{k} must be positive and finite, got {x!r}")


def instantaneous_chain(omega: float) -> ModeChain:
    _positive(omega=omega)
    w = float(omega)
    Q = np.array([
        [-2 * w, 2 * w, 0.0],
        [w, -2 * w, w],
        [0.0, 2 * w, -2 * w],
    ])
    modes = (Mode("+2", 2), Mode("0", 0), Mode("-2", -2))
    return ModeChain("instantaneous", modes, Q, {"omega": w})


def finite_chain(alpha: float, beta: float) -> ModeChain:
    _positive(alpha=alpha, beta=beta)
    a, b = float(alpha), float(beta)
    Q = np.array([
        [-2 * a, 2 * a, 0, 0, 0, 0],
        [b / 2, -a - b, b / 2, a, 0, 0],
        [0, a, -2 * a, 0, a, 0],
        [0, b, 0, -2 * b, b, 0],
        [0, 0, b / 2, a, -a - b, b / 2],
        [0, 0, 0, 0, 2 * a, -2 * a],
    ], dtype=float)
    modes = (Mode("+2", 2), Mode("+1", 1), Mode("0+-", 0), Mode("00", 0), Mode("-1", -1), Mode("-2", -2))
    return ModeChain("finite", modes, Q, {"alpha": a, "beta": b})


def stationary_law(chain: ModeChain) -> np.ndarray:
    """Solve pi Q = 0 with sum(pi) = 1 by least squares on the augmented system."""
    n = chain.size
    A = np.vstack([chain.Q.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return pi


def stationary_closed_form(chain: ModeChain) -> np.ndarray:
    if chain.kind == "instantaneous":
        return np.array([0.25, 0.5, 0.25])
    a, b = chain.params["alpha"], chain.params["beta"]
    return np.array([b * b / 4, a * b, b * b / 2, a * a, a * b, b * b / 4]) / (a + b) ** 2


def spectrum(chain: ModeChain) -> np.ndarray:
    """Closed-form eigenvalues of Q, sorted in decreasing order."""
    if chain.kind == "instantaneous":
        w = chain.params["omega"]
        ev = [0.0, -2 * w, -4 * w]
    else:
        a, b = chain.params["alpha"], chain.params["beta"]
        ev = [0.0, -a, -2 * a, -a - b, -2 * a - b, -2 * a - 2 * b]
    return np.sort(np.array(ev))[::-1]


def spectral_gap(chain: ModeChain) -> float:
    """lambda_Q: 2 omega for the instantaneous chain, alpha for the finite one."""
    ev = spectrum(chain)
    return float(-ev[1])

"""Two jammed run-and-tumble particles as a piecewise-deterministic Markov process."""

__version__ = "0.1.0"

from .chains import ParameterError, finite_chain, instantaneous_chain, spectral_gap, stationary_law
from .dynamics import Harmonic, Linear, ProcessSpec, State, simulate_ensemble, simulate_path
from .harmonic import HarmonicMeasure, harmonic_invariant
from .measures import MixtureMeasure, finite_linear, instantaneous_linear
from .rates import decay_bounds, rate_function, wasserstein_rate
from .streams import Streams

__all__ = [
    "ParameterError",
    "instantaneous_chain",
    "finite_chain",
    "stationary_law",
    "spectral_gap",
    "Linear",
    "Harmonic",
    "ProcessSpec",
    "State",
    "simulate_path",
    "simulate_ensemble",
    "MixtureMeasure",
    "instantaneous_linear",
    "finite_linear",
    "HarmonicMeasure",
    "harmonic_invariant",
    "rate_function",
    "decay_bounds",
    "wasserstein_rate",
    "Streams",
]

"""Fixed random reservoirs and their state updates.

A reservoir is a pair of fixed random weight matrices (dense input weights,
sparse recurrent weights scaled to a prescribed spectral radius) plus a
leaking rate.  Driving it with an input sequence produces a trajectory of
state vectors; downstream code consumes the expanded state

    v(n) = [1; u(n); x(n)]

of length ``n_r = 1 + n_u + n_x``, which is what the linear readout sees.
Only the readout is ever trained; the weights here stay frozen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError, DimensionError, SpectralRadiusError

# Dense eigensolver is cheap and exact below this size; power iteration
# takes over for larger reservoirs.
_DENSE_EIG_MAX = 64
_POWER_MAX_ITER = 1000
_POWER_RTOL = 1e-9


@dataclass(frozen=True)
class ReservoirParams:
    """Everything needed to rebuild a reservoir deterministically."""

    n_x: int
    n_u: int
    n_y: int
    leaking_rate: float
    spectral_radius: float
    input_scaling: float = 1.0
    density: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_x < 1 or self.n_u < 1 or self.n_y < 1:
            raise ConfigError(
                f"dimensions must be >= 1, got n_x={self.n_x}, n_u={self.n_u}, n_y={self.n_y}"
            )
        if not 0.0 < self.leaking_rate <= 1.0:
            raise ConfigError(f"leaking_rate must be in (0, 1], got {self.leaking_rate}")
        if self.spectral_radius <= 0.0:
            raise ConfigError(f"spectral_radius must be > 0, got {self.spectral_radius}")
        if not 0.0 < self.density <= 1.0:
            raise ConfigError(f"density must be in (0, 1], got {self.density}")
        if self.input_scaling <= 0.0:
            raise ConfigError(f"input_scaling must be > 0, got {self.input_scaling}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    @property
    def n_r(self) -> int:
        return 1 + self.n_u + self.n_x


@dataclass(frozen=True)
class ReservoirWeights:
    """Immutable weight matrices; safe to share across threads."""

    w_in: np.ndarray  # (n_x, 1 + n_u), dense
    w: sp.csr_matrix  # (n_x, n_x), sparse
    params: ReservoirParams


def spectral_radius(w: sp.spmatrix | np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square matrix.

    Dense eigensolver up to 64x64, power iteration above that (capped at
    1000 iterations, 1e-9 relative tolerance).  Power iteration stalls when
    the dominant eigenvalues form a complex pair, so a non-converged run
    falls back to ARPACK and then to the dense solver.
    """
    n = w.shape[0]
    if n <= _DENSE_EIG_MAX:
        dense = w.toarray() if sp.issparse(w) else np.asarray(w)
        return float(np.max(np.abs(np.linalg.eigvals(dense))))

    est = _power_iteration(w, n)
    if est is not None:
        return est
    try:
        vals = sp.linalg.eigs(
            sp.csr_matrix(w), k=1, which="LM", return_eigenvectors=False, maxiter=5000
        )
        return float(np.abs(vals[0]))
    except (sp.linalg.ArpackNoConvergence, sp.linalg.ArpackError):
        dense = w.toarray() if sp.issparse(w) else np.asarray(w)
        return float(np.max(np.abs(np.linalg.eigvals(dense))))


def _power_iteration(w, n: int) -> Optional[float]:
    rng = np.random.default_rng(12345)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    prev = 0.0
    for _ in range(_POWER_MAX_ITER):
        y = w.dot(x)
        est = float(np.linalg.norm(y))
        if est == 0.0:
            return 0.0
        if abs(est - prev) <= _POWER_RTOL * est:
            return est
        prev = est
        x = y / est
    return None


def generate_reservoir(params: ReservoirParams) -> ReservoirWeights:
    """Draw the fixed random weights for ``params``.

    Input weights are i.i.d. uniform on [-input_scaling, input_scaling].
    Recurrent weights get an i.i.d. Bernoulli(density) mask with surviving
    entries uniform on [-1, 1], then the whole matrix is rescaled so its
    spectral radius equals ``params.spectral_radius``.  Bit-reproducible
    for a given seed.
    """
    rng = np.random.default_rng(params.seed)
    w_in = rng.uniform(-params.input_scaling, params.input_scaling,
                       size=(params.n_x, 1 + params.n_u))

    mask = rng.random((params.n_x, params.n_x)) < params.density
    rows, cols = np.nonzero(mask)
    values = rng.uniform(-1.0, 1.0, size=rows.size)
    w = sp.csr_matrix((values, (rows, cols)), shape=(params.n_x, params.n_x))

    rho = spectral_radius(w)
    if rho <= 0.0:
        raise SpectralRadiusError(
            f"generated recurrent matrix has spectral radius 0 "
            f"(n_x={params.n_x}, density={params.density}, seed={params.seed}); "
            f"increase density or reservoir size"
        )
    w = w * (params.spectral_radius / rho)
    return ReservoirWeights(w_in=w_in, w=sp.csr_matrix(w), params=params)


def zero_state(params: ReservoirParams) -> np.ndarray:
    """Conventional initial state x(0) = 0."""
    return np.zeros(params.n_x)


def update_state(weights: ReservoirWeights, state: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One leaky-integrated tanh update.

    Returns ``(1 - a) * x + a * tanh(W_in [1; u] + W x)`` without touching
    the input state.
    """
    p = weights.params
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != p.n_u:
        raise DimensionError(f"input length: expected {p.n_u}, got {u.shape[0]}")
    if state.shape[0] != p.n_x:
        raise DimensionError(f"state length: expected {p.n_x}, got {state.shape[0]}")
    u1 = np.empty(1 + p.n_u)
    u1[0] = 1.0
    u1[1:] = u
    pre = weights.w_in @ u1 + weights.w.dot(state)
    a = p.leaking_rate
    return (1.0 - a) * state + a * np.tanh(pre)


def expanded_state(u: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Stack [1; u; x] into the readout's input vector."""
    v = np.empty(1 + u.shape[0] + x.shape[0])
    v[0] = 1.0
    v[1: 1 + u.shape[0]] = u
    v[1 + u.shape[0]:] = x
    return v


def run_sequence(
    weights: ReservoirWeights,
    state: np.ndarray,
    inputs: np.ndarray,
    sink: Optional[Callable[[np.ndarray], None]] = None,
) -> np.ndarray:
    """Drive the reservoir over ``inputs`` (shape (n_u, T)), in order.

    After each update the expanded state [1; u(n); x(n)] is handed to
    ``sink``.  Returns the final reservoir state so that consecutive calls
    over adjacent segments reproduce a single longer run exactly.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    p = weights.params
    if inputs.shape[0] != p.n_u:
        raise DimensionError(f"input rows: expected {p.n_u}, got {inputs.shape[0]}")
    if inputs.shape[1] == 0:
        raise DimensionError("input sequence is empty")
    x = state
    for t in range(inputs.shape[1]):
        u = inputs[:, t]
        x = update_state(weights, x, u)
        if sink is not None:
            sink(expanded_state(u, x))
    return x


def collect_states(
    weights: ReservoirWeights, state: np.ndarray, inputs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Run a segment and return (expanded-state block (n_r, T), final state)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    p = weights.params
    n_steps = inputs.shape[1]
    block = np.empty((p.n_r, n_steps))
    x = state
    for t in range(n_steps):
        x = update_state(weights, x, inputs[:, t])
        block[0, t] = 1.0
        block[1: 1 + p.n_u, t] = inputs[:, t]
        block[1 + p.n_u:, t] = x
    return block, x

"""Normal-equation accumulators and the ridge readout solve.

The sufficient statistics for the linear readout are the running sums
``s = sum_n v(n) v(n)^T`` and ``p = sum_n y(n) v(n)^T`` over expanded
states v(n) and targets y(n).  They are additive over time steps, which is
what lets cross-validation derive every split's training statistics from
one pass over the data: accumulators for disjoint step sets merge by
addition, and a subset can be removed again by subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, EsncvError, SingularSystemError


@dataclass
class NormalAccumulator:
    """Running (v v^T, y v^T) sums plus the number of accumulated steps."""

    s: np.ndarray  # (n_r, n_r)
    p: np.ndarray  # (n_y, n_r)
    count: int = 0

    @classmethod
    def zeros(cls, n_r: int, n_y: int) -> "NormalAccumulator":
        return cls(s=np.zeros((n_r, n_r)), p=np.zeros((n_y, n_r)), count=0)

    @property
    def n_r(self) -> int:
        return self.s.shape[0]

    @property
    def n_y(self) -> int:
        return self.p.shape[0]

    def copy(self) -> "NormalAccumulator":
        return NormalAccumulator(s=self.s.copy(), p=self.p.copy(), count=self.count)

    def add_step(self, v: np.ndarray, y: np.ndarray) -> None:
        """Accumulate one step in place: s += v v^T, p += y v^T."""
        v = np.asarray(v, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if v.shape[0] != self.n_r:
            raise DimensionError(f"state length: expected {self.n_r}, got {v.shape[0]}")
        if y.shape[0] != self.n_y:
            raise DimensionError(f"target length: expected {self.n_y}, got {y.shape[0]}")
        self.s += np.outer(v, v)
        self.p += np.outer(y, v)
        self.count += 1

    def add_block(self, states: np.ndarray, targets: np.ndarray) -> None:
        """Accumulate a whole segment at once (states (n_r, T), targets (n_y, T))."""
        if states.shape[0] != self.n_r:
            raise DimensionError(f"state rows: expected {self.n_r}, got {states.shape[0]}")
        if targets.shape[0] != self.n_y:
            raise DimensionError(f"target rows: expected {self.n_y}, got {targets.shape[0]}")
        if states.shape[1] != targets.shape[1]:
            raise DimensionError(
                f"step counts differ: states {states.shape[1]}, targets {targets.shape[1]}"
            )
        self.s += states @ states.T
        self.p += targets @ states.T
        self.count += states.shape[1]

    def merge(self, other: "NormalAccumulator") -> "NormalAccumulator":
        """Accumulator over the union of two disjoint step sets."""
        self._check_dims(other)
        return NormalAccumulator(
            s=self.s + other.s, p=self.p + other.p, count=self.count + other.count
        )

    def subtract(self, part: "NormalAccumulator") -> "NormalAccumulator":
        """Remove a previously merged part; inverse of :meth:`merge`."""
        self._check_dims(part)
        if part.count > self.count:
            raise EsncvError(
                f"accumulator underflow: subtracting {part.count} steps from {self.count} "
                f"(split plan inconsistent with accumulation)"
            )
        return NormalAccumulator(
            s=self.s - part.s, p=self.p - part.p, count=self.count - part.count
        )

    def _check_dims(self, other: "NormalAccumulator") -> None:
        if other.s.shape != self.s.shape or other.p.shape != self.p.shape:
            raise DimensionError(
                f"accumulator shapes differ: {self.s.shape}/{self.p.shape} "
                f"vs {other.s.shape}/{other.p.shape}"
            )


def accumulate(acc: NormalAccumulator, v: np.ndarray, y: np.ndarray) -> NormalAccumulator:
    """Pure single-step accumulation; returns a new accumulator."""
    out = acc.copy()
    out.add_step(v, y)
    return out


@dataclass(frozen=True)
class TrainedReadout:
    """Output weights together with the regularization that produced them."""

    w_out: np.ndarray  # (n_y, n_r)
    beta: float
    train_count: int


def ridge_solve(
    acc: NormalAccumulator, beta: float, exclude_bias: bool = True
) -> TrainedReadout:
    """Solve W_out = p (s + beta I')^-1 via a symmetric factorization.

    ``I'`` is the identity with entry (0, 0) zeroed when ``exclude_bias``
    is set, so the bias weight escapes regularization.  The system is
    re-symmetrized first (subtraction leaves tiny asymmetric drift) and the
    solution is polished with one step of iterative refinement, which
    recovers digits lost to mild ill-conditioning at negligible cost.
    """
    if beta < 0.0:
        raise EsncvError(f"regularization must be non-negative, got {beta}")
    if acc.count < 1:
        raise SingularSystemError(
            "cannot train a readout on an empty accumulator (0 steps)"
        )
    m = 0.5 * (acc.s + acc.s.T)
    diag = np.full(acc.n_r, beta)
    if exclude_bias:
        diag[0] = 0.0
    m[np.diag_indices_from(m)] += diag

    try:
        factor = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(m))
        raise SingularSystemError(
            f"ridge system not positive definite at beta={beta} "
            f"(condition ~ {cond:.3e}); retry with beta > 0",
            condition=cond,
        ) from exc

    rhs = acc.p.T
    wt = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    residual = rhs - m @ wt
    wt = wt + scipy.linalg.cho_solve(factor, residual, check_finite=False)

    if not np.all(np.isfinite(wt)):
        cond = float(np.linalg.cond(m))
        raise SingularSystemError(
            f"ridge solution overflowed at beta={beta} (condition ~ {cond:.3e})",
            condition=cond,
        )
    return TrainedReadout(w_out=wt.T, beta=beta, train_count=acc.count)


def predict(readout: TrainedReadout, v: np.ndarray) -> np.ndarray:
    """Apply the readout: y = W_out v.  Accepts a vector or an (n_r, T) block."""
    return readout.w_out @ v

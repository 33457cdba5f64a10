"""Task kinds and their error metrics.

Three kinds of temporal task are supported:

* generative: the model's output is fed back as (part of) the next input;
  validation and testing run closed-loop (free run), training is
  teacher-forced.
* output: the output series never re-enters the input.
* classification: each pre-cut sequence gets one label, read off a single
  feature vector per sequence (its last or mean expanded state).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import reservoir as rv
from .exceptions import DataError, DimensionError
from .regression import TrainedReadout


class TaskKind(Enum):
    GENERATIVE = "generative"
    OUTPUT = "output"
    CLASSIFICATION = "classification"


@dataclass
class SeriesTask:
    """A continuous-signal task: inputs (n_u, T) aligned with targets (n_y, T).

    ``feedback_map[j]`` names the input row that receives output row j
    during free runs; ``None`` marks a plain output task.
    """

    inputs: np.ndarray
    targets: np.ndarray
    feedback_map: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape[1] != self.targets.shape[1]:
            raise DimensionError(
                f"inputs have {self.inputs.shape[1]} steps, targets {self.targets.shape[1]}"
            )
        if self.feedback_map is not None:
            self.feedback_map = np.asarray(self.feedback_map, dtype=int)
            if self.feedback_map.shape[0] != self.targets.shape[0]:
                raise DimensionError(
                    f"feedback map covers {self.feedback_map.shape[0]} outputs, "
                    f"task has {self.targets.shape[0]}"
                )
            if np.any(self.feedback_map < 0) or np.any(
                self.feedback_map >= self.inputs.shape[0]
            ):
                raise DataError("feedback map points outside the input rows")

    @property
    def n_u(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_y(self) -> int:
        return self.targets.shape[0]

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesTask":
        return SeriesTask(
            inputs=self.inputs[:, start:stop],
            targets=self.targets[:, start:stop],
            feedback_map=self.feedback_map,
        )


def generative_task(series: np.ndarray) -> SeriesTask:
    """Wire a plain series into a next-step generative task.

    Targets are the series itself; inputs are the series delayed one step
    (the first input repeats the first sample, which the washout absorbs),
    and every output row feeds back into its own input row.
    """
    series = np.atleast_2d(np.asarray(series, dtype=float))
    inputs = np.empty_like(series)
    inputs[:, 0] = series[:, 0]
    inputs[:, 1:] = series[:, :-1]
    return SeriesTask(
        inputs=inputs,
        targets=series,
        feedback_map=np.arange(series.shape[0]),
    )


@dataclass
class SequenceTask:
    """Pre-cut labelled sequences, each (n_u, T_i), plus an optional test set."""

    sequences: list
    labels: np.ndarray
    n_classes: int
    feature_mode: str = "last"  # last | mean
    test_sequences: list = field(default_factory=list)
    test_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.sequences) != self.labels.shape[0]:
            raise DimensionError(
                f"{len(self.sequences)} sequences but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.n_classes
        ):
            raise DataError(f"labels outside [0, {self.n_classes})")
        if self.feature_mode not in ("last", "mean"):
            raise DataError(f"unknown feature_mode {self.feature_mode!r}")


@dataclass
class ErrorReport:
    """Validation/test errors; misclassifications only for classification."""

    nrmse: float
    misclassifications: Optional[int] = None
    predictions: Optional[np.ndarray] = None


def nrmse(pred: np.ndarray, target: np.ndarray) -> float:
    """RMSE normalized by the target's standard deviation, averaged over
    output dimensions.  A constant prediction at the target mean scores 1.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} vs target {target.shape}")
    std = target.std(axis=1)
    if np.any(std == 0.0):
        raise DataError("target has zero variance; normalized error undefined")
    rmse = np.sqrt(np.mean((pred - target) ** 2, axis=1))
    return float(np.mean(rmse / std))


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Plain mean squared error over all outputs and steps (no normalization).

    Usable as a per-split metric where single-step validation folds make
    the normalized error undefined.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))


def free_run(
    weights: rv.ReservoirWeights,
    readout: TrainedReadout,
    state: np.ndarray,
    inputs: np.ndarray,
    feedback_map: np.ndarray,
) -> np.ndarray:
    """Closed-loop run over ``inputs.shape[1]`` steps from ``state``.

    The first column of ``inputs`` is consumed as-is (it predates the
    horizon).  Afterwards a copy of each column has its fed-back rows
    overwritten with the previous prediction, so exogenous input rows, if
    any, still come from the data.  Returns predictions (n_y, horizon).
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    feedback_map = np.asarray(feedback_map, dtype=int)
    horizon = inputs.shape[1]
    preds = np.empty((readout.w_out.shape[0], horizon))
    u = inputs[:, 0].copy()
    x = state
    for t in range(horizon):
        x = rv.update_state(weights, x, u)
        y = readout.w_out @ rv.expanded_state(u, x)
        preds[:, t] = y
        if t + 1 < horizon:
            u = inputs[:, t + 1].copy()
            u[feedback_map] = y
    return preds


def sequence_features(
    weights: rv.ReservoirWeights, sequences: Sequence[np.ndarray], feature_mode: str
) -> np.ndarray:
    """One expanded-state column per sequence: its last or step-mean state.

    Every sequence starts from a zero reservoir state; sequences are
    independent samples, not a continuous signal.
    """
    n_r = weights.params.n_r
    features = np.empty((n_r, len(sequences)))
    for i, seq in enumerate(sequences):
        block, _ = rv.collect_states(weights, rv.zero_state(weights.params), seq)
        if feature_mode == "last":
            features[:, i] = block[:, -1]
        elif feature_mode == "mean":
            features[:, i] = block.mean(axis=1)
        else:
            raise DataError(f"unknown feature_mode {feature_mode!r}")
    return features


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """(n_classes, N) indicator targets for ridge-regression classification."""
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((n_classes, labels.shape[0]))
    out[labels, np.arange(labels.shape[0])] = 1.0
    return out


def classify_features(readout: TrainedReadout, features: np.ndarray) -> np.ndarray:
    """Argmax over output rows; ties break toward the lowest class index."""
    scores = readout.w_out @ features
    return np.argmax(scores, axis=0)


def classify_sequences(
    weights: rv.ReservoirWeights,
    readout: TrainedReadout,
    sequences: Sequence[np.ndarray],
    feature_mode: str = "last",
) -> np.ndarray:
    """Predicted class per sequence."""
    features = sequence_features(weights, sequences, feature_mode)
    return classify_features(readout, features)


def count_misclassified(predicted: np.ndarray, truth: np.ndarray) -> int:
    predicted = np.asarray(predicted, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if predicted.shape != truth.shape:
        raise DimensionError(f"label shapes differ: {predicted.shape} vs {truth.shape}")
    return int(np.sum(predicted != truth))

"""Data ingestion, normalization, and experiment layout presets.

Series files are delimited text with one time step per row; sequence files
hold blank-line-separated blocks, each a ``label <int>`` line followed by
one whitespace-separated feature row per frame.  Numeric output is always
written with 17 significant digits so that values round-trip exactly.

The four benchmark layouts bundle each dataset's split geometry: test and
validation lengths, fold count, minimum-training ratio, and the transient
length that makes the cross-validation folds exactly test-sized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError, DataError


@dataclass(frozen=True)
class ExperimentLayout:
    """Split geometry of one experiment; lengths count time steps."""

    total_steps: int
    test_len: int
    valid_len: int
    k: int
    min_ratio: float
    transient_len: int
    stride: Optional[int] = None


# test/valid length, fold count, and minimum-training ratio per dataset;
# the transient makes (total - test - transient) divide into k test-sized folds.
_LAYOUTS = {
    "labour": ExperimentLayout(
        total_steps=360, test_len=10, valid_len=10, k=34, min_ratio=0.5, transient_len=10
    ),
    "gasoline": ExperimentLayout(
        total_steps=1355, test_len=67, valid_len=67, k=18, min_ratio=0.5, transient_len=82
    ),
    "sunspots": ExperimentLayout(
        total_steps=3177, test_len=200, valid_len=200, k=10, min_ratio=0.5,
        transient_len=977,
    ),
    "electricity": ExperimentLayout(
        total_steps=4033, test_len=200, valid_len=200, k=18, min_ratio=0.5,
        transient_len=233,
    ),
}


def table1_layout(name: str) -> ExperimentLayout:
    """Benchmark layout preset by dataset name."""
    key = name.strip().lower()
    if key not in _LAYOUTS:
        raise ConfigError(
            f"unknown layout preset {name!r}; known: {', '.join(sorted(_LAYOUTS))}"
        )
    return _LAYOUTS[key]


@dataclass
class SeriesDataset:
    """A loaded multichannel series, values shaped (n_u, T)."""

    name: str
    values: np.ndarray
    normalization: str = "none"
    shift: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None


@dataclass
class SequenceDataset:
    sequences: list
    labels: np.ndarray
    n_classes: int


def load_series(
    path,
    delimiter: str = ",",
    header: bool = False,
    columns: Optional[Sequence[int]] = None,
    name: Optional[str] = None,
) -> SeriesDataset:
    """Parse a delimited text file into a series; one row per time step.

    Bad numbers and non-finite values are rejected with the offending
    1-based line number in the message.
    """
    path = Path(path)
    rows = []
    expected: Optional[int] = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            text = line.strip()
            if not text:
                continue
            fields = [f.strip() for f in text.split(delimiter)]
            if columns is not None:
                try:
                    fields = [fields[c] for c in columns]
                except IndexError:
                    raise DataError(
                        f"{path}: line {lineno}: fewer than {max(columns) + 1} columns"
                    ) from None
            try:
                row = [float(f) for f in fields]
            except ValueError:
                raise DataError(f"{path}: line {lineno}: not numeric: {text!r}") from None
            if not all(math.isfinite(v) for v in row):
                raise DataError(f"{path}: line {lineno}: non-finite value")
            if expected is None:
                expected = len(row)
            elif len(row) != expected:
                raise DataError(
                    f"{path}: line {lineno}: {len(row)} columns, expected {expected}"
                )
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=float).T  # (n_u, T)
    return SeriesDataset(name=name or path.stem, values=values)


def write_series(path, dataset: SeriesDataset, delimiter: str = ",") -> None:
    """Write a series back to disk, one step per row, round-trip exact."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in range(dataset.values.shape[1]):
            fh.write(delimiter.join(f"{v:.17g}" for v in dataset.values[:, t]) + "\n")


def normalize_series(
    dataset: SeriesDataset, kind: str = "zscore", fit_stop: Optional[int] = None
) -> SeriesDataset:
    """Normalize with statistics fitted on [0, fit_stop) only.

    Fitting on the pre-test range keeps test values out of the statistics;
    the transform is still applied to the whole series.
    """
    values = dataset.values
    stop = values.shape[1] if fit_stop is None else fit_stop
    if not 0 < stop <= values.shape[1]:
        raise DataError(f"fit range [0, {stop}) outside series of {values.shape[1]} steps")
    fit = values[:, :stop]
    if kind == "none":
        return dataset
    if kind == "zscore":
        shift = fit.mean(axis=1)
        scale = fit.std(axis=1)
    elif kind == "minmax":
        lo, hi = fit.min(axis=1), fit.max(axis=1)
        shift = lo
        scale = hi - lo
    else:
        raise ConfigError(f"unknown normalization {kind!r}")
    if np.any(scale == 0.0):
        raise DataError("cannot normalize a constant channel")
    out = (values - shift[:, None]) / scale[:, None]
    return SeriesDataset(
        name=dataset.name, values=out, normalization=kind, shift=shift, scale=scale
    )


def load_sequences(path) -> SequenceDataset:
    """Parse labelled sequence blocks.

    Blocks are separated by blank lines; each starts with ``label <int>``
    and continues with one whitespace-separated feature row per frame.
    """
    path = Path(path)
    blocks: list[list[str]] = [[]]
    with path.open("r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                if blocks[-1]:
                    blocks.append([])
                continue
            blocks[-1].append(line)
    if blocks and not blocks[-1]:
        blocks.pop()
    if not blocks:
        raise DataError(f"{path}: no sequences")

    sequences = []
    labels = []
    for idx, block in enumerate(blocks):
        head = block[0].split()
        if len(head) != 2 or head[0] != "label":
            raise DataError(f"{path}: block {idx}: expected 'label <int>' header")
        try:
            labels.append(int(head[1]))
        except ValueError:
            raise DataError(f"{path}: block {idx}: bad label {head[1]!r}") from None
        frames = []
        width = None
        for row in block[1:]:
            try:
                values = [float(f) for f in row.split()]
            except ValueError:
                raise DataError(f"{path}: block {idx}: non-numeric frame") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataError(
                    f"{path}: block {idx}: inconsistent feature count "
                    f"({len(values)} vs {width})"
                )
            frames.append(values)
        if not frames:
            raise DataError(f"{path}: block {idx}: sequence has no frames")
        sequences.append(np.asarray(frames, dtype=float).T)  # (n_u, T_i)
    labels = np.asarray(labels, dtype=int)
    if labels.min() < 0:
        raise DataError(f"{path}: negative label")
    return SequenceDataset(
        sequences=sequences, labels=labels, n_classes=int(labels.max()) + 1
    )


def load_vowel_sequences(train_path, test_path) -> SequenceDataset:
    """Adapter for the nine-speaker vowel benchmark's ad-hoc files.

    Each file holds blank-line-separated utterances of 12-channel cepstrum
    frames; speakers are implied by position: 30 training utterances per
    speaker, and a fixed per-speaker count in the test file.
    """
    test_counts = [31, 35, 88, 44, 29, 24, 40, 50, 29]

    def read_blocks(path):
        blocks: list[list[list[float]]] = [[]]
        with Path(path).open("r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line:
                    if blocks[-1]:
                        blocks.append([])
                    continue
                blocks[-1].append([float(f) for f in line.split()])
        if blocks and not blocks[-1]:
            blocks.pop()
        return [np.asarray(b, dtype=float).T for b in blocks]

    train = read_blocks(train_path)
    test = read_blocks(test_path)
    if len(train) != 270:
        raise DataError(f"{train_path}: expected 270 training utterances, got {len(train)}")
    if len(test) != sum(test_counts):
        raise DataError(
            f"{test_path}: expected {sum(test_counts)} test utterances, got {len(test)}"
        )
    train_labels = np.repeat(np.arange(9), 30)
    test_labels = np.concatenate(
        [np.full(c, i, dtype=int) for i, c in enumerate(test_counts)]
    )
    ds = SequenceDataset(sequences=train, labels=train_labels, n_classes=9)
    ds.test_sequences = test  # type: ignore[attr-defined]
    ds.test_labels = test_labels  # type: ignore[attr-defined]
    return ds


def drifting_ar2(
    total_steps: int,
    seed: int = 0,
    pole_radius: float = 0.96,
    angle_start: float = 0.3,
    angle_stop: float = 1.1,
    noise: float = 0.25,
) -> np.ndarray:
    """An order-2 autoregressive series whose oscillation frequency drifts.

    The AR poles sit at ``pole_radius * exp(+-i angle(t))`` with the angle
    sweeping linearly over the series, so the generating process wanders
    in one direction instead of being stationary.  Returns shape (1, T).
    """
    rng = np.random.default_rng(seed)
    angles = np.linspace(angle_start, angle_stop, total_steps)
    x = np.zeros(total_steps)
    eps = rng.standard_normal(total_steps) * noise
    for t in range(total_steps):
        a1 = 2.0 * pole_radius * np.cos(angles[t])
        a2 = -pole_radius * pole_radius
        x[t] = eps[t]
        if t >= 1:
            x[t] += a1 * x[t - 1]
        if t >= 2:
            x[t] += a2 * x[t - 2]
    return x.reshape(1, -1)

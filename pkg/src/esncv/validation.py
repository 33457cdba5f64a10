"""Split planning and the two cross-validation engines.

``plan_splits`` lays out the fold geometry for the supported validation
schemes.  ``run_efficient_cv`` executes a plan by accumulating normal
equations once over the data and deriving every split's training
statistics algebraically (subtraction for CV, prefix merges for AV,
prefix differences for FV), so the reservoir sweeps the data a small
constant number of times no matter how many splits there are.
``run_naive_cv`` retrains every split from scratch; it is the correctness
oracle and the benchmark baseline.

Step ranges are half-open ``[start, stop)`` in global step coordinates,
where step 0 is the first sample of the series (or the first training
sequence for classification tasks).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np

from . import evaluation as ev
from . import reservoir as rv
from .exceptions import DataError, EsncvError, PlanError, SingularSystemError
from .regression import NormalAccumulator, TrainedReadout, ridge_solve

# Accumulation happens in blocks of at most this many steps so that memory
# stays bounded by O(n_r * chunk) during a pass regardless of data length.
_CHUNK = 1024

# A derived accumulator whose diagonal dips below -1e-9 * trace signals
# catastrophic cancellation in the subtraction algebra.
_CANCELLATION_TOL = 1e-9


class SchemeKind(Enum):
    SV = "sv"
    K_FOLD_CV = "kfold-cv"
    K_STEP_CV = "kstep-cv"
    K_FOLD_AV = "kfold-av"
    K_STEP_AV = "kstep-av"
    K_FOLD_FV = "kfold-fv"
    K_STEP_FV = "kstep-fv"

    @classmethod
    def from_string(cls, name: str) -> "SchemeKind":
        key = name.strip().lower().replace("_", "-")
        for kind in cls:
            if kind.value == key:
                return kind
        raise PlanError(
            f"unknown validation scheme {name!r}; expected one of "
            f"{', '.join(k.value for k in cls)}"
        )

    @property
    def is_k_step(self) -> bool:
        return self in (SchemeKind.K_STEP_CV, SchemeKind.K_STEP_AV, SchemeKind.K_STEP_FV)

    @property
    def is_cv(self) -> bool:
        return self in (SchemeKind.K_FOLD_CV, SchemeKind.K_STEP_CV)

    @property
    def is_av(self) -> bool:
        return self in (SchemeKind.K_FOLD_AV, SchemeKind.K_STEP_AV)

    @property
    def is_fv(self) -> bool:
        return self in (SchemeKind.K_FOLD_FV, SchemeKind.K_STEP_FV)


@dataclass(frozen=True, order=True)
class Range:
    start: int
    stop: int

    def __post_init__(self):
        if self.stop < self.start:
            raise PlanError(f"range [{self.start}, {self.stop}) reversed")

    def __len__(self) -> int:
        return self.stop - self.start

    def overlaps(self, other: "Range") -> bool:
        return self.start < other.stop and other.start < self.stop


@dataclass(frozen=True)
class Split:
    train_ranges: tuple[Range, ...]
    valid_range: Range


@dataclass(frozen=True)
class SplitPlan:
    scheme: SchemeKind
    transient: Range
    region: Range  # the training+validation span, after the transient
    splits: tuple[Split, ...]
    fold_len: int
    k: int

    @property
    def trainval_steps(self) -> int:
        """Steps from 0 through the end of the train+validation span."""
        return self.region.stop


def plan_splits(
    scheme: SchemeKind,
    total_steps: int,
    test_len: int,
    transient_len: int = 0,
    k: int = 1,
    min_ratio: float = 0.5,
    valid_len: Optional[int] = None,
    stride: Optional[int] = None,
) -> SplitPlan:
    """Lay out the train/validation geometry of one scheme.

    ``total_steps`` counts the entire series; the final ``test_len`` steps
    are split off and never appear in any range here.  Fold arithmetic
    divides evenly where possible; the last fold absorbs any remainder
    (at most k - 1 extra steps).  For k-step schemes the validation block
    length is ``valid_len`` (defaulting to ``test_len``) and blocks
    advance by ``stride`` (defaulting to the fold length), so they may
    overlap.
    """
    if total_steps < 1:
        raise PlanError(f"total_steps must be >= 1, got {total_steps}")
    if test_len < 0 or transient_len < 0:
        raise PlanError("test_len and transient_len must be non-negative")
    end = total_steps - test_len
    if end <= transient_len:
        raise PlanError(
            f"no data left between transient (ends {transient_len}) and test "
            f"(starts {end})"
        )
    region = Range(transient_len, end)
    transient = Range(0, transient_len)

    if scheme is SchemeKind.SV:
        vl = valid_len if valid_len is not None else test_len
        if vl < 1:
            raise PlanError("SV needs valid_len >= 1 (or a positive test_len default)")
        if vl >= len(region):
            raise PlanError(
                f"validation block of {vl} does not fit the {len(region)}-step "
                f"train+validation span"
            )
        valid = Range(end - vl, end)
        split = Split(train_ranges=(Range(region.start, valid.start),), valid_range=valid)
        return SplitPlan(scheme, transient, region, (split,), fold_len=vl, k=1)

    if k < 1:
        raise PlanError(f"k must be >= 1, got {k}")

    if scheme.is_cv:
        folds_span = region
    else:
        if not 0.0 <= min_ratio < 1.0:
            raise PlanError(f"min_ratio must be in [0, 1), got {min_ratio}")
        min_len = int(min_ratio * end)
        if region.start + min_len >= end:
            raise PlanError(
                f"min_ratio {min_ratio} leaves no folds: minimum training of "
                f"{min_len} steps fills the span past {end}"
            )
        folds_span = Range(region.start + min_len, end)

    fold_len = len(folds_span) // k
    if fold_len < 1:
        raise PlanError(
            f"cannot tile {len(folds_span)} steps into {k} folds: "
            f"k exceeds the available steps"
        )
    starts = [folds_span.start + j * fold_len for j in range(k)]

    if scheme.is_k_step:
        vl = valid_len if valid_len is not None else test_len
        if vl < 1:
            raise PlanError("k-step schemes need valid_len >= 1 (or a positive test_len)")
        if stride is not None:
            if stride < 1:
                raise PlanError(f"stride must be >= 1, got {stride}")
            starts = [folds_span.start + j * stride for j in range(k)]
        blocks = [Range(s, s + vl) for s in starts]
        if blocks[-1].stop > end:
            raise PlanError(
                f"k-step validation blocks of {vl} overrun the data: last block "
                f"[{blocks[-1].start}, {blocks[-1].stop}) exceeds {end}; "
                f"reduce k, valid_len, or the stride"
            )
    else:
        # k-fold: the last fold absorbs the division remainder.
        stops = starts[1:] + [folds_span.stop]
        blocks = [Range(s, e) for s, e in zip(starts, stops)]

    splits = []
    for block in blocks:
        if scheme.is_cv:
            train = _complement_ranges(region, block)
        elif scheme.is_av:
            train = (Range(region.start, block.start),)
        else:  # FV: fixed-length window directly before the block
            train = (Range(block.start - min_len, block.start),)
        splits.append(Split(train_ranges=train, valid_range=block))
    return SplitPlan(scheme, transient, region, tuple(splits), fold_len=fold_len, k=k)


def _complement_ranges(region: Range, block: Range) -> tuple[Range, ...]:
    parts = []
    if block.start > region.start:
        parts.append(Range(region.start, block.start))
    if block.stop < region.stop:
        parts.append(Range(block.stop, region.stop))
    return tuple(parts)


def check_plan(plan: SplitPlan) -> list[str]:
    """Machine-check the plan invariants; returns human-readable violations."""
    problems = []
    region = plan.region
    if plan.transient.stop != region.start:
        problems.append("transient does not end where the train+validation span starts")
    prev: Optional[Range] = None
    for i, split in enumerate(plan.splits):
        v = split.valid_range
        if len(v) < 1:
            problems.append(f"split {i}: empty validation range")
        if v.start < region.start or v.stop > region.stop:
            problems.append(f"split {i}: validation [{v.start},{v.stop}) outside the span")
        if prev is not None:
            if v.start < prev.start:
                problems.append(f"split {i}: validation ranges not ordered left-to-right")
            if not plan.scheme.is_k_step and plan.scheme is not SchemeKind.SV:
                if v.start != prev.stop:
                    problems.append(
                        f"split {i}: k-fold validation ranges not consecutive "
                        f"(previous ends {prev.stop}, this starts {v.start})"
                    )
        for r in split.train_ranges:
            if len(r) < 1:
                problems.append(f"split {i}: empty training range [{r.start},{r.stop})")
            if r.start < region.start or r.stop > region.stop:
                problems.append(f"split {i}: training [{r.start},{r.stop}) outside the span")
            if r.overlaps(v):
                problems.append(
                    f"split {i}: training [{r.start},{r.stop}) overlaps validation "
                    f"[{v.start},{v.stop})"
                )
        for a, b in zip(split.train_ranges, split.train_ranges[1:]):
            if a.overlaps(b):
                problems.append(f"split {i}: training ranges overlap each other")
        prev = v
    return problems


@dataclass
class UpdateCounter:
    """Counts reservoir state updates; the efficiency claims are asserted on it."""

    total: int = 0

    def add(self, n: int) -> None:
        self.total += n


@dataclass
class SplitResult:
    """Per-split outcome: one readout and one validation error per beta."""

    readouts: dict
    valid_errors: dict
    train_count: int
    valid_misclassified: Optional[dict] = None


@dataclass
class CvResult:
    splits: list
    plan: SplitPlan
    betas: tuple
    global_acc: Optional[NormalAccumulator]
    end_state: Optional[np.ndarray]
    reservoir_updates: int


MetricLike = Union[str, Callable[[np.ndarray, np.ndarray], float]]


def _resolve_metric(metric: MetricLike) -> Callable[[np.ndarray, np.ndarray], float]:
    if callable(metric):
        return metric
    if metric == "nrmse":
        return ev.nrmse
    if metric == "mse":
        return ev.mse
    raise EsncvError(f"unknown validation metric {metric!r}")


def run_efficient_cv(
    weights: rv.ReservoirWeights,
    task,
    plan: SplitPlan,
    betas,
    kind: ev.TaskKind,
    variant: str = "fold",
    metric: MetricLike = "nrmse",
    exclude_bias: bool = True,
    on_singular: str = "raise",
    counter: Optional[UpdateCounter] = None,
) -> CvResult:
    """Cross-validate with the single-pass accumulator algebra.

    ``variant`` selects the space trade-off: ``"fold"`` keeps one
    accumulator per fold segment (one data pass), ``"streaming"`` keeps
    O(1) accumulators and spends an extra pass instead.  Per split and per
    beta this produces a trained readout plus its validation error;
    validation reuses stored fold states for output and classification
    tasks and re-runs the fold closed-loop per readout for generative
    tasks, chaining reservoir states across consecutive folds.
    """
    problems = check_plan(plan)
    if problems:
        raise PlanError("invalid split plan: " + "; ".join(problems))
    if variant not in ("fold", "streaming"):
        raise EsncvError(f"unknown space variant {variant!r}")
    betas = _clean_betas(betas)
    metric_fn = _resolve_metric(metric)
    counter = counter if counter is not None else UpdateCounter()
    start_total = counter.total

    if kind is ev.TaskKind.CLASSIFICATION:
        result = _run_sequence_cv(
            weights, task, plan, betas, metric_fn, exclude_bias, on_singular, counter,
            naive=False,
        )
    else:
        result = _run_series_efficient(
            weights, task, plan, betas, kind, variant, metric_fn, exclude_bias,
            on_singular, counter,
        )
    result.reservoir_updates = counter.total - start_total
    return result


def run_naive_cv(
    weights: rv.ReservoirWeights,
    task,
    plan: SplitPlan,
    betas,
    kind: ev.TaskKind,
    metric: MetricLike = "nrmse",
    exclude_bias: bool = True,
    on_singular: str = "raise",
    counter: Optional[UpdateCounter] = None,
) -> CvResult:
    """Retrain every split from scratch; correctness oracle and benchmark.

    Each split replays the reservoir from step 0 (the state trajectory is
    shared with the efficient engine bit for bit) and batch-accumulates
    only its own training ranges.
    """
    problems = check_plan(plan)
    if problems:
        raise PlanError("invalid split plan: " + "; ".join(problems))
    betas = _clean_betas(betas)
    metric_fn = _resolve_metric(metric)
    counter = counter if counter is not None else UpdateCounter()
    start_total = counter.total

    if kind is ev.TaskKind.CLASSIFICATION:
        result = _run_sequence_cv(
            weights, task, plan, betas, metric_fn, exclude_bias, on_singular, counter,
            naive=True,
        )
    else:
        result = _run_series_naive(
            weights, task, plan, betas, kind, metric_fn, exclude_bias, on_singular,
            counter,
        )
    result.reservoir_updates = counter.total - start_total
    return result


def _clean_betas(betas) -> tuple:
    out = []
    for b in betas:
        b = float(b)
        if b < 0.0:
            raise EsncvError(f"regularization must be non-negative, got {b}")
        if b not in out:
            out.append(b)
    if not out:
        raise EsncvError("need at least one regularization value")
    return tuple(out)


def _solve_all_betas(
    acc: NormalAccumulator, betas, exclude_bias: bool, on_singular: str, where: str
) -> dict:
    readouts = {}
    for beta in betas:
        try:
            readouts[beta] = ridge_solve(acc, beta, exclude_bias=exclude_bias)
        except SingularSystemError as exc:
            if on_singular == "raise":
                raise SingularSystemError(
                    f"{where}: {exc}", condition=exc.condition
                ) from exc
            readouts[beta] = None
    return readouts


# ---------------------------------------------------------------------------
# Series tasks: the teacher-forced pass, prefix algebra, and validation.
# ---------------------------------------------------------------------------


def _plan_cuts(plan: SplitPlan) -> list[int]:
    cuts = {plan.region.start, plan.region.stop}
    for split in plan.splits:
        for r in split.train_ranges:
            cuts.add(r.start)
            cuts.add(r.stop)
        cuts.add(split.valid_range.start)
        cuts.add(split.valid_range.stop)
    return sorted(cuts)


def _teacher_pass(weights, task, plan, cuts, counter, keep_segments: bool):
    """One teacher-forced sweep from step 0 through the train+validation span.

    Returns (prefix accumulators at each cut, reservoir state entering each
    cut, per-segment accumulators or None, final state).  The transient
    updates the reservoir but is never accumulated.
    """
    p = weights.params
    n_y = task.n_y
    inputs = task.inputs
    targets = task.targets
    region = plan.region

    x = rv.zero_state(p)
    if region.start > 0:
        x = rv.run_sequence(weights, x, inputs[:, : region.start])
        counter.add(region.start)

    running = NormalAccumulator.zeros(p.n_r, n_y)
    prefixes = {region.start: running.copy()}
    states = {region.start: x.copy()}
    segments = [] if keep_segments else None
    for a, b in zip(cuts, cuts[1:]):
        seg_acc = NormalAccumulator.zeros(p.n_r, n_y) if keep_segments else None
        for c0 in range(a, b, _CHUNK):
            c1 = min(c0 + _CHUNK, b)
            block, x = rv.collect_states(weights, x, inputs[:, c0:c1])
            counter.add(c1 - c0)
            running.add_block(block, targets[:, c0:c1])
            if keep_segments:
                seg_acc.add_block(block, targets[:, c0:c1])
        prefixes[b] = running.copy()
        states[b] = x.copy()
        if keep_segments:
            segments.append((Range(a, b), seg_acc))
    return prefixes, states, segments, x


def _derive_train_acc(split, region, global_acc, prefixes, segments, index) -> NormalAccumulator:
    """Training accumulator for one split, from the prefix algebra.

    CV-style splits (training = everything but the validation block) use
    global minus the block; AV prefixes and FV windows come out of prefix
    differences.  A negative-diagonal guard rebuilds from stored segment
    accumulators when subtraction has cancelled catastrophically.
    """
    valid = split.valid_range
    if split.train_ranges == _complement_ranges(region, valid) and global_acc is not None:
        block_acc = prefixes[valid.stop].subtract(prefixes[valid.start])
        acc = global_acc.subtract(block_acc)
    else:
        acc = None
        for r in split.train_ranges:
            piece = prefixes[r.stop].subtract(prefixes[r.start])
            acc = piece if acc is None else acc.merge(piece)
    expected = sum(len(r) for r in split.train_ranges)
    if acc is None or acc.count != expected:
        got = 0 if acc is None else acc.count
        raise EsncvError(
            f"split {index}: derived accumulator covers {got} steps, "
            f"plan expects {expected} (internal consistency check)"
        )
    trace = float(np.trace(acc.s))
    if trace > 0 and float(np.min(np.diag(acc.s))) < -_CANCELLATION_TOL * trace:
        if segments is not None:
            warnings.warn(
                f"split {index}: cancellation detected in derived accumulator; "
                f"rebuilding from fold-local accumulators",
                RuntimeWarning,
            )
            acc = _rebuild_from_segments(split, segments)
        else:
            warnings.warn(
                f"split {index}: cancellation detected in derived accumulator "
                f"(streaming variant cannot rebuild)",
                RuntimeWarning,
            )
    return acc


def _rebuild_from_segments(split, segments) -> NormalAccumulator:
    acc = None
    for rng, seg_acc in segments:
        if any(r.start <= rng.start and rng.stop <= r.stop for r in split.train_ranges):
            acc = seg_acc.copy() if acc is None else acc.merge(seg_acc)
    if acc is None:
        raise EsncvError("no stored fold accumulators cover the training ranges")
    return acc


def _run_series_efficient(
    weights, task, plan, betas, kind, variant, metric_fn, exclude_bias, on_singular,
    counter,
):
    _require_series(task, plan, kind)
    cuts = _plan_cuts(plan)
    region = plan.region

    if variant == "fold":
        prefixes, states, segments, end_state = _teacher_pass(
            weights, task, plan, cuts, counter, keep_segments=True
        )
        global_acc = prefixes[region.stop]
        train_accs = [
            _derive_train_acc(split, region, global_acc, prefixes, segments, i)
            for i, split in enumerate(plan.splits)
        ]
    else:
        prefixes, states, _, end_state = _teacher_pass(
            weights, task, plan, [region.start, region.stop], counter,
            keep_segments=False,
        )
        global_acc = prefixes[region.stop]
        train_accs, cut_states = _streaming_train_accs(
            weights, task, plan, cuts, states[region.start], global_acc, counter
        )
        states.update(cut_states)

    split_results = []
    for i, (split, acc) in enumerate(zip(plan.splits, train_accs)):
        readouts = _solve_all_betas(acc, betas, exclude_bias, on_singular, f"split {i}")
        split_results.append(
            SplitResult(readouts=readouts, valid_errors={}, train_count=acc.count)
        )

    if kind is ev.TaskKind.OUTPUT:
        _validate_output_chain(
            weights, task, plan, split_results, metric_fn, states, counter
        )
    else:
        _validate_generative(
            weights, task, plan, split_results, metric_fn, states, counter
        )

    return CvResult(
        splits=split_results,
        plan=plan,
        betas=betas,
        global_acc=global_acc,
        end_state=end_state,
        reservoir_updates=0,
    )


def _streaming_train_accs(weights, task, plan, cuts, start_state, global_acc, counter):
    """Second pass for the O(n_r^2)-space variant.

    Re-runs the span once, snapshotting the running prefix only at cut
    points some split still needs, deriving each split's accumulator as
    soon as its last needed cut is reached, then dropping snapshots whose
    reference count hits zero.
    """
    p = weights.params
    region = plan.region
    inputs, targets = task.inputs, task.targets

    needed: dict[int, int] = {}
    ready_at: dict[int, list[int]] = {}
    split_cuts: list[tuple[int, ...]] = []
    for i, split in enumerate(plan.splits):
        if split.train_ranges == _complement_ranges(region, split.valid_range):
            wants = (split.valid_range.start, split.valid_range.stop)
        else:
            wants = tuple(c for r in split.train_ranges for c in (r.start, r.stop))
        split_cuts.append(wants)
        for c in wants:
            needed[c] = needed.get(c, 0) + 1
        ready_at.setdefault(max(wants) if wants else region.start, []).append(i)

    running = NormalAccumulator.zeros(p.n_r, task.n_y)
    live: dict[int, NormalAccumulator] = {}
    out: dict[int, NormalAccumulator] = {}

    def on_cut(pos: int) -> None:
        if needed.get(pos):
            live[pos] = running.copy()
        for i in ready_at.get(pos, []):
            prefixes = {c: live[c] for c in split_cuts[i]}
            out[i] = _derive_train_acc(
                plan.splits[i], region, global_acc, prefixes, None, i
            )
            for c in split_cuts[i]:
                needed[c] -= 1
                if needed[c] == 0:
                    del live[c]

    x = start_state.copy()
    cut_states = {region.start: x.copy()}
    on_cut(region.start)
    for a, b in zip(cuts, cuts[1:]):
        for c0 in range(a, b, _CHUNK):
            c1 = min(c0 + _CHUNK, b)
            block, x = rv.collect_states(weights, x, inputs[:, c0:c1])
            counter.add(c1 - c0)
            running.add_block(block, targets[:, c0:c1])
        cut_states[b] = x.copy()
        on_cut(b)
    return [out[i] for i in range(len(plan.splits))], cut_states


def _require_series(task, plan, kind) -> None:
    if not isinstance(task, ev.SeriesTask):
        raise DataError(f"{kind.value} tasks need a SeriesTask, got {type(task).__name__}")
    if kind is ev.TaskKind.GENERATIVE and task.feedback_map is None:
        raise DataError("generative task needs a feedback map")
    if task.n_steps < plan.region.stop:
        raise DataError(
            f"task has {task.n_steps} steps but the plan spans {plan.region.stop}"
        )


def _validate_output_chain(weights, task, plan, split_results, metric_fn, states, counter):
    """Teacher-forced prediction over the validation blocks.

    The reservoir state is carried from one block to the next; with
    overlapping k-step blocks the shared columns are reused from the
    previous block rather than recomputed, so every span step costs one
    update at most.
    """
    inputs, targets = task.inputs, task.targets
    first = plan.splits[0].valid_range.start
    cursor_pos = first
    cursor_state = states[first].copy()
    prev_block: Optional[np.ndarray] = None
    prev_start = 0

    for split, res in zip(plan.splits, split_results):
        b, c = split.valid_range.start, split.valid_range.stop
        if b > cursor_pos:
            cursor_state = rv.run_sequence(weights, cursor_state, inputs[:, cursor_pos:b])
            counter.add(b - cursor_pos)
            cursor_pos = b
        parts = []
        if b < cursor_pos:
            parts.append(prev_block[:, b - prev_start: cursor_pos - prev_start])
        if c > cursor_pos:
            fresh, cursor_state = rv.collect_states(
                weights, cursor_state, inputs[:, cursor_pos:c]
            )
            counter.add(c - cursor_pos)
            cursor_pos = c
            parts.append(fresh)
        block = parts[0] if len(parts) == 1 else np.hstack(parts)
        prev_block, prev_start = block, b
        target = targets[:, b:c]
        for beta, readout in res.readouts.items():
            if readout is None:
                res.valid_errors[beta] = float("inf")
            else:
                res.valid_errors[beta] = metric_fn(readout.w_out @ block, target)


def _validate_generative(weights, task, plan, split_results, metric_fn, states, counter):
    """Closed-loop validation: each block re-runs per readout in free-run
    mode from the teacher-forced state at its left boundary."""
    inputs, targets = task.inputs, task.targets
    fmap = task.feedback_map
    for split, res in zip(plan.splits, split_results):
        b, c = split.valid_range.start, split.valid_range.stop
        start_state = states[b]
        target = targets[:, b:c]
        for beta, readout in res.readouts.items():
            if readout is None:
                res.valid_errors[beta] = float("inf")
                continue
            preds = ev.free_run(weights, readout, start_state.copy(), inputs[:, b:c], fmap)
            counter.add(c - b)
            res.valid_errors[beta] = metric_fn(preds, target)


def _run_series_naive(
    weights, task, plan, betas, kind, metric_fn, exclude_bias, on_singular, counter
):
    _require_series(task, plan, kind)
    p = weights.params
    inputs, targets = task.inputs, task.targets
    region = plan.region

    split_results = []
    end_state = None
    for i, split in enumerate(plan.splits):
        v = split.valid_range
        last = max([r.stop for r in split.train_ranges] + [v.stop])
        cuts = sorted(
            {region.start, last, v.start, v.stop}
            | {c for r in split.train_ranges for c in (r.start, r.stop)}
        )
        x = rv.zero_state(p)
        if region.start > 0:
            x = rv.run_sequence(weights, x, inputs[:, : region.start])
            counter.add(region.start)
        acc = NormalAccumulator.zeros(p.n_r, task.n_y)
        valid_block = None
        state_at_valid = None
        for a, b in zip(cuts, cuts[1:]):
            in_train = any(r.start <= a and b <= r.stop for r in split.train_ranges)
            if a == v.start:
                state_at_valid = x.copy()
            collected = []
            for c0 in range(a, b, _CHUNK):
                c1 = min(c0 + _CHUNK, b)
                block, x = rv.collect_states(weights, x, inputs[:, c0:c1])
                counter.add(c1 - c0)
                if in_train:
                    acc.add_block(block, targets[:, c0:c1])
                elif a == v.start:
                    collected.append(block)
            if a == v.start:
                valid_block = collected[0] if len(collected) == 1 else np.hstack(collected)
        readouts = _solve_all_betas(acc, betas, exclude_bias, on_singular, f"split {i}")
        res = SplitResult(readouts=readouts, valid_errors={}, train_count=acc.count)
        target = targets[:, v.start: v.stop]
        for beta, readout in readouts.items():
            if readout is None:
                res.valid_errors[beta] = float("inf")
            elif kind is ev.TaskKind.OUTPUT:
                res.valid_errors[beta] = metric_fn(readout.w_out @ valid_block, target)
            else:
                preds = ev.free_run(
                    weights, readout, state_at_valid.copy(),
                    inputs[:, v.start: v.stop], task.feedback_map,
                )
                counter.add(len(v))
                res.valid_errors[beta] = metric_fn(preds, target)
        split_results.append(res)
        if last == region.stop:
            end_state = x.copy()

    return CvResult(
        splits=split_results,
        plan=plan,
        betas=betas,
        global_acc=None,
        end_state=end_state,
        reservoir_updates=0,
    )


# ---------------------------------------------------------------------------
# Classification tasks: one feature column per sequence, same algebra.
# ---------------------------------------------------------------------------


def _run_sequence_cv(
    weights, task, plan, betas, metric_fn, exclude_bias, on_singular, counter,
    naive: bool,
):
    if not isinstance(task, ev.SequenceTask):
        raise DataError(f"classification needs a SequenceTask, got {type(task).__name__}")
    if plan.region.stop > len(task.sequences):
        raise DataError(
            f"plan spans {plan.region.stop} sequences, task has {len(task.sequences)}"
        )
    seq_steps = sum(s.shape[1] for s in task.sequences[: plan.region.stop])

    def compute_features():
        counter.add(seq_steps)
        return ev.sequence_features(
            weights, task.sequences[: plan.region.stop], task.feature_mode
        )

    targets = ev.one_hot(task.labels[: plan.region.stop], task.n_classes)
    region = plan.region

    if naive:
        split_results = []
        for i, split in enumerate(plan.splits):
            feats = compute_features()  # a naive run recomputes states per split
            acc = NormalAccumulator.zeros(weights.params.n_r, task.n_classes)
            for r in split.train_ranges:
                acc.add_block(feats[:, r.start: r.stop], targets[:, r.start: r.stop])
            readouts = _solve_all_betas(acc, betas, exclude_bias, on_singular, f"split {i}")
            split_results.append(_score_sequence_split(
                readouts, feats, targets, task, split, metric_fn, acc.count
            ))
        global_acc = None
    else:
        features = compute_features()
        prefixes = {region.start: NormalAccumulator.zeros(weights.params.n_r, task.n_classes)}
        running = prefixes[region.start].copy()
        segments = []
        cuts = _plan_cuts(plan)
        for a, b in zip(cuts, cuts[1:]):
            seg = NormalAccumulator.zeros(weights.params.n_r, task.n_classes)
            seg.add_block(features[:, a:b], targets[:, a:b])
            running = running.merge(seg)
            prefixes[b] = running
            segments.append((Range(a, b), seg))
        global_acc = prefixes[region.stop]
        split_results = []
        for i, split in enumerate(plan.splits):
            acc = _derive_train_acc(split, region, global_acc, prefixes, segments, i)
            readouts = _solve_all_betas(acc, betas, exclude_bias, on_singular, f"split {i}")
            split_results.append(_score_sequence_split(
                readouts, features, targets, task, split, metric_fn, acc.count
            ))

    return CvResult(
        splits=split_results,
        plan=plan,
        betas=betas,
        global_acc=global_acc,
        end_state=None,
        reservoir_updates=0,
    )


def _score_sequence_split(readouts, features, targets, task, split, metric_fn, count):
    v = split.valid_range
    block = features[:, v.start: v.stop]
    target = targets[:, v.start: v.stop]
    truth = task.labels[v.start: v.stop]
    errors = {}
    miss = {}
    for beta, readout in readouts.items():
        if readout is None:
            errors[beta] = float("inf")
            miss[beta] = len(truth)
            continue
        scores = readout.w_out @ block
        errors[beta] = metric_fn(scores, target)
        miss[beta] = ev.count_misclassified(np.argmax(scores, axis=0), truth)
    return SplitResult(
        readouts=readouts, valid_errors=errors, train_count=count,
        valid_misclassified=miss,
    )

"""Hyper-parameter grid search and final-model production.

The outer loops walk reservoir candidates (seed, leaking rate, spectral
radius); each candidate builds its reservoir once and runs the efficient
cross-validation engine once.  The regularization grid sits innermost: it
is evaluated on the already-derived per-split accumulators, so growing it
costs linear solves only, never data passes.  The final model comes from
one of four strategies: keep the validated model (SV only), retrain on
everything, average the per-split readouts, or take the best split.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import evaluation as ev
from . import reservoir as rv
from . import validation as va
from .datasets import ExperimentLayout
from .exceptions import ConfigError, DataError, NumericalError
from .regression import TrainedReadout, ridge_solve


@dataclass(frozen=True)
class SearchSpace:
    """The hyper-parameter grid; lists are iterated in ascending order."""

    leaking_rates: tuple
    spectral_radii: tuple
    betas: tuple
    n_x: int
    seeds: tuple = (0,)
    input_scaling: float = 1.0
    density: Optional[float] = None  # None: 10 connections per neuron

    def __post_init__(self):
        for name in ("leaking_rates", "spectral_radii", "betas", "seeds"):
            values = getattr(self, name)
            if not values:
                raise ConfigError(f"search space field {name} is empty")
            object.__setattr__(self, name, tuple(sorted(set(values))))
        if self.n_x < 1:
            raise ConfigError(f"n_x must be >= 1, got {self.n_x}")

    def resolved_density(self) -> float:
        if self.density is not None:
            return self.density
        return min(1.0, 10.0 / self.n_x)


class FinalizeMode(Enum):
    AS_IS = "as-is"
    RETRAIN = "retrain"
    AVERAGE = "average"
    BEST = "best"

    @classmethod
    def from_string(cls, name: str) -> "FinalizeMode":
        key = name.strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ConfigError(
            f"unknown finalize mode {name!r}; expected one of "
            f"{', '.join(m.value for m in cls)}"
        )


@dataclass
class Candidate:
    seed: int
    leaking_rate: float
    spectral_radius: float


@dataclass
class CandidateResult:
    candidate: Candidate
    score: float
    global_beta: float
    per_split_betas: list
    per_split_errors: list
    failure: Optional[str] = None


@dataclass
class SearchResult:
    candidates: list
    best_index: int
    best_cv: va.CvResult
    best_weights: rv.ReservoirWeights
    plan: va.SplitPlan
    scheme: va.SchemeKind
    kind: ev.TaskKind
    ireg: bool
    exclude_bias: bool
    reservoir_updates: int
    final: Optional[TrainedReadout] = None
    test: Optional[ev.ErrorReport] = None

    @property
    def best(self) -> CandidateResult:
        return self.candidates[self.best_index]

    @property
    def best_validation_error(self) -> float:
        return self.best.score


def build_plan(
    scheme: va.SchemeKind, task, layout: ExperimentLayout, kind: ev.TaskKind
) -> va.SplitPlan:
    """Translate a layout into a split plan for the given task.

    Classification plans index the training sequences (the test set is a
    separate pool); series plans index time steps.
    """
    if kind is ev.TaskKind.CLASSIFICATION:
        total = len(task.sequences)
        return va.plan_splits(
            scheme, total_steps=total, test_len=0, transient_len=0, k=layout.k,
            min_ratio=layout.min_ratio,
            valid_len=layout.valid_len if layout.valid_len else None,
            stride=layout.stride,
        )
    total = task.n_steps
    if layout.total_steps and layout.total_steps != total:
        raise ConfigError(
            f"layout expects {layout.total_steps} steps but the task has {total}"
        )
    return va.plan_splits(
        scheme, total_steps=total, test_len=layout.test_len,
        transient_len=layout.transient_len, k=layout.k, min_ratio=layout.min_ratio,
        valid_len=layout.valid_len if layout.valid_len else None, stride=layout.stride,
    )


def grid_search(
    space: SearchSpace,
    scheme: va.SchemeKind,
    task,
    layout: ExperimentLayout,
    kind: ev.TaskKind,
    ireg: bool = False,
    metric: va.MetricLike = "nrmse",
    variant: str = "fold",
    exclude_bias: bool = True,
    aggregate: str = "mean",
    threads: int = 1,
    counter: Optional[va.UpdateCounter] = None,
) -> SearchResult:
    """Search (seed, leaking rate, spectral radius) x regularization grid.

    A candidate's score is its validation error aggregated over splits, at
    the best shared regularization, or at each split's own best when
    ``ireg`` is set.  Ties go to the earlier candidate in iteration order.
    """
    if aggregate not in ("mean", "median"):
        raise ConfigError(f"aggregate must be 'mean' or 'median', got {aggregate!r}")
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    counter = counter if counter is not None else va.UpdateCounter()
    start_updates = counter.total

    plan = build_plan(scheme, task, layout, kind)
    if kind is ev.TaskKind.CLASSIFICATION:
        engine_task = task
        n_u = task.sequences[0].shape[0]
        n_y = task.n_classes
    else:
        engine_task = task.slice(0, task.n_steps - layout.test_len)
        n_u = task.n_u
        n_y = task.n_y

    candidates = [
        Candidate(seed=s, leaking_rate=a, spectral_radius=r)
        for s in space.seeds
        for a in space.leaking_rates
        for r in space.spectral_radii
    ]

    def run_one(cand: Candidate):
        local = va.UpdateCounter()
        try:
            params = rv.ReservoirParams(
                n_x=space.n_x, n_u=n_u, n_y=n_y,
                leaking_rate=cand.leaking_rate,
                spectral_radius=cand.spectral_radius,
                input_scaling=space.input_scaling,
                density=space.resolved_density(),
                seed=cand.seed,
            )
            weights = rv.generate_reservoir(params)
            cv = va.run_efficient_cv(
                weights, engine_task, plan, space.betas, kind,
                variant=variant, metric=metric, exclude_bias=exclude_bias,
                on_singular="mask", counter=local,
            )
            return cand, weights, cv, local.total, None
        except NumericalError as exc:
            return cand, None, None, local.total, str(exc)

    if threads == 1:
        raw = [run_one(c) for c in candidates]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(run_one, candidates))

    agg = np.mean if aggregate == "mean" else np.median
    results: list[CandidateResult] = []
    kept = []
    for cand, weights, cv, used, failure in raw:
        counter.add(used)
        if failure is not None:
            results.append(CandidateResult(
                candidate=cand, score=float("inf"), global_beta=float("nan"),
                per_split_betas=[], per_split_errors=[], failure=failure,
            ))
            kept.append((None, None))
            continue
        errors = [
            {b: _finite_or_inf(s.valid_errors[b]) for b in cv.betas} for s in cv.splits
        ]
        per_split_betas = [min(e, key=lambda b: (e[b], cv.betas.index(b))) for e in errors]
        beta_scores = {b: float(agg([e[b] for e in errors])) for b in cv.betas}
        global_beta = min(beta_scores, key=lambda b: (beta_scores[b], cv.betas.index(b)))
        if ireg:
            score = float(agg([e[bb] for e, bb in zip(errors, per_split_betas)]))
        else:
            score = beta_scores[global_beta]
        results.append(CandidateResult(
            candidate=cand, score=score, global_beta=global_beta,
            per_split_betas=per_split_betas, per_split_errors=errors,
        ))
        kept.append((weights, cv))

    scores = [r.score for r in results]
    best = int(np.argmin(scores))
    if not np.isfinite(scores[best]):
        detail = "; ".join(
            f"seed={r.candidate.seed} a={r.candidate.leaking_rate} "
            f"rho={r.candidate.spectral_radius}: {r.failure or 'no finite validation error'}"
            for r in results
        )
        raise NumericalError(f"every grid candidate failed: {detail}")
    best_weights, best_cv = kept[best]
    return SearchResult(
        candidates=results,
        best_index=best,
        best_cv=best_cv,
        best_weights=best_weights,
        plan=plan,
        scheme=scheme,
        kind=kind,
        ireg=ireg,
        exclude_bias=exclude_bias,
        reservoir_updates=counter.total - start_updates,
    )


def _finite_or_inf(value: float) -> float:
    return value if np.isfinite(value) else float("inf")


def finalize(mode: FinalizeMode, result: SearchResult) -> TrainedReadout:
    """Produce the deployable readout from the best candidate's splits."""
    best = result.best
    cv = result.best_cv
    splits = cv.splits
    if result.ireg:
        betas = best.per_split_betas
    else:
        betas = [best.global_beta] * len(splits)

    if mode is FinalizeMode.AS_IS:
        if result.scheme is not va.SchemeKind.SV:
            raise ConfigError("as-is finalization only applies to the static split (SV)")
        return _require(splits[0].readouts[betas[0]], 0, betas[0])

    if mode is FinalizeMode.RETRAIN:
        if cv.global_acc is None:
            raise ConfigError("retraining needs the engine's global accumulator")
        beta = float(np.mean(betas)) if result.ireg else best.global_beta
        return ridge_solve(cv.global_acc, beta, exclude_bias=result.exclude_bias)

    if mode is FinalizeMode.AVERAGE:
        if result.scheme.is_av:
            warnings.warn(
                "averaging readouts under accumulative validation mixes models "
                "trained on different amounts of data",
                RuntimeWarning,
            )
        stack = [
            _require(s.readouts[b], i, b).w_out
            for i, (s, b) in enumerate(zip(splits, betas))
        ]
        mean_w = np.mean(stack, axis=0)
        counts = [s.train_count for s in splits]
        return TrainedReadout(
            w_out=mean_w, beta=float(np.mean(betas)),
            train_count=int(round(float(np.mean(counts)))),
        )

    if mode is FinalizeMode.BEST:
        errs = [s.valid_errors[b] for s, b in zip(splits, betas)]
        idx = int(np.argmin(errs))
        return _require(splits[idx].readouts[betas[idx]], idx, betas[idx])

    raise ConfigError(f"unhandled finalize mode {mode}")


def _require(readout: Optional[TrainedReadout], split: int, beta: float) -> TrainedReadout:
    if readout is None:
        raise NumericalError(
            f"split {split} has no readout at beta={beta} (singular solve)"
        )
    return readout


def evaluate_test(
    readout: TrainedReadout,
    weights: rv.ReservoirWeights,
    task,
    test_len: int,
    kind: ev.TaskKind,
    start_state: Optional[np.ndarray] = None,
    metric: va.MetricLike = "nrmse",
    counter: Optional[va.UpdateCounter] = None,
) -> ev.ErrorReport:
    """Score the final readout on the held-out end of the data.

    Series tasks run from the chained end-of-training state (recomputed by
    replaying the pre-test span when not supplied); generative tasks free-
    run over the whole horizon.  Classification scores the test sequence
    pool.  Nothing here feeds back into training or selection.
    """
    counter = counter if counter is not None else va.UpdateCounter()
    metric_fn = va._resolve_metric(metric)

    if kind is ev.TaskKind.CLASSIFICATION:
        if not task.test_sequences:
            raise DataError("task has no test sequences")
        if task.test_labels is None:
            raise DataError("task has no test labels")
        feats = ev.sequence_features(weights, task.test_sequences, task.feature_mode)
        counter.add(sum(s.shape[1] for s in task.test_sequences))
        scores = readout.w_out @ feats
        target = ev.one_hot(task.test_labels, task.n_classes)
        labels = np.argmax(scores, axis=0)
        return ev.ErrorReport(
            nrmse=metric_fn(scores, target),
            misclassifications=ev.count_misclassified(labels, task.test_labels),
            predictions=scores,
        )

    if test_len < 1:
        raise ConfigError(f"test range must have at least 1 step, got {test_len}")
    total = task.n_steps
    if test_len >= total:
        raise ConfigError(f"test range of {test_len} swallows the whole {total}-step task")
    start = total - test_len
    if start_state is None:
        state = rv.run_sequence(
            weights, rv.zero_state(weights.params), task.inputs[:, :start]
        )
        counter.add(start)
    else:
        state = start_state.copy()

    if kind is ev.TaskKind.GENERATIVE:
        if task.feedback_map is None:
            raise DataError("generative task needs a feedback map")
        preds = ev.free_run(weights, readout, state, task.inputs[:, start:], task.feedback_map)
    else:
        block, _ = rv.collect_states(weights, state, task.inputs[:, start:])
        preds = readout.w_out @ block
    counter.add(test_len)
    return ev.ErrorReport(
        nrmse=metric_fn(preds, task.targets[:, start:]), predictions=preds
    )


@dataclass
class PipelineOutcome:
    """One scheme x finalize-mode outcome of the full pipeline."""

    scheme: va.SchemeKind
    mode: FinalizeMode
    ireg: bool
    search: SearchResult
    readout: TrainedReadout
    test: ev.ErrorReport


def run_pipeline(
    space: SearchSpace,
    scheme: va.SchemeKind,
    task,
    layout: ExperimentLayout,
    kind: ev.TaskKind,
    modes,
    ireg: bool = False,
    metric: va.MetricLike = "nrmse",
    variant: str = "fold",
    aggregate: str = "mean",
    threads: int = 1,
    counter: Optional[va.UpdateCounter] = None,
) -> list:
    """Search once, then finalize and test once per requested mode."""
    counter = counter if counter is not None else va.UpdateCounter()
    result = grid_search(
        space, scheme, task, layout, kind, ireg=ireg, metric=metric, variant=variant,
        aggregate=aggregate, threads=threads, counter=counter,
    )
    outcomes = []
    for mode in modes:
        readout = finalize(mode, result)
        report = evaluate_test(
            readout, result.best_weights, task, layout.test_len, kind,
            start_state=result.best_cv.end_state, counter=counter,
        )
        outcomes.append(PipelineOutcome(
            scheme=scheme, mode=mode, ireg=ireg, search=result,
            readout=readout, test=report,
        ))
        result.final = readout
        result.test = report
    return outcomes

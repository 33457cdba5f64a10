"""Command-line front end.

Three subcommands::

    esncv run <config.toml>       full experiment from a config file
    esncv bench --steps T ...     naive-vs-efficient engine benchmark
    esncv validate-plan <config>  print and check the split geometry

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
Report files contain only deterministic content; wall-clock timings and
timestamps go to a sidecar ``meta.json`` (the benchmark's timing columns
are the measurement itself and live in ``bench.csv``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from . import datasets as ds
from . import evaluation as ev
from . import reservoir as rv
from . import search as se
from . import validation as va
from .exceptions import ConfigError, DataError, EsncvError, NumericalError

OUTPUT_DIR_ENV = "ESNCV_OUTPUT_DIR"

_SCHEMA = {
    "data": {"path", "kind", "delimiter", "header", "columns", "normalization",
             "test_path"},
    "task": {"kind", "input_columns", "target_columns", "feature_mode"},
    "layout": {"preset", "test_len", "valid_len", "k", "min_ratio", "transient_len",
               "stride"},
    "validation": {"schemes", "variant", "metric"},
    "search": {"leaking_rates", "spectral_radii", "betas", "n_x", "input_scaling",
               "density"},
    "finalize": {"modes", "ireg"},
    "experiment": {"seeds", "output_dir", "threads", "aggregate"},
}


@dataclass
class RunConfig:
    data_path: Path
    data_kind: str
    task_kind: ev.TaskKind
    schemes: list
    modes: list
    ireg: bool
    space: se.SearchSpace
    layout_preset: Optional[str]
    layout_fields: dict
    seeds: list
    output_dir: Path
    threads: int
    variant: str
    metric: str
    aggregate: str
    delimiter: str = ","
    header: bool = False
    columns: Optional[list] = None
    normalization: str = "zscore"
    test_path: Optional[Path] = None
    input_columns: list = field(default_factory=list)
    target_columns: list = field(default_factory=list)
    feature_mode: str = "last"


def _check_keys(raw: dict, path: Path) -> None:
    for section, body in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: section [{section}] must be a table")
        for key in body:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in section [{section}]")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _check_keys(raw, path)

    data = raw.get("data", {})
    task = raw.get("task", {})
    layout = raw.get("layout", {})
    validation = raw.get("validation", {})
    search_sec = raw.get("search", {})
    final = raw.get("finalize", {})
    exp = raw.get("experiment", {})

    for required, section in (("path", data), ("kind", task)):
        if required not in section:
            name = "data" if section is data else "task"
            raise ConfigError(f"{path}: missing required key '{required}' in [{name}]")

    try:
        task_kind = ev.TaskKind(str(task["kind"]).lower())
    except ValueError:
        raise ConfigError(
            f"{path}: unknown task kind {task['kind']!r}; expected "
            f"generative, output, or classification"
        ) from None

    schemes = [va.SchemeKind.from_string(s) for s in validation.get("schemes", ["sv"])]
    modes = [se.FinalizeMode.from_string(m) for m in final.get("modes", ["retrain"])]

    if "n_x" not in search_sec:
        raise ConfigError(f"{path}: missing required key 'n_x' in [search]")
    density = search_sec.get("density", 0)
    space = se.SearchSpace(
        leaking_rates=tuple(search_sec.get("leaking_rates", [0.3])),
        spectral_radii=tuple(search_sec.get("spectral_radii", [0.9])),
        betas=tuple(search_sec.get("betas", [1e-6])),
        n_x=int(search_sec["n_x"]),
        seeds=(0,),  # replaced per experiment seed
        input_scaling=float(search_sec.get("input_scaling", 1.0)),
        density=float(density) if density else None,
    )

    preset = layout.get("preset")
    if preset is not None:
        extras = set(layout) - {"preset", "stride"}
        if extras:
            raise ConfigError(
                f"{path}: layout preset conflicts with explicit keys {sorted(extras)}"
            )

    output_dir = Path(os.environ.get(OUTPUT_DIR_ENV) or exp.get("output_dir", "esncv-out"))
    variant = validation.get("variant", "fold")
    if variant not in ("fold", "streaming"):
        raise ConfigError(f"{path}: unknown space variant {variant!r}")

    return RunConfig(
        data_path=Path(data["path"]),
        data_kind=str(data.get("kind", "series")),
        task_kind=task_kind,
        schemes=schemes,
        modes=modes,
        ireg=bool(final.get("ireg", False)),
        space=space,
        layout_preset=str(preset) if preset is not None else None,
        layout_fields={k: layout[k] for k in layout if k != "preset"},
        seeds=[int(s) for s in exp.get("seeds", [0])],
        output_dir=output_dir,
        threads=int(exp.get("threads", 1)),
        variant=variant,
        metric=str(validation.get("metric", "nrmse")),
        aggregate=str(exp.get("aggregate", "mean")),
        delimiter=str(data.get("delimiter", ",")),
        header=bool(data.get("header", False)),
        columns=[int(c) for c in data["columns"]] if "columns" in data else None,
        normalization=str(data.get("normalization", "zscore")),
        test_path=Path(data["test_path"]) if data.get("test_path") else None,
        input_columns=[int(c) for c in task.get("input_columns", [])],
        target_columns=[int(c) for c in task.get("target_columns", [])],
        feature_mode=str(task.get("feature_mode", "last")),
    )


def _resolve_layout(config: RunConfig, total_steps: int) -> ds.ExperimentLayout:
    if config.layout_preset is not None:
        preset = ds.table1_layout(config.layout_preset)
        stride = config.layout_fields.get("stride")
        if stride:
            preset = ds.ExperimentLayout(
                total_steps=preset.total_steps, test_len=preset.test_len,
                valid_len=preset.valid_len, k=preset.k, min_ratio=preset.min_ratio,
                transient_len=preset.transient_len, stride=int(stride),
            )
        return preset
    f = config.layout_fields
    if "test_len" not in f and config.task_kind is not ev.TaskKind.CLASSIFICATION:
        raise ConfigError("layout needs either a preset or an explicit test_len")
    stride = f.get("stride", 0)
    return ds.ExperimentLayout(
        total_steps=total_steps,
        test_len=int(f.get("test_len", 0)),
        valid_len=int(f.get("valid_len", 0)),
        k=int(f.get("k", 1)),
        min_ratio=float(f.get("min_ratio", 0.5)),
        transient_len=int(f.get("transient_len", 0)),
        stride=int(stride) if stride else None,
    )


def _build_task(config: RunConfig, layout: ds.ExperimentLayout):
    if config.task_kind is ev.TaskKind.CLASSIFICATION:
        if config.data_kind == "vowels":
            if config.test_path is None:
                raise ConfigError("vowel data needs data.test_path")
            pool = ds.load_vowel_sequences(config.data_path, config.test_path)
            return ev.SequenceTask(
                sequences=pool.sequences, labels=pool.labels, n_classes=pool.n_classes,
                feature_mode=config.feature_mode,
                test_sequences=pool.test_sequences, test_labels=pool.test_labels,
            )
        train = ds.load_sequences(config.data_path)
        test_seqs, test_labels = [], None
        if config.test_path is not None:
            test = ds.load_sequences(config.test_path)
            test_seqs, test_labels = test.sequences, test.labels
        n_classes = max(
            train.n_classes,
            int(test_labels.max()) + 1 if test_labels is not None and test_labels.size else 0,
        )
        return ev.SequenceTask(
            sequences=train.sequences, labels=train.labels, n_classes=n_classes,
            feature_mode=config.feature_mode,
            test_sequences=test_seqs, test_labels=test_labels,
        )

    series = ds.load_series(
        config.data_path, delimiter=config.delimiter, header=config.header,
        columns=config.columns,
    )
    fit_stop = series.values.shape[1] - layout.test_len
    if config.normalization != "none":
        series = ds.normalize_series(series, config.normalization, fit_stop=fit_stop)
    values = series.values
    n_rows = values.shape[0]
    targets = config.target_columns or list(range(n_rows))

    if config.task_kind is ev.TaskKind.GENERATIVE:
        return ev.generative_task(values[targets, :])
    inputs = config.input_columns
    if not inputs:
        raise ConfigError("output tasks need task.input_columns")
    return ev.SeriesTask(inputs=values[inputs, :], targets=values[targets, :])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seeds = [args.seed]
    if args.threads is not None:
        config.threads = args.threads
    if args.output_dir is not None:
        config.output_dir = Path(args.output_dir)

    probe_layout = _resolve_layout(config, 0)
    task = _build_task(config, probe_layout)
    total = (
        len(task.sequences) if config.task_kind is ev.TaskKind.CLASSIFICATION
        else task.n_steps
    )
    layout = _resolve_layout(config, total)

    rows = []
    timings = []
    for scheme in config.schemes:
        per_mode: dict = {mode: [] for mode in config.modes}
        valid_errors = []
        updates = []
        t0 = time.perf_counter()
        for seed in config.seeds:
            space = se.SearchSpace(
                leaking_rates=config.space.leaking_rates,
                spectral_radii=config.space.spectral_radii,
                betas=config.space.betas,
                n_x=config.space.n_x,
                seeds=(seed,),
                input_scaling=config.space.input_scaling,
                density=config.space.density,
            )
            counter = va.UpdateCounter()
            outcomes = se.run_pipeline(
                space, scheme, task, layout, config.task_kind,
                modes=config.modes, ireg=config.ireg, metric=config.metric,
                variant=config.variant, aggregate=config.aggregate,
                threads=config.threads, counter=counter,
            )
            valid_errors.append(outcomes[0].search.best_validation_error)
            updates.append(counter.total)
            for outcome in outcomes:
                per_mode[outcome.mode].append(outcome.test)
        elapsed = time.perf_counter() - t0
        t_trainval = (
            outcomes[0].search.plan.trainval_steps if outcomes else 0
        )
        for mode in config.modes:
            reports = per_mode[mode]
            tests = [r.nrmse for r in reports]
            misses = [r.misclassifications for r in reports]
            has_miss = all(m is not None for m in misses)
            rows.append({
                "scheme": scheme.value,
                "finalize": mode.value,
                "ireg": str(config.ireg).lower(),
                "seeds": len(config.seeds),
                "valid_error": float(np.mean(valid_errors)),
                "valid_error_std": float(np.std(valid_errors)),
                "test_error": float(np.mean(tests)),
                "test_error_std": float(np.std(tests)),
                "misclassifications": float(np.mean(misses)) if has_miss else None,
                "reservoir_updates": float(np.mean(updates)),
                "passes_over_trainval": float(np.mean(updates)) / t_trainval
                if t_trainval else None,
            })
            timings.append({
                "scheme": scheme.value, "finalize": mode.value,
                "wall_seconds_all_modes": elapsed,
            })

    config.output_dir.mkdir(parents=True, exist_ok=True)
    header = list(rows[0].keys())
    csv_path = config.output_dir / "report.csv"
    with csv_path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[h]) for h in header) + "\n")
    _write_markdown(config.output_dir / "report.md", header, rows)
    meta = {
        "version": __version__,
        "config": str(args.config),
        "created_unix": time.time(),
        "timings": timings,
    }
    (config.output_dir / "meta.json").write_text(json.dumps(meta, indent=2))
    print(f"wrote {csv_path}")
    return 0


def _write_markdown(path: Path, header, rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write("| " + " | ".join(header) + " |\n")
        fh.write("|" + "|".join("---" for _ in header) + "|\n")
        for row in rows:
            fh.write("| " + " | ".join(_fmt(row[h]) for h in header) + " |\n")


def cmd_bench(args) -> int:
    k_list = [int(k) for k in args.folds.split(",") if k]
    if not k_list:
        raise ConfigError("need at least one fold count in --folds")
    total = args.steps
    transient = min(100, total // 10)
    rng = np.random.default_rng(args.seed if args.seed is not None else 42)
    u = rng.standard_normal((1, total))
    targets = np.vstack([np.roll(u[0], 1)])  # remember the previous input
    targets[:, 0] = 0.0
    task = ev.SeriesTask(inputs=u, targets=targets)

    params = rv.ReservoirParams(
        n_x=args.size, n_u=1, n_y=1, leaking_rate=0.5, spectral_radius=0.9,
        input_scaling=0.5, density=min(1.0, 10.0 / args.size),
        seed=args.seed if args.seed is not None else 42,
    )
    weights = rv.generate_reservoir(params)
    betas = (1e-6,)

    out_rows = []
    for k in k_list:
        plan = va.plan_splits(
            va.SchemeKind.K_FOLD_CV, total_steps=total, test_len=0,
            transient_len=transient, k=k,
        )
        eff_times, naive_times = [], []
        eff_updates = naive_updates = 0
        diff = 0.0
        for _ in range(args.reps):
            c1 = va.UpdateCounter()
            t0 = time.perf_counter()
            eff = va.run_efficient_cv(
                weights, task, plan, betas, ev.TaskKind.OUTPUT, counter=c1
            )
            eff_times.append(time.perf_counter() - t0)
            c2 = va.UpdateCounter()
            t0 = time.perf_counter()
            naive = va.run_naive_cv(
                weights, task, plan, betas, ev.TaskKind.OUTPUT, counter=c2
            )
            naive_times.append(time.perf_counter() - t0)
            eff_updates, naive_updates = c1.total, c2.total
            diff = max(
                diff,
                max(
                    _rel_diff(e.readouts[betas[0]].w_out, n.readouts[betas[0]].w_out)
                    for e, n in zip(eff.splits, naive.splits)
                ),
            )
        out_rows.append({
            "k": k,
            "efficient_seconds": float(np.median(eff_times)),
            "naive_seconds": float(np.median(naive_times)),
            "efficient_updates": eff_updates,
            "naive_updates": naive_updates,
            "max_w_rel_diff": diff,
        })
        print(
            f"k={k:4d}  efficient {np.median(eff_times):8.3f}s "
            f"({eff_updates} updates)   naive {np.median(naive_times):8.3f}s "
            f"({naive_updates} updates)   max dW {diff:.2e}"
        )

    out_dir = Path(
        args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "."
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "bench.csv"
    header = list(out_rows[0].keys())
    with path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in out_rows:
            fh.write(",".join(_fmt(row[h]) for h in header) + "\n")
    print(f"wrote {path}")
    return 0


def _rel_diff(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(b)
    if denom == 0.0:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / denom)


def cmd_validate_plan(args) -> int:
    config = load_config(args.config)
    probe_layout = _resolve_layout(config, 0)
    task = _build_task(config, probe_layout)
    total = (
        len(task.sequences) if config.task_kind is ev.TaskKind.CLASSIFICATION
        else task.n_steps
    )
    layout = _resolve_layout(config, total)
    status = 0
    for scheme in config.schemes:
        plan = se.build_plan(scheme, task, layout, config.task_kind)
        print(f"scheme {scheme.value}: {len(plan.splits)} split(s), "
              f"transient [{plan.transient.start},{plan.transient.stop}), "
              f"span [{plan.region.start},{plan.region.stop}), "
              f"fold_len {plan.fold_len}")
        for i, split in enumerate(plan.splits):
            train = " + ".join(f"[{r.start},{r.stop})" for r in split.train_ranges)
            v = split.valid_range
            print(f"  split {i:3d}: train {train or '(none)'}  valid [{v.start},{v.stop})")
        problems = va.check_plan(plan)
        if problems:
            status = 2
            for p in problems:
                print(f"  INVARIANT VIOLATED: {p}")
        else:
            print("  all plan invariants pass")
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="esncv",
        description="Echo state network training with efficient cross-validation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override experiment seeds")
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--output-dir", default=None)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="benchmark naive vs efficient engines")
    p_bench.add_argument("--steps", type=int, required=True)
    p_bench.add_argument("--size", type=int, required=True, help="reservoir neurons")
    p_bench.add_argument("--folds", required=True, help="comma-separated fold counts")
    p_bench.add_argument("--reps", type=int, default=3)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--output-dir", default=None)
    p_bench.set_defaults(func=cmd_bench)

    p_plan = sub.add_parser("validate-plan", help="print and check split geometry")
    p_plan.add_argument("config")
    p_plan.set_defaults(func=cmd_validate_plan)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"esncv: E_CONFIG: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"esncv: E_DATA: {exc}", file=sys.stderr)
        return 3
    except EsncvError as exc:
        print(f"esncv: E_NUMERIC: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entrypoint()

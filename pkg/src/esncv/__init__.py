"""Echo state network training with efficient time-series cross-validation."""

__version__ = "0.1.0"

from .datasets import (
    ExperimentLayout,
    SequenceDataset,
    SeriesDataset,
    drifting_ar2,
    load_sequences,
    load_series,
    normalize_series,
    table1_layout,
    write_series,
)
from .evaluation import (
    ErrorReport,
    SequenceTask,
    SeriesTask,
    TaskKind,
    classify_sequences,
    free_run,
    generative_task,
    nrmse,
)
from .exceptions import (
    ConfigError,
    DataError,
    DimensionError,
    EsncvError,
    NumericalError,
    PlanError,
    SingularSystemError,
    SpectralRadiusError,
)
from .regression import NormalAccumulator, TrainedReadout, predict, ridge_solve
from .reservoir import (
    ReservoirParams,
    ReservoirWeights,
    generate_reservoir,
    run_sequence,
    update_state,
    zero_state,
)
from .search import (
    FinalizeMode,
    SearchResult,
    SearchSpace,
    evaluate_test,
    finalize,
    grid_search,
    run_pipeline,
)
from .validation import (
    Range,
    SchemeKind,
    Split,
    SplitPlan,
    UpdateCounter,
    check_plan,
    plan_splits,
    run_efficient_cv,
    run_naive_cv,
)

__all__ = [name for name in dir() if not name.startswith("_")]

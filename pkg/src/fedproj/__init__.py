"""Federated full-parameter tuning with seeded random-subspace update compression."""

from .errors import (
    ConfigError,
    DivergedError,
    FedprojError,
    InfeasibleBudgetError,
    InvalidDimensionError,
    NumericError,
    PartitionError,
    ProtocolError,
    ShapeMismatchError,
)
from .federation import (
    METHODS,
    ClientDataset,
    ClientUpdateMsg,
    ExperimentState,
    FedConfig,
    RoundRecord,
    StreamRng,
    account_costs,
    build_partition,
    partition_data,
    projection_seed,
    run_experiment,
    run_round,
    sample_clients,
    setup_experiment,
)
from .models import (
    MODEL_KINDS,
    Dataset,
    Example,
    ModelSpec,
    ParamVector,
    accuracy,
    grad,
    init_params,
    load_csv,
    load_npz,
    local_sgd,
    loss,
    predict,
    save_csv,
    save_npz,
    synthetic_classification,
    synthetic_regression,
)
from .projection import (
    PROJECTION_VERSION,
    BlockPartition,
    ProjectedUpdate,
    UpdateVector,
    allocate_budgets,
    block_cost,
    cosine_similarity,
    exact_project,
    project,
    reconstruct,
)
from .randbasis import (
    BasisChunk,
    RandomSeed,
    TruncGaussStats,
    basis_tile,
    derive_subseed,
    mix64,
    sample_basis,
    trunc_gauss_stats,
    uniform_stream,
)
from .repro import (
    SERIES_NAMES,
    Series,
    accuracy_vs_bases,
    allocation_ablation,
    build_series,
    drift_immunity,
    format_records_csv,
    format_series_csv,
    rounds_curve,
    write_series_csv,
)
from .socketmode import run_experiment_sockets
from .verify import (
    CHECK_NAMES,
    CheckReport,
    TheoryCheckConfig,
    run_battery,
    run_check,
)
from .zoo import (
    ScalarGrads,
    ZOConfig,
    fedkseed_local_step,
    replay_scalar_log,
    zo_reconstruct,
    zo_scalar_grads,
)

__version__ = "0.1.0"

__all__ = [
    "BasisChunk",
    "BlockPartition",
    "CHECK_NAMES",
    "CheckReport",
    "ClientDataset",
    "ClientUpdateMsg",
    "ConfigError",
    "Dataset",
    "DivergedError",
    "Example",
    "ExperimentState",
    "FedConfig",
    "FedprojError",
    "InfeasibleBudgetError",
    "InvalidDimensionError",
    "METHODS",
    "MODEL_KINDS",
    "ModelSpec",
    "NumericError",
    "PROJECTION_VERSION",
    "ParamVector",
    "PartitionError",
    "ProjectedUpdate",
    "ProtocolError",
    "RandomSeed",
    "RoundRecord",
    "SERIES_NAMES",
    "ScalarGrads",
    "Series",
    "ShapeMismatchError",
    "StreamRng",
    "TheoryCheckConfig",
    "TruncGaussStats",
    "UpdateVector",
    "ZOConfig",
    "account_costs",
    "accuracy",
    "accuracy_vs_bases",
    "allocate_budgets",
    "allocation_ablation",
    "basis_tile",
    "block_cost",
    "build_partition",
    "build_series",
    "cosine_similarity",
    "derive_subseed",
    "drift_immunity",
    "exact_project",
    "fedkseed_local_step",
    "format_records_csv",
    "format_series_csv",
    "grad",
    "init_params",
    "load_csv",
    "load_npz",
    "local_sgd",
    "loss",
    "mix64",
    "partition_data",
    "predict",
    "project",
    "projection_seed",
    "reconstruct",
    "replay_scalar_log",
    "rounds_curve",
    "run_battery",
    "run_check",
    "run_experiment",
    "run_experiment_sockets",
    "run_round",
    "sample_basis",
    "sample_clients",
    "save_csv",
    "save_npz",
    "setup_experiment",
    "synthetic_classification",
    "synthetic_regression",
    "trunc_gauss_stats",
    "uniform_stream",
    "write_series_csv",
    "zo_reconstruct",
    "zo_scalar_grads",
    "__version__",
]

"""User-oriented robustness (UOR) metric and training for parameterized MDPs."""

from uorrl.envs import (
    ParamChainEnv,
    ParamMassEnv,
    Trajectory,
    estimate_return,
    exact_chain_return,
    rollout,
)
from uorrl.errors import (
    CapacityError,
    DegenerateTruncationError,
    InconsistentDivisionError,
    InvalidArgumentError,
    NumericalFailureError,
)
from uorrl.metric import (
    DbMetricConfig,
    MetricReport,
    db_metric,
    df_metric,
    suggest_cluster_sizes,
    suggest_delta,
)
from uorrl.param_space import (
    Block,
    DriftingSource,
    Empirical,
    HeldSource,
    IidSource,
    Mixture,
    ParameterSpace,
    TruncatedGaussian,
    Uniform,
    compute_masses,
    parameter_process_next,
    sample,
    set_division,
    total_variation,
)
from uorrl.policy import LinearGaussian, TabularSoftmax, load_policy, save_policy
from uorrl.preference import (
    PowerPreference,
    RankedLedger,
    TabulatedPreference,
    exact_metric,
    rank,
    weight_integral,
    weight_value,
)
from uorrl.trainer import (
    TrainConfig,
    enumerate_optimal_tabular,
    policy_update,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Block",
    "CapacityError",
    "DbMetricConfig",
    "DegenerateTruncationError",
    "DriftingSource",
    "Empirical",
    "HeldSource",
    "IidSource",
    "InconsistentDivisionError",
    "InvalidArgumentError",
    "LinearGaussian",
    "MetricReport",
    "Mixture",
    "NumericalFailureError",
    "ParamChainEnv",
    "ParamMassEnv",
    "ParameterSpace",
    "PowerPreference",
    "RankedLedger",
    "TabularSoftmax",
    "TabulatedPreference",
    "TrainConfig",
    "Trajectory",
    "TruncatedGaussian",
    "Uniform",
    "compute_masses",
    "db_metric",
    "df_metric",
    "enumerate_optimal_tabular",
    "estimate_return",
    "exact_chain_return",
    "exact_metric",
    "load_policy",
    "parameter_process_next",
    "policy_update",
    "rank",
    "rollout",
    "sample",
    "save_policy",
    "set_division",
    "suggest_cluster_sizes",
    "suggest_delta",
    "total_variation",
    "train",
    "weight_integral",
    "weight_value",
]

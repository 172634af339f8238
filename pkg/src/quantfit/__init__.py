"""Staircase quantile-function approximation with trainable fractions."""

from .agents import (
    AGENT_KINDS,
    Agent,
    AgentConfig,
    ReplayBuffer,
    TrainingDivergedError,
    epsilon_greedy,
    evaluate_policy,
    train_agent,
)
from .distributions import (
    EmpiricalQF,
    ExponentialQF,
    GaussianQF,
    QuantileFunction,
    TabularQF,
    TwoPointQF,
    UniformQF,
    build_quantile_function,
    named_distribution,
)
from .envs import (
    HORIZON_CAP,
    ToyMDP,
    Transition,
    bandit,
    bellman_target,
    chain,
    load_mdp,
    mdp_from_dict,
    mdp_to_dict,
    named_mdp,
    save_mdp,
    single_loop,
    true_return_distribution,
    two_armed_bandit,
    windy_gridworld,
)
from .experiments import (
    EXPERIMENT_KINDS,
    RESULT_HEADER,
    SCHEMA_VERSION,
    ExperimentConfig,
    ResultRow,
    config_from_dict,
    load_checkpoint,
    load_config,
    read_result_csv,
    run_approx,
    run_gradcheck,
    run_optimize,
    run_sweep,
    run_train,
    save_checkpoint,
    worker_count,
    write_result_csv,
)
from .fractions import (
    DivergenceError,
    FractionProposer,
    OptimizerState,
    entropy,
    fractions_from_logits,
    grid_search_oracle,
    logit_gradient,
    optimize_fractions,
)
from .quadrature import IntegrationError, adaptive_simpson
from .staircase import (
    FractionSet,
    StaircaseApproximation,
    optimal_values,
    random_fraction_set,
    w1_error,
    w1_fraction_gradient,
)
from .valuenet import (
    CHECKPOINT_FORMAT,
    CosineEmbedding,
    HuberParams,
    QuantileValueNet,
    action_value,
    cosine_basis,
    load_net,
    quantile_huber,
    quantile_loss,
    save_net,
    td_error_matrix,
)

__all__ = [
    "AGENT_KINDS",
    "Agent",
    "AgentConfig",
    "ReplayBuffer",
    "TrainingDivergedError",
    "epsilon_greedy",
    "evaluate_policy",
    "train_agent",
    "EmpiricalQF",
    "ExponentialQF",
    "GaussianQF",
    "QuantileFunction",
    "TabularQF",
    "TwoPointQF",
    "UniformQF",
    "build_quantile_function",
    "named_distribution",
    "HORIZON_CAP",
    "ToyMDP",
    "Transition",
    "bandit",
    "bellman_target",
    "chain",
    "load_mdp",
    "mdp_from_dict",
    "mdp_to_dict",
    "named_mdp",
    "save_mdp",
    "single_loop",
    "true_return_distribution",
    "two_armed_bandit",
    "windy_gridworld",
    "EXPERIMENT_KINDS",
    "RESULT_HEADER",
    "SCHEMA_VERSION",
    "ExperimentConfig",
    "ResultRow",
    "config_from_dict",
    "load_checkpoint",
    "load_config",
    "read_result_csv",
    "run_approx",
    "run_gradcheck",
    "run_optimize",
    "run_sweep",
    "run_train",
    "save_checkpoint",
    "worker_count",
    "write_result_csv",
    "DivergenceError",
    "FractionProposer",
    "OptimizerState",
    "entropy",
    "fractions_from_logits",
    "grid_search_oracle",
    "logit_gradient",
    "optimize_fractions",
    "IntegrationError",
    "adaptive_simpson",
    "FractionSet",
    "StaircaseApproximation",
    "optimal_values",
    "random_fraction_set",
    "w1_error",
    "w1_fraction_gradient",
    "CHECKPOINT_FORMAT",
    "CosineEmbedding",
    "HuberParams",
    "QuantileValueNet",
    "action_value",
    "cosine_basis",
    "load_net",
    "quantile_huber",
    "quantile_loss",
    "save_net",
    "td_error_matrix",
]

__version__ = "0.1.0"

"""Exact computation and simulation for off-policy evaluation in tabular POMDPs."""
from .core import (
    MemorylessPolicy,
    TabularPOMDP,
    action_ratio,
    c_mu,
    decode_future,
    decode_history,
    encode_future,
    encode_history,
    load_model,
    load_policy,
)
from .coverage import bound_evaluation, coverage_report, iv_dr_diagnostics
from .estimators import (
    build_classes,
    is_estimate,
    minimax_fdvf_estimate,
    mis_estimate,
    plug_in_estimate,
)
from .exact import (
    bellman_residual_H,
    bellman_residual_S,
    brute_force_J,
    build_algebra,
    build_step_algebra,
    evaluation_error_identity,
    latent_value,
    policy_value,
)
from .fdvf import construct_fdvf, construct_history_weights
from .fixtures import generate_fixture
from .simulate import read_dataset, sample_dataset, write_dataset
from .validation import validate_model

__version__ = "0.1.0"

__all__ = [
    "MemorylessPolicy", "TabularPOMDP", "action_ratio", "c_mu",
    "decode_future", "decode_history", "encode_future", "encode_history",
    "load_model", "load_policy",
    "bound_evaluation", "coverage_report", "iv_dr_diagnostics",
    "build_classes", "is_estimate", "minimax_fdvf_estimate", "mis_estimate", "plug_in_estimate",
    "bellman_residual_H", "bellman_residual_S", "brute_force_J", "build_algebra",
    "build_step_algebra", "evaluation_error_identity", "latent_value", "policy_value",
    "construct_fdvf", "construct_history_weights", "generate_fixture",
    "read_dataset", "sample_dataset", "write_dataset", "validate_model",
]

"""Restless bandits learned from pairwise preferences."""

from .world import (BT_HIGH, BT_LOW, ArmModel, ConfigurationError, WorldModel, bt_preference, build_app_marketing,
                    build_armman, build_cpap, load_world)
from .transitions import TransitionEstimate, confidence_width, in_confidence_set
from .preference import ComparisonLedger, build_reference_column, infer_preference, q_value
from .planner import build_elp, build_exact_lp, direct_indices, select_top_b, solve_lp
from .policies import POLICIES, DOPLPolicy, MLELPPolicy, OraclePolicy, RandomPolicy, make_policy, mle_fit_rewards
from .harness import ExperimentConfig, compute_regret, emit_outputs, make_world, run_experiment

__version__ = "0.1.0"

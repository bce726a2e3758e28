"""Asymptotic-preserving multilevel Monte Carlo for diffusively scaled kinetic equations."""
from .coupling import COMBINED, TERM_BY_TERM, CouplingConfig, simulate_pairs, simulate_single
from .mlmc import LevelStrategy, MlmcResult, SimulationContext, adaptive_mlmc, leave_out_score
from .runlength import RunLengthTables, build_tables, fast_level0_xi, sample_run_multiset
from .scheme import SchemeParams, ap_step, standard_step
from .variance import LevelPairParams, optimal_theta, total_pair_variance, var_velocity_sum
from .velocity import GAUSSIAN, TWO_SPEED, VelocityModel

__version__ = "0.1.0"

__all__ = [
    "COMBINED", "TERM_BY_TERM", "CouplingConfig", "simulate_pairs", "simulate_single",
    "LevelStrategy", "MlmcResult", "SimulationContext", "adaptive_mlmc", "leave_out_score",
    "RunLengthTables", "build_tables", "fast_level0_xi", "sample_run_multiset",
    "SchemeParams", "ap_step", "standard_step",
    "LevelPairParams", "optimal_theta", "total_pair_variance", "var_velocity_sum",
    "GAUSSIAN", "TWO_SPEED", "VelocityModel",
]

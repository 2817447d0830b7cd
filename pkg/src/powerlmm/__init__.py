"""Marginal likelihoods of Bayesian longitudinal mixed models via power posteriors."""

from .data import IndividualSeries, LongitudinalDataset, load_csv, simulate_study1, simulate_study2, write_csv
from .kernels import ChainConfig, ChainTrace, gibbs_sweep, run_chain, slice_sample_scalar
from .models import ModelSpec, ParameterState, PriorConfig, Structure, init_state
from .thermo import (
    bayes_factor, build_ladder, estimate_log_evidence, power_expectations, replicate_evidence,
    trapezoid_log_evidence,
)

__all__ = [
    "IndividualSeries", "LongitudinalDataset", "load_csv", "write_csv", "simulate_study1", "simulate_study2",
    "ChainConfig", "ChainTrace", "gibbs_sweep", "run_chain", "slice_sample_scalar",
    "ModelSpec", "ParameterState", "PriorConfig", "Structure", "init_state",
    "bayes_factor", "build_ladder", "estimate_log_evidence", "power_expectations", "replicate_evidence",
    "trapezoid_log_evidence",
]

"""Robust (max-min) binary sensor placement for linear Gaussian inverse problems."""

from .model import (GaussianPrior, LinearForwardModel, ModelError, NoiseModel,
                    build_laplacian_prior, build_reference_model, noise_covariance,
                    noise_covariance_derivative, posterior_params)
from .objective import (ObjectiveValue, OEDProblem, PenaltyConfig, PenaltyKind,
                        fim_trace, grad_lambda, objective, penalty)
from .optimizer import (EvaluationCache, SampleSet, SolverConfig, SolverTrace,
                        generic_maxmin, noise_opt, robust_solve, stoc_param_opt)
from .oracle import brute_force_maxmin, nominal_solve, redundancy_report
from .policy import BernoulliPolicy, design_index, exact_expectation, sample

__version__ = "0.1.0"

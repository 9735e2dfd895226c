"""Priors, samplers and posterior summaries."""

from .diagnostics import Diagnostics, diagnostics, ess, split_rhat
from .gls import GLSResult, design_matrix, gls_fit
from .layout import ParameterLayout
from .priors import (Prior, PriorSpec, collocation_priors, default_priors, load_priors, log_prior, prior_means,
                     resolve_priors, save_priors, weak_priors)
from .sampler import ChainResult, SamplerConfig, gibbs_fit, log_target
from .summary import (binned_mode, init_from_collocation, posterior_estimate, read_collocation,
                      read_parameters, write_parameters)

__all__ = [
    "ChainResult", "Diagnostics", "GLSResult", "ParameterLayout", "Prior", "PriorSpec",
    "SamplerConfig", "binned_mode", "collocation_priors", "default_priors", "design_matrix", "diagnostics", "ess",
    "gibbs_fit", "gls_fit", "init_from_collocation", "load_priors", "log_prior", "log_target",
    "posterior_estimate", "prior_means", "read_collocation", "read_parameters", "resolve_priors",
    "save_priors", "split_rhat", "weak_priors", "write_parameters",
]

"""Comparing MCMC strategies by k-NN estimates of alpha, Renyi and Tsallis divergences."""
from .divergence import (
    DivergenceEstimate,
    DivergenceKind,
    Family,
    analytic_divergence,
    analytic_m,
    estimate_divergence,
    theorem_bound,
)
from .experiment import (
    ComparisonReport,
    DivergenceCurve,
    build_reference_sample,
    compare_strategies,
    divergence_curve,
    reproduction_recipe,
)
from .samplers import InitialLaw, StrategyConfig, run_chain, run_ensemble
from .targets import ConjugatePosteriorSpec, GaussianSpec, MixtureSpec, TargetModel, UnnormalizedSpec

__version__ = "0.1.0"

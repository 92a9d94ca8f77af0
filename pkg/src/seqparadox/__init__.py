"""Frequentist and Bayesian estimation after a one-interim group sequential trial.

Submodules:

* :mod:`~seqparadox.stats_core` - normal functions, quadrature, counter-based RNG
* :mod:`~seqparadox.trial` - designs, data, simulation and likelihoods
* :mod:`~seqparadox.frequentist` - MLE, bias formulas and bias correction
* :mod:`~seqparadox.bayes` - conjugate and threshold-prior posteriors, samplers
* :mod:`~seqparadox.calibration` - Monte Carlo and calibration studies
"""

__version__ = "0.1.0"

from .bayes import (
    DesignPrior,
    HierPosterior,
    PosteriorSummary,
    ThetaPrior,
    conjugate_posterior,
    hier_posterior,
    hier_posterior_mean,
    summarize_posterior,
)
from .errors import (
    AccuracyError,
    DegenerateError,
    DomainError,
    EmptySelectionError,
    InconsistentDataError,
    SeqParadoxError,
    UnsupportedError,
)
from .frequentist import BiasReport, bias_corrected_estimate, bias_report, mle
from .stats_core import RngStream
from .trial import DesignConfig, TrialData, TrialSummary, simulate_trial, summarize, table1

__all__ = [
    "AccuracyError",
    "BiasReport",
    "DegenerateError",
    "DesignConfig",
    "DesignPrior",
    "DomainError",
    "EmptySelectionError",
    "HierPosterior",
    "InconsistentDataError",
    "PosteriorSummary",
    "RngStream",
    "SeqParadoxError",
    "ThetaPrior",
    "TrialData",
    "TrialSummary",
    "UnsupportedError",
    "bias_corrected_estimate",
    "bias_report",
    "conjugate_posterior",
    "hier_posterior",
    "hier_posterior_mean",
    "mle",
    "simulate_trial",
    "summarize",
    "summarize_posterior",
    "table1",
]

"""MLE, continuation probability and the exact biases of the MLE under early stopping.

With ``z = sqrt(n) / sigma * (psi - theta)`` the first-stage mean is
``N(theta, sigma^2 / n)`` and the trial continues with probability
``Phi(z)``. Conditioning on the stopping outcome truncates the first-stage
mean, which gives the Mills-ratio terms below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special

from .errors import DegenerateError, UnsupportedError
from .stats_core import norm_pdf
from .trial import DesignConfig, TrialSummary

__all__ = [
    "BiasReport",
    "bias_corrected_estimate",
    "bias_report",
    "conditional_estimator_mean",
    "continuation_prob",
    "marginal_estimator_mean",
    "mills",
    "mle",
]

_LOG_TINY = math.log(1e-300)


def mle(summary: TrialSummary) -> float:
    """Maximum likelihood estimate: the mean of all ``(1 + x) n`` outcomes."""
    return summary.ybar


def _z(theta: float, design: DesignConfig) -> float:
    return math.sqrt(design.n) / design.sigma * (design.psi - theta)


def mills(z: float, sign: int = 1) -> float:
    """``phi(z) / Phi(sign * z)`` evaluated in log space.

    Raises :class:`DegenerateError` when ``Phi(sign * z)`` is below 1e-300.
    """
    log_den = float(special.log_ndtr(sign * z))
    if log_den < _LOG_TINY:
        raise DegenerateError(f"conditioning probability Phi({sign * z:g}) underflows")
    if math.isinf(z):
        return 0.0
    return math.exp(-0.5 * z * z - 0.5 * math.log(2 * math.pi) - log_den)


def continuation_prob(theta: float, design: DesignConfig) -> float:
    """``P(X = 1 | theta, psi)``; identically 1 for investigator A."""
    if design.investigator == "A":
        return 1.0
    return float(special.ndtr(_z(theta, design)))


def marginal_estimator_mean(theta: float, design: DesignConfig) -> float:
    """``E[mle]`` under repeated sampling at fixed ``(theta, psi)``."""
    if design.investigator == "A":
        return theta
    z = _z(theta, design)
    if math.isinf(z):
        return theta
    return theta + design.sigma / (2 * math.sqrt(design.n)) * norm_pdf(z)


def conditional_estimator_mean(theta: float, design: DesignConfig, x: int) -> float:
    """``E[mle | X = x]``.

    Stopping (``x = 0``) leaves a first-stage mean truncated from below at
    ``psi``; continuing (``x = 1``) averages a mean truncated from above with
    an independent unbiased second stage, halving the shift.
    """
    if x not in (0, 1):
        raise UnsupportedError("x must be 0 or 1")
    if design.investigator == "A":
        if x == 0:
            raise DegenerateError("investigator A never stops")
        return theta
    z = _z(theta, design)
    scale = design.sigma / math.sqrt(design.n)
    if x == 0:
        return theta + scale * mills(z, -1)
    return theta - 0.5 * scale * mills(z, 1)


@dataclass(frozen=True)
class BiasReport:
    """Closed-form expectations of the MLE at one ``(theta, psi)``.

    ``cond_mean_stop`` is ``None`` when stopping is impossible (investigator A
    or ``psi = +inf``); ``cond_mean_continue`` likewise when continuing is.
    """

    theta: float
    psi: float
    marginal_mean: float
    cond_mean_stop: float | None
    cond_mean_continue: float | None
    continuation_prob: float

    def recombined(self) -> float:
        """Law of total expectation applied to the two conditional means."""
        pi = self.continuation_prob
        stop = 0.0 if self.cond_mean_stop is None else self.cond_mean_stop * (1 - pi)
        cont = 0.0 if self.cond_mean_continue is None else self.cond_mean_continue * pi
        return stop + cont


def bias_report(theta: float, design: DesignConfig) -> BiasReport:
    def safe(x: int) -> float | None:
        try:
            return conditional_estimator_mean(theta, design, x)
        except DegenerateError:
            return None

    return BiasReport(
        theta=theta,
        psi=design.psi,
        marginal_mean=marginal_estimator_mean(theta, design),
        cond_mean_stop=safe(0),
        cond_mean_continue=safe(1),
        continuation_prob=continuation_prob(theta, design),
    )


def bias_corrected_estimate(summary: TrialSummary, design: DesignConfig) -> float:
    """Plug-in correction of the MLE for a trial that continued past the interim.

    Adds back the conditional bias given continuation, evaluated at the MLE.
    Only the continued branch is defined.
    """
    if summary.x != 1:
        raise UnsupportedError("the bias correction is defined only for continued trials (x = 1)")
    theta_hat = mle(summary)
    z = _z(theta_hat, design)
    return theta_hat + design.sigma / (2 * math.sqrt(design.n)) * mills(z, 1)


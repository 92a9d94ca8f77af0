"""Conjugate and design-prior (hierarchical) posteriors for the trial effect.

Investigator A, and investigator B under a design prior independent of the
effect, get the conjugate Normal posterior ``N(mu_{1+x}, sigma_{1+x}^2)``.

Under the linear design prior ``psi = a + b * theta + eps``,
``eps ~ N(0, omega^2)``, investigator B's posterior after integrating out
``psi`` is the conjugate density tilted by a probit factor::

    p(theta | data) = Phi(s * (a + b*theta - ybar1) / omega)
                      * phi((theta - mu_{1+x}) / sigma_{1+x}) / sigma_{1+x} / Z

with ``s = +1`` if the trial continued and ``-1`` if it stopped, and
``Z = Phi(s * d)``, ``d = (a + b*mu_{1+x} - ybar1) / sqrt(omega^2 + sigma_{1+x}^2 b^2)``.
Mean, variance and MGF follow in closed form; CDF and quantiles are obtained
by quadrature.
"""

from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .errors import AccuracyError, DegenerateError, DomainError, UnsupportedError
from .stats_core import RngStream, integrate
from .trial import DesignConfig, TrialSummary

log = logging.getLogger(__name__)

__all__ = [
    "ConjugatePosterior",
    "DesignPrior",
    "HierPosterior",
    "PosteriorSummary",
    "ThetaPrior",
    "TuningWarning",
    "conjugate_posterior",
    "correction_term",
    "empirical_bayes_b",
    "hier_cdf",
    "hier_density",
    "hier_log_density",
    "hier_posterior",
    "hier_posterior_mean",
    "hier_posterior_mgf",
    "hier_posterior_mode",
    "hier_posterior_sd",
    "hier_quantile",
    "sample_grid",
    "sample_mcmc",
    "summarize_posterior",
]

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
_LOG_TINY = math.log(1e-300)
SPAN = 10.0  # half-width of the working range, in conjugate posterior sds


class TuningWarning(UserWarning):
    """Metropolis acceptance rate outside [0.1, 0.9]."""


@dataclass(frozen=True)
class ThetaPrior:
    """``Theta ~ N(mu, tau^2)``, or the improper flat prior when ``flat``."""

    mu: float = 0.0
    tau: float = 1.0
    flat: bool = False

    def __post_init__(self) -> None:
        if not self.flat and not (self.tau > 0 and math.isfinite(self.tau)):
            raise DomainError("tau must be positive and finite (use flat=True for the improper limit)")


@dataclass(frozen=True)
class DesignPrior:
    """``Psi = a + b * Theta + eps`` with ``eps ~ N(0, omega^2)``."""

    a: float
    b: float
    omega: float

    def __post_init__(self) -> None:
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise DomainError("omega must be positive and finite")


@dataclass(frozen=True)
class ConjugatePosterior:
    mean: float
    sd: float

    @property
    def var(self) -> float:
        return self.sd**2

    def logpdf(self, theta):
        return stats.norm.logpdf(theta, self.mean, self.sd)

    def cdf(self, theta):
        return special.ndtr((np.asarray(theta) - self.mean) / self.sd)


def conjugate_posterior(summary: TrialSummary, prior: ThetaPrior, design: DesignConfig) -> ConjugatePosterior:
    """Normal-Normal update on the ``(1 + x) n`` observed outcomes."""
    se2 = design.sigma**2 / ((1 + summary.x) * design.n)
    if prior.flat:
        return ConjugatePosterior(summary.ybar, math.sqrt(se2))
    tau2 = prior.tau**2
    w = tau2 / (tau2 + se2)
    mean = summary.ybar * w + prior.mu * (se2 / (tau2 + se2))
    return ConjugatePosterior(mean, math.sqrt(se2 * tau2 / (tau2 + se2)))


@dataclass(frozen=True)
class HierPosterior:
    """Investigator-specific posterior; ``design_prior is None`` means no design factor.

    Build with :func:`hier_posterior`. The design factor is absent for
    investigator A, whose continuation is certain whatever ``psi`` is.
    """

    conjugate: ConjugatePosterior
    design_prior: DesignPrior | None
    ybar1: float
    x: int
    log_normalizer: float = 0.0

    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer)

    @property
    def sign(self) -> int:
        return 1 if self.x == 1 else -1

    @property
    def scale(self) -> float:
        dp = self.design_prior
        return math.hypot(dp.omega, self.conjugate.sd * dp.b)

    @property
    def d(self) -> float:
        dp = self.design_prior
        return (dp.a + dp.b * self.conjugate.mean - self.ybar1) / self.scale


def hier_posterior(
    summary: TrialSummary,
    prior: ThetaPrior,
    design: DesignConfig,
    design_prior: DesignPrior | None,
) -> HierPosterior:
    conj = conjugate_posterior(summary, prior, design)
    if design.investigator == "A" or design_prior is None:
        return HierPosterior(conj, None, summary.ybar1, summary.x, 0.0)
    post = HierPosterior(conj, design_prior, summary.ybar1, summary.x)
    log_z = float(special.log_ndtr(post.sign * post.d))
    return HierPosterior(conj, design_prior, summary.ybar1, summary.x, log_z)


def hier_log_density(theta, post: HierPosterior):
    """Normalised log density; saturates to ``-inf`` in far tails, never NaN."""
    th = np.asarray(theta, dtype=float)
    c = post.conjugate
    u = (th - c.mean) / c.sd
    out = -0.5 * u * u - _LOG_SQRT_2PI - math.log(c.sd)
    dp = post.design_prior
    if dp is not None:
        out = out + special.log_ndtr(post.sign * (dp.a + dp.b * th - post.ybar1) / dp.omega) - post.log_normalizer
    return float(out) if th.ndim == 0 else out


def hier_density(theta, post: HierPosterior):
    return np.exp(hier_log_density(theta, post))


def _ratio(post: HierPosterior) -> float:
    """``phi(d) / Phi(s * d)``; raises if the normaliser has underflowed."""
    if post.log_normalizer < _LOG_TINY:
        raise DegenerateError("posterior normaliser underflows")
    d = post.d
    return math.exp(-0.5 * d * d - _LOG_SQRT_2PI - post.log_normalizer)


def correction_term(post: HierPosterior) -> float:
    """Shift of the posterior mean away from the conjugate mean caused by the design prior."""
    if post.design_prior is None:
        return 0.0
    dp = post.design_prior
    if dp.b == 0.0:
        return 0.0
    return post.sign * dp.b * post.conjugate.var / post.scale * _ratio(post)


def hier_posterior_mean(post: HierPosterior) -> float:
    return post.conjugate.mean + correction_term(post)


def hier_posterior_sd(post: HierPosterior) -> float:
    """Posterior sd; the tilt can only shrink the conjugate variance."""
    c = post.conjugate
    if post.design_prior is None or post.design_prior.b == 0.0:
        return c.sd
    r = _ratio(post)
    k = (post.design_prior.b * c.var / post.scale) ** 2
    return math.sqrt(max(c.var - k * r * (r + post.sign * post.d), 0.0))


def hier_posterior_mgf(t: float, post: HierPosterior) -> float:
    """``E[exp(t * Theta)]`` in closed form."""
    if not math.isfinite(t):
        raise DomainError("t must be finite")
    c = post.conjugate
    log_m = 0.5 * t * t * c.var + c.mean * t
    dp = post.design_prior
    if dp is not None:
        arg = post.sign * (dp.a + dp.b * (c.mean + t * c.var) - post.ybar1) / post.scale
        log_m += float(special.log_ndtr(arg)) - post.log_normalizer
    return math.exp(log_m)


def _window(post: HierPosterior) -> tuple[float, float]:
    c = post.conjugate
    centre = hier_posterior_mean(post)
    return min(centre, c.mean) - SPAN * c.sd, max(centre, c.mean) + SPAN * c.sd


def hier_posterior_mode(post: HierPosterior, xtol: float = 1e-10) -> float:
    """Maximiser of the posterior density (bounded Brent search)."""
    c = post.conjugate
    if post.design_prior is None or post.design_prior.b == 0.0:
        return c.mean
    lo, hi = _window(post)
    res = optimize.minimize_scalar(
        lambda t: -hier_log_density(t, post), bounds=(lo, hi), method="bounded", options={"xatol": xtol, "maxiter": 500}
    )
    if not res.success:
        raise AccuracyError(f"mode search failed: {res.message}", estimate=float(res.x))
    return float(res.x)


def hier_cdf(theta: float, post: HierPosterior, tol: float = 1e-10) -> float:
    """``P(Theta <= theta | data)`` by adaptive quadrature of the density."""
    lo, hi = _window(post)
    if theta <= lo:
        return 0.0
    if theta >= hi:
        return 1.0
    res = integrate(lambda t: hier_density(t, post), lo, theta, tol=tol)
    return min(max(res.value, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Tabulated CDF for vectorised quantiles
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def _gl_integral(post: HierPosterior, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    t = mid[..., None] + half[..., None] * _GL_X
    return half * (hier_density(t, post) @ _GL_W)


@dataclass(frozen=True)
class _CdfTable:
    nodes: np.ndarray
    cum: np.ndarray  # unnormalised CDF at nodes
    total: float


@functools.lru_cache(maxsize=64)
def _cdf_table(post: HierPosterior) -> _CdfTable:
    lo, hi = _window(post)
    sd = post.conjugate.sd
    nodes = [np.linspace(lo, hi, int(round((hi - lo) / (sd / 16))) + 1)]
    dp = post.design_prior
    if dp is not None and dp.b != 0.0:
        # resolve the probit step, whose width omega/|b| may be far below sd
        width = dp.omega / abs(dp.b)
        if width < sd:
            kink = (post.ybar1 - dp.a) / dp.b
            a, b = max(lo, kink - 12 * width), min(hi, kink + 12 * width)
            if a < b:
                nodes.append(np.linspace(a, b, 24 * 16 + 1))
    t = np.unique(np.concatenate(nodes))
    mass = _gl_integral(post, t[:-1], t[1:])
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    return _CdfTable(t, cum, float(cum[-1]))


def hier_quantile(p, post: HierPosterior, tol: float = 1e-13):
    """Inverse posterior CDF; ``p`` may be an array.

    Locates the tabulated cell holding ``p`` and solves inside it with a
    bracketed Newton iteration, so ``|cdf(quantile(p)) - p|`` is at the
    level of ``tol``.
    """
    pv = np.asarray(p, dtype=float)
    if np.isnan(pv).any() or (pv <= 0).any() or (pv >= 1).any():
        raise DomainError("p must lie strictly inside (0, 1)")
    tab = _cdf_table(post)
    target = np.atleast_1d(pv) * tab.total
    k = np.clip(np.searchsorted(tab.cum, target, side="right") - 1, 0, tab.nodes.size - 2)
    left, right = tab.nodes[k].copy(), tab.nodes[k + 1].copy()
    base = tab.nodes[k]
    rem = target - tab.cum[k]
    cell = tab.cum[k + 1] - tab.cum[k]
    frac = np.divide(rem, cell, out=np.full_like(rem, 0.5), where=cell > 0)
    t = left + np.clip(frac, 0.0, 1.0) * (right - left)
    active = np.arange(t.size)
    for _ in range(60):
        g = _gl_integral(post, base[active], t[active]) - rem[active]
        done = (np.abs(g) <= tol * tab.total) | (right[active] - left[active] <= 4e-16 * np.abs(t[active]))
        active, g = active[~done], g[~done]
        if active.size == 0:
            break
        ta = t[active]
        left[active] = np.where(g < 0, ta, left[active])
        right[active] = np.where(g > 0, ta, right[active])
        f = hier_density(ta, post)
        step = np.divide(g, f, out=np.full_like(g, np.inf), where=f > 0)
        cand = ta - step
        ok = (cand > left[active]) & (cand < right[active])
        t[active] = np.where(ok, cand, 0.5 * (left[active] + right[active]))
    return float(t[0]) if pv.ndim == 0 else t


def sample_grid(post: HierPosterior, m: int, rng: RngStream) -> np.ndarray:
    """``m`` independent draws by inverse-CDF transform of stream uniforms."""
    if m < 1:
        raise DomainError("m must be at least 1")
    return hier_quantile(rng.uniform(m), post)


def sample_mcmc(
    post: HierPosterior,
    m: int,
    rng: RngStream,
    burn_in: int = 1000,
    step: float | None = None,
    return_acceptance: bool = False,
):
    """Random-walk Metropolis chain targeting :func:`hier_log_density`.

    The proposal sd defaults to ``2.4 * sigma_{1+x}``; the chain starts at the
    conjugate mean. Returns the ``m`` post-burn-in states.
    """
    if m < 1 or burn_in < 0:
        raise DomainError("m must be >= 1 and burn_in >= 0")
    c = post.conjugate
    step = 2.4 * c.sd if step is None else step
    if step <= 0:
        raise DomainError("step must be positive")
    total = m + burn_in
    moves = step * rng.normal(size=total)
    log_u = np.log(rng.uniform(total))

    dp = post.design_prior
    mu, inv_var = c.mean, 1.0 / c.var
    if dp is None:
        def logp(t: float) -> float:
            return -0.5 * (t - mu) ** 2 * inv_var
    else:
        sg, a, b, inv_om, yb1 = post.sign, dp.a, dp.b, 1.0 / dp.omega, post.ybar1
        log_ndtr = special.log_ndtr

        def logp(t: float) -> float:
            return -0.5 * (t - mu) ** 2 * inv_var + log_ndtr(sg * (a + b * t - yb1) * inv_om)

    out = np.empty(m)
    cur, cur_lp = mu, logp(mu)
    accepted = 0
    for i in range(total):
        prop = cur + moves[i]
        prop_lp = logp(prop)
        if log_u[i] < prop_lp - cur_lp:
            cur, cur_lp = prop, prop_lp
            if i >= burn_in:
                accepted += 1
        if i >= burn_in:
            out[i - burn_in] = cur
    rate = accepted / m
    log.debug("metropolis acceptance rate %.3f", rate)
    if not 0.1 <= rate <= 0.9:
        warnings.warn(f"acceptance rate {rate:.3f} outside [0.1, 0.9]; adjust step", TuningWarning, stacklevel=2)
    return (out, rate) if return_acceptance else out


def empirical_bayes_b(summary: TrialSummary) -> float:
    """Slope ``b = ybar1 / (2 * ybar)`` that aligns the Bayesian and frequentist corrections."""
    if summary.x != 1:
        raise UnsupportedError("empirical-Bayes slope is defined for continued trials only")
    if not summary.ybar1 * summary.ybar > 0:
        raise UnsupportedError("first-stage and overall means must be non-zero with the same sign")
    return summary.ybar1 / (2 * summary.ybar)


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

DEFAULT_PROBS = (0.025, 0.25, 0.5, 0.75, 0.975)


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    mode: float
    sd: float
    normalizer: float
    quantiles: dict[float, float] = field(default_factory=dict)
    method: str = "closed_form"

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "mode": self.mode,
            "sd": self.sd,
            "normalizer": self.normalizer,
            "quantiles": {repr(float(p)): v for p, v in self.quantiles.items()},
            "method": self.method,
        }


def _kde_mode(draws: np.ndarray) -> float:
    kde = stats.gaussian_kde(draws)
    grid = np.linspace(draws.min(), draws.max(), 2048)
    return float(grid[np.argmax(kde(grid))])


def summarize_posterior(
    post: HierPosterior,
    method: str = "closed_form",
    draws: np.ndarray | None = None,
    probs=DEFAULT_PROBS,
) -> PosteriorSummary:
    """Mean, mode, sd and quantiles by the chosen route.

    ``closed_form`` and ``quadrature`` work on the density itself; ``mcmc`` and
    ``grid`` summarise ``draws`` (mode from a Gaussian kernel density estimate).
    """
    if method == "closed_form":
        mean, sd = hier_posterior_mean(post), hier_posterior_sd(post)
        mode = hier_posterior_mode(post)
        q = {p: float(hier_quantile(p, post)) for p in probs}
    elif method == "quadrature":
        lo, hi = _window(post)
        mean = integrate(lambda t: t * hier_density(t, post), lo, hi).value
        var = integrate(lambda t: (t - mean) ** 2 * hier_density(t, post), lo, hi).value
        sd, mode = math.sqrt(var), hier_posterior_mode(post)
        q = {p: float(hier_quantile(p, post)) for p in probs}
    elif method in ("mcmc", "grid"):
        if draws is None or len(draws) < 2:
            raise DomainError(f"method {method!r} needs posterior draws")
        draws = np.asarray(draws, dtype=float)
        mean, sd = float(draws.mean()), float(draws.std(ddof=1))
        mode = _kde_mode(draws)
        q = {p: float(np.quantile(draws, p)) for p in probs}
    else:
        raise DomainError(f"unknown method {method!r}")
    return PosteriorSummary(mean, mode, sd, post.normalizer, q, method)


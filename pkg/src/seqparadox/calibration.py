"""Monte Carlo studies over the prior-induced universe of trials.

Each replicate ``i`` owns stream ``i`` of the master seed. Within a stream the
counters are laid out as

    0        effect draw (inverse-CDF of the effect prior)
    1        design noise eps, so psi = a + b * theta + eps
    2 ...    trial outcomes, 2n normals (first stage, then second stage)

so any replicate can be regenerated on its own (:func:`replay_replicate`).
Replicates are processed in fixed-size chunks whose partial results are
combined in chunk order, so results do not depend on ``workers``.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterator, Literal

import numpy as np
from scipy import special, stats

from .bayes import (
    DesignPrior,
    ThetaPrior,
    correction_term,
    empirical_bayes_b,
    hier_cdf,
    hier_posterior,
)
from .errors import DomainError, EmptySelectionError
from .frequentist import BiasReport, bias_corrected_estimate, bias_report
from .stats_core import RngStream, counter_uniforms, norm_quantile, probit_normal_integral
from .trial import (
    DesignConfig,
    TrialData,
    TrialSummary,
    admissible_suffix_counts,
    best_prefix,
    simulate_batch,
    simulate_trial,
)

log = logging.getLogger(__name__)

__all__ = [
    "BiasStudy",
    "GreedyDemo",
    "ReplicateTable",
    "SelectionShift",
    "UniformityReport",
    "UniverseConfig",
    "bias_mc_study",
    "eb_equivalence_check",
    "expected_retention",
    "expected_theta_given_x",
    "greedy_miscalibration_demo",
    "replay_replicate",
    "run_sbc",
    "sbc_replicates",
    "selection_shift_study",
    "uniformity_report",
]

CHUNK = 4096
N_BINS = 20
ALPHA = 0.01


@dataclass(frozen=True)
class UniverseConfig:
    theta_prior: ThetaPrior
    design: DesignConfig
    n_reps: int
    master_seed: int
    design_prior: DesignPrior | None = None

    def __post_init__(self) -> None:
        if self.n_reps < 1:
            raise DomainError("n_reps must be at least 1")
        if self.theta_prior.flat:
            raise DomainError("simulating a universe needs a proper effect prior")


def _chunks(total: int, size: int = CHUNK) -> Iterator[np.ndarray]:
    for start in range(0, total, size):
        yield np.arange(start, min(start + size, total), dtype=np.int64)


def _map(fn: Callable, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# Uniformity diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformityReport:
    n_used: int
    ks_statistic: float
    ks_p_value: float
    histogram: tuple[int, ...]
    n_drawn: int = 0

    def passed(self, alpha: float = ALPHA) -> bool:
        return self.ks_p_value > alpha

    def to_dict(self) -> dict:
        out = asdict(self)
        out["histogram"] = list(self.histogram)
        return out


def uniformity_report(values, n_drawn: int | None = None) -> UniformityReport:
    """Exact one-sample KS test against U(0, 1) plus a 20-bin histogram."""
    u = np.asarray(values, dtype=float)
    if u.size == 0:
        raise EmptySelectionError("no values to test")
    ks = stats.kstest(u, "uniform", method="exact")
    hist, _ = np.histogram(u, bins=N_BINS, range=(0.0, 1.0))
    return UniformityReport(
        n_used=int(u.size),
        ks_statistic=float(ks.statistic),
        ks_p_value=float(ks.pvalue),
        histogram=tuple(int(h) for h in hist),
        n_drawn=int(u.size if n_drawn is None else n_drawn),
    )


# ---------------------------------------------------------------------------
# Universe simulation and SBC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicateTable:
    """Columnar per-replicate results (one entry per retained replicate)."""

    index: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    x: np.ndarray
    ybar1: np.ndarray
    ybar: np.ndarray
    cdf_at_theta: np.ndarray
    n_drawn: int = 0

    def __len__(self) -> int:
        return self.index.size

    def csv_rows(self) -> Iterator[list]:
        yield ["theta", "psi", "x", "ybar1", "ybar", "cdf_at_theta"]
        for i in range(len(self)):
            yield [
                repr(float(self.theta[i])),
                repr(float(self.psi[i])),
                int(self.x[i]),
                repr(float(self.ybar1[i])),
                repr(float(self.ybar[i])),
                repr(float(self.cdf_at_theta[i])),
            ]


def _draw_parameters(cfg: UniverseConfig, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = norm_quantile(counter_uniforms(cfg.master_seed, idx, 0, 2))
    theta = cfg.theta_prior.mu + cfg.theta_prior.tau * z[:, 0]
    dp = cfg.design_prior
    if dp is None:
        psi = np.full(idx.size, float(cfg.design.psi))
    else:
        psi = dp.a + dp.b * theta + dp.omega * z[:, 1]
    return theta, psi


def replay_replicate(cfg: UniverseConfig, index: int) -> tuple[float, float, TrialData]:
    """Regenerate replicate ``index`` in full, including raw outcomes."""
    theta, psi = _draw_parameters(cfg, np.array([index]))
    stream = RngStream(cfg.master_seed, index, counter=2)
    design = DesignConfig(cfg.design.n, cfg.design.sigma, float(psi[0]), cfg.design.investigator)
    return float(theta[0]), float(psi[0]), simulate_trial(design, float(theta[0]), stream)


PosteriorKind = Literal["conjugate", "hierarchical"]


def _pit(cfg: UniverseConfig, kind: PosteriorKind, theta, ybar1, ybar, x) -> np.ndarray:
    d = cfg.design
    if kind == "conjugate" or cfg.design_prior is None or d.investigator == "A":
        # vectorised conjugate update
        tau2 = cfg.theta_prior.tau ** 2
        se2 = d.sigma**2 / ((1 + x) * d.n)
        mean = (ybar * tau2 + cfg.theta_prior.mu * se2) / (tau2 + se2)
        sd = np.sqrt(se2 * tau2 / (tau2 + se2))
        return special.ndtr((theta - mean) / sd)
    out = np.empty(theta.size)
    for i in range(theta.size):
        post = hier_posterior(TrialSummary(ybar1[i], ybar[i], int(x[i])), cfg.theta_prior, d, cfg.design_prior)
        out[i] = hier_cdf(theta[i], post, tol=1e-9)
    return out


def sbc_replicates(
    cfg: UniverseConfig,
    posterior_kind: PosteriorKind = "conjugate",
    condition_on_x: int | None = None,
    workers: int = 1,
    max_draws: int | None = None,
) -> ReplicateTable:
    """Simulate the universe and evaluate the posterior CDF at the true effect.

    Without conditioning, ``cfg.n_reps`` replicates are drawn. With
    ``condition_on_x`` replicates whose ``x`` differs are discarded and drawing
    continues until ``cfg.n_reps`` are retained (or ``max_draws`` is hit).
    """
    if posterior_kind not in ("conjugate", "hierarchical"):
        raise DomainError(f"unknown posterior kind {posterior_kind!r}")
    if posterior_kind == "hierarchical" and cfg.design_prior is None:
        raise DomainError("the hierarchical posterior needs a design prior")
    if condition_on_x not in (None, 0, 1):
        raise DomainError("condition_on_x must be 0, 1 or None")
    target = cfg.n_reps
    if max_draws is None:
        max_draws = target if condition_on_x is None else max(200 * target, 100_000)

    def run_chunk(idx: np.ndarray) -> dict:
        theta, psi = _draw_parameters(cfg, idx)
        b = simulate_batch(cfg.design, theta, cfg.master_seed, idx, offset=2, psi=psi)
        keep = np.ones(idx.size, bool) if condition_on_x is None else b.x == condition_on_x
        cols = dict(index=idx[keep], theta=theta[keep], psi=psi[keep], x=b.x[keep], ybar1=b.ybar1[keep], ybar=b.ybar[keep])
        cols["cdf_at_theta"] = _pit(cfg, posterior_kind, cols["theta"], cols["ybar1"], cols["ybar"], cols["x"])
        return cols

    pieces: list[dict] = []
    retained = drawn = 0
    chunks = _chunks(max_draws)
    while retained < target:
        batch = [c for _, c in zip(range(max(workers, 1)), chunks)]
        if not batch:
            break
        for res, idx in zip(_map(run_chunk, batch, workers), batch):
            if retained >= target:
                break
            pieces.append(res)
            retained += res["index"].size
            drawn = int(idx[-1]) + 1
    if retained == 0:
        raise EmptySelectionError(f"no replicate with x={condition_on_x} in {drawn} draws")
    cols = {k: np.concatenate([p[k] for p in pieces])[:target] for k in pieces[0]}
    if cols["index"].size < target:
        warnings.warn(f"only {cols['index'].size} of {target} replicates retained in {drawn} draws", stacklevel=2)
    else:
        drawn = int(cols["index"][-1]) + 1
    return ReplicateTable(**cols, n_drawn=drawn)


def run_sbc(
    cfg: UniverseConfig,
    posterior_kind: PosteriorKind = "conjugate",
    condition_on_x: int | None = None,
    workers: int = 1,
) -> UniformityReport:
    """Simulation-based calibration of the chosen posterior; see :func:`sbc_replicates`."""
    table = sbc_replicates(cfg, posterior_kind, condition_on_x, workers)
    return uniformity_report(table.cdf_at_theta, table.n_drawn)


def expected_retention(cfg: UniverseConfig, x: int = 1) -> float:
    """Probability that a universe replicate has continuation indicator ``x``.

    With ``ybar1 = theta + e``, ``e ~ N(0, sigma^2/n)``, continuation is
    ``e - eps <= a + (b - 1) theta``, a probit-normal integral over the prior.
    """
    d, tp = cfg.design, cfg.theta_prior
    if d.investigator == "A":
        return float(x == 1)
    se = d.sigma / math.sqrt(d.n)
    dp = cfg.design_prior
    if dp is None:
        p1 = probit_normal_integral(d.psi, -1.0, 0.0, se, tp.mu, tp.tau, 1)
    else:
        p1 = probit_normal_integral(dp.a, dp.b - 1.0, 0.0, math.hypot(se, dp.omega), tp.mu, tp.tau, 1)
    return p1 if x == 1 else 1.0 - p1


# ---------------------------------------------------------------------------
# Selection shift among continued trials
# ---------------------------------------------------------------------------


def _moments(v: np.ndarray) -> tuple[int, float, float]:
    return int(v.size), float(v.sum()), float((v * v).sum())


def _mean_se(n: int, s: float, ss: float) -> tuple[float | None, float | None]:
    if n == 0:
        return None, None
    mean = s / n
    if n == 1:
        return mean, math.inf
    var = max(ss - n * mean * mean, 0.0) / (n - 1)
    return mean, math.sqrt(var / n)


def _combine(parts: list[tuple[int, float, float]]) -> tuple[int, float, float]:
    n = s = ss = 0
    for pn, ps, pss in parts:  # chunk order fixed
        n, s, ss = n + pn, s + ps, ss + pss
    return n, s, ss


@dataclass(frozen=True)
class SelectionShift:
    mean_theta_all: float
    mean_theta_continue: float | None
    mean_theta_stop: float | None
    se_all: float
    se_continue: float | None
    se_stop: float | None
    n_continue: int
    n_stop: int
    expected_theta_continue: float
    expected_theta_stop: float
    expected_retention: float

    def to_dict(self) -> dict:
        return asdict(self)


def _coupling(cfg: UniverseConfig) -> tuple[float, float, float]:
    # continuation iff e - eps - (b - 1) theta <= a, with e the first-stage error
    d, tp = cfg.design, cfg.theta_prior
    se = d.sigma / math.sqrt(d.n)
    dp = cfg.design_prior
    a, b, omega = (d.psi, 0.0, 0.0) if dp is None else (dp.a, dp.b, dp.omega)
    scale = math.sqrt(se * se + omega * omega + ((b - 1.0) * tp.tau) ** 2)
    return a, b - 1.0, scale


def expected_theta_given_x(cfg: UniverseConfig, x: int) -> float:
    """Closed-form ``E[theta | X = x]`` over the universe (investigator B).

    Only the effective coupling ``b - 1`` matters: at ``b = 1`` the threshold
    moves with ``theta`` exactly as the first-stage mean does.
    """
    tp = cfg.theta_prior
    if cfg.design.investigator == "A":
        return tp.mu
    a, c, scale = _coupling(cfg)
    d = (a + c * tp.mu) / scale
    lam = c * tp.tau**2 / scale
    if x == 1:
        return tp.mu + lam * float(np.exp(stats.norm.logpdf(d) - special.log_ndtr(d)))
    return tp.mu - lam * float(np.exp(stats.norm.logpdf(d) - special.log_ndtr(-d)))


def selection_shift_study(cfg: UniverseConfig, n_reps: int | None = None, workers: int = 1) -> SelectionShift:
    """Mean of the true effect overall and within each stopping stratum."""
    total = cfg.n_reps if n_reps is None else n_reps

    def run_chunk(idx: np.ndarray):
        theta, psi = _draw_parameters(cfg, idx)
        b = simulate_batch(cfg.design, theta, cfg.master_seed, idx, offset=2, psi=psi)
        return _moments(theta), _moments(theta[b.x == 1]), _moments(theta[b.x == 0])

    res = _map(run_chunk, list(_chunks(total)), workers)
    m_all, se_all = _mean_se(*_combine([r[0] for r in res]))
    cont = _combine([r[1] for r in res])
    stop = _combine([r[2] for r in res])
    m_c, se_c = _mean_se(*cont)
    m_s, se_s = _mean_se(*stop)
    return SelectionShift(
        m_all, m_c, m_s, se_all, se_c, se_s, cont[0], stop[0],
        expected_theta_given_x(cfg, 1), expected_theta_given_x(cfg, 0), expected_retention(cfg, 1),
    )


# ---------------------------------------------------------------------------
# Monte Carlo check of the bias formulas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BiasStudy:
    closed: BiasReport
    n_reps: int
    mc_marginal_mean: float
    mc_marginal_se: float
    mc_cond_mean_stop: float | None
    mc_cond_stop_se: float | None
    mc_cond_mean_continue: float | None
    mc_cond_continue_se: float | None
    mc_continuation_prob: float
    mc_continuation_se: float
    n_stop: int
    n_continue: int

    def comparisons(self) -> dict[str, tuple[float | None, float | None, float | None]]:
        """``name -> (closed form, MC estimate, MC standard error)``."""
        c = self.closed
        return {
            "marginal_mean": (c.marginal_mean, self.mc_marginal_mean, self.mc_marginal_se),
            "cond_mean_stop": (c.cond_mean_stop, self.mc_cond_mean_stop, self.mc_cond_stop_se),
            "cond_mean_continue": (c.cond_mean_continue, self.mc_cond_mean_continue, self.mc_cond_continue_se),
            "continuation_prob": (c.continuation_prob, self.mc_continuation_prob, self.mc_continuation_se),
        }

    def z_scores(self) -> dict[str, float | None]:
        out = {}
        for k, (cf, mc, se) in self.comparisons().items():
            if cf is None or mc is None:
                out[k] = None
            elif se == 0:
                out[k] = 0.0 if mc == cf else math.inf
            else:
                out[k] = (mc - cf) / se
        return out

    def to_dict(self) -> dict:
        out = {"closed_form": asdict(self.closed)}
        out.update({k: v for k, v in asdict(self).items() if k != "closed"})
        out["z_scores"] = self.z_scores()
        return out


def bias_mc_study(theta: float, design: DesignConfig, n_reps: int, seed: int, workers: int = 1) -> BiasStudy:
    """Monte Carlo estimates of the MLE's expectations beside their closed forms.

    Replicate ``i`` is ``simulate_trial(design, theta, RngStream(seed, i))``.
    """
    if n_reps < 10_000:
        raise DomainError("use at least 10^4 replicates")

    def run_chunk(idx: np.ndarray):
        b = simulate_batch(design, theta, seed, idx)
        return _moments(b.ybar), _moments(b.ybar[b.x == 0]), _moments(b.ybar[b.x == 1])

    res = _map(run_chunk, list(_chunks(n_reps, 1 << 16)), workers)
    m, se = _mean_se(*_combine([r[0] for r in res]))
    stop, cont = _combine([r[1] for r in res]), _combine([r[2] for r in res])
    ms, ses = _mean_se(*stop)
    mc, sec = _mean_se(*cont)
    p = cont[0] / n_reps
    return BiasStudy(
        closed=bias_report(theta, design),
        n_reps=n_reps,
        mc_marginal_mean=m,
        mc_marginal_se=se,
        mc_cond_mean_stop=ms,
        mc_cond_stop_se=ses,
        mc_cond_mean_continue=mc,
        mc_cond_continue_se=sec,
        mc_continuation_prob=p,
        mc_continuation_se=math.sqrt(p * (1 - p) / n_reps),
        n_stop=stop[0],
        n_continue=cont[0],
    )


# ---------------------------------------------------------------------------
# Greedy design: naive vs full-data posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GreedyDemo:
    """SBC of three Beta-prior posteriors for the greedy design.

    ``naive`` updates on the retained prefix as if its size had been fixed,
    ``full`` on all raw outcomes, and ``observed`` (optional) on the retained
    prefix together with the event that the discarded outcomes never raised
    the running mean.
    """

    naive: UniformityReport
    full: UniformityReport
    observed: UniformityReport | None
    mean_retained: float
    mean_retained_se: float
    mean_p: float
    mean_p_se: float

    def to_dict(self) -> dict:
        return {
            "naive": self.naive.to_dict(),
            "full": self.full.to_dict(),
            "observed": None if self.observed is None else self.observed.to_dict(),
            "mean_retained": self.mean_retained,
            "mean_retained_se": self.mean_retained_se,
            "mean_p": self.mean_p,
            "mean_p_se": self.mean_p_se,
        }


def _observed_pit(p: float, ones: int, n0: int, n_total: int, alpha: float, beta: float) -> float:
    # posterior is a Beta mixture: prior x prefix x sum_j c_j p^j (1-p)^(rest-j)
    rest = n_total - n0
    c = admissible_suffix_counts(ones, n0, rest)
    j = np.nonzero(c)[0]
    a_j = alpha + ones + j
    b_j = beta + (n0 - ones) + (rest - j)
    logw = np.log(c[j]) + special.betaln(a_j, b_j)
    w = np.exp(logw - logw.max())
    return float(np.dot(w, special.betainc(a_j, b_j, p)) / w.sum())


def greedy_miscalibration_demo(
    n_total: int,
    alpha: float = 1.0,
    beta: float = 1.0,
    n_reps: int = 2000,
    seed: int = 0,
    include_observed: bool = False,
    workers: int = 1,
) -> GreedyDemo:
    """Draw ``p ~ Beta(alpha, beta)``, run the greedy design, and test calibration.

    Replicate ``i`` uses stream ``i``: counter 0 gives ``p`` (inverse CDF), the
    next ``n_total`` counters the Bernoulli responses.
    """
    if n_total < 1 or alpha <= 0 or beta <= 0 or n_reps < 1:
        raise DomainError("need n_total >= 1, alpha > 0, beta > 0, n_reps >= 1")

    def run_chunk(idx: np.ndarray):
        u = counter_uniforms(seed, idx, 0, n_total + 1)
        p = special.betaincinv(alpha, beta, u[:, 0])
        raw = (u[:, 1:] < p[:, None]).astype(np.int64)
        n0 = best_prefix(raw)
        csum = np.cumsum(raw, axis=1)
        ones = csum[np.arange(idx.size), n0 - 1]
        total = csum[:, -1]
        naive = special.betainc(alpha + ones, beta + n0 - ones, p)
        full = special.betainc(alpha + total, beta + n_total - total, p)
        obs = None
        if include_observed:
            obs = np.array([_observed_pit(p[i], int(ones[i]), int(n0[i]), n_total, alpha, beta) for i in range(idx.size)])
        return naive, full, obs, ones / n0, p

    res = _map(run_chunk, list(_chunks(n_reps, 1024)), workers)
    naive = np.concatenate([r[0] for r in res])
    full = np.concatenate([r[1] for r in res])
    obs = np.concatenate([r[2] for r in res]) if include_observed else None
    ret_mean = np.concatenate([r[3] for r in res])
    ps = np.concatenate([r[4] for r in res])
    return GreedyDemo(
        naive=uniformity_report(naive),
        full=uniformity_report(full),
        observed=None if obs is None else uniformity_report(obs),
        mean_retained=float(ret_mean.mean()),
        mean_retained_se=float(ret_mean.std(ddof=1) / math.sqrt(n_reps)) if n_reps > 1 else math.inf,
        mean_p=float(ps.mean()),
        mean_p_se=float(ps.std(ddof=1) / math.sqrt(n_reps)) if n_reps > 1 else math.inf,
    )


# ---------------------------------------------------------------------------
# Empirical-Bayes equivalence
# ---------------------------------------------------------------------------


def eb_equivalence_check(summary: TrialSummary, design: DesignConfig, a_shift: float = 0.0) -> float:
    """Gap between the Bayesian correction term and the frequentist correction.

    Uses the flat effect prior with ``b = ybar1 / (2 ybar)``,
    ``omega = b sigma / sqrt(2n)`` and ``a = b psi (+ a_shift)``.
    """
    b = empirical_bayes_b(summary)
    dp = DesignPrior(a=b * design.psi + a_shift, b=b, omega=b * design.sigma / math.sqrt(2 * design.n))
    post = hier_posterior(summary, ThetaPrior(flat=True), design.with_investigator("B"), dp)
    bayes = correction_term(post)
    freq = bias_corrected_estimate(summary, design) - summary.ybar
    return abs(bayes - freq)

"""The two-investigator trial: design, simulation, likelihoods and the greedy design.

Investigator A runs a fixed design of ``2n`` outcomes. Investigator B looks at
the first ``n`` outcomes and stops when their mean exceeds ``psi``; otherwise
another ``n`` outcomes are collected. Both share the Gaussian sampling model
``Y_i ~ N(theta, sigma^2)`` with known ``sigma``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import special

from .errors import DomainError, InconsistentDataError
from .stats_core import RngStream, counter_uniforms, norm_quantile

Investigator = Literal["A", "B"]

__all__ = [
    "BatchSummary",
    "DesignConfig",
    "GreedyTrialData",
    "TrialData",
    "TrialSummary",
    "admissible_suffix_counts",
    "best_prefix",
    "check_likelihood_proportionality",
    "continues",
    "greedy_likelihood_deviation",
    "greedy_log_likelihood",
    "log_likelihood",
    "read_trial_csv",
    "simulate_batch",
    "simulate_greedy",
    "simulate_trial",
    "format_trial_csv",
    "parse_trial_csv",
    "summarize",
    "table1",
    "write_trial_csv",
]


@dataclass(frozen=True)
class DesignConfig:
    n: int
    sigma: float
    psi: float
    investigator: Investigator = "B"

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError("sigma must be positive and finite")
        if math.isnan(self.psi):
            raise DomainError("psi must not be NaN")
        if self.investigator not in ("A", "B"):
            raise DomainError("investigator must be 'A' or 'B'")

    def with_investigator(self, investigator: Investigator) -> "DesignConfig":
        return DesignConfig(self.n, self.sigma, self.psi, investigator)


def continues(ybar1, psi, investigator: Investigator = "B"):
    """Continuation indicator ``x``; a first-stage mean equal to ``psi`` continues."""
    if investigator == "A":
        return np.ones_like(np.asarray(ybar1), dtype=np.int64)
    return (np.asarray(ybar1) <= psi).astype(np.int64)


@dataclass(frozen=True)
class TrialData:
    y1: np.ndarray
    y2: np.ndarray | None
    x: int

    def __post_init__(self) -> None:
        y1 = np.asarray(self.y1, dtype=float)
        object.__setattr__(self, "y1", y1)
        if y1.ndim != 1 or y1.size == 0:
            raise DomainError("y1 must be a non-empty vector")
        if self.x not in (0, 1):
            raise DomainError("x must be 0 or 1")
        if self.y2 is None:
            if self.x == 1:
                raise DomainError("x = 1 requires second-stage outcomes")
        else:
            y2 = np.asarray(self.y2, dtype=float)
            object.__setattr__(self, "y2", y2)
            if self.x == 0:
                raise DomainError("x = 0 but second-stage outcomes are present")
            if y2.shape != y1.shape:
                raise DomainError("y1 and y2 must have the same length")

    @property
    def n(self) -> int:
        return self.y1.size

    def outcomes(self) -> np.ndarray:
        return self.y1 if self.y2 is None else np.concatenate([self.y1, self.y2])


@dataclass(frozen=True)
class TrialSummary:
    ybar1: float
    ybar: float
    x: int


def summarize(data: TrialData) -> TrialSummary:
    ybar1 = math.fsum(data.y1) / data.n
    if data.x == 0:
        return TrialSummary(ybar1, ybar1, 0)
    both = data.outcomes()
    return TrialSummary(ybar1, math.fsum(both) / both.size, 1)


def simulate_trial(design: DesignConfig, theta: float, rng: RngStream) -> TrialData:
    """One trial under ``design`` at true effect ``theta``.

    Always consumes ``2n`` normals from ``rng`` (the second stage is drawn and
    discarded when B stops), so A and B fed the same stream see the same
    first-stage data.
    """
    z = rng.normal(size=2 * design.n)
    y = theta + design.sigma * z
    y1, y2 = y[: design.n], y[design.n :]
    x = int(continues(y1.mean(), design.psi, design.investigator))
    return TrialData(y1, y2 if x else None, x)


@dataclass(frozen=True)
class BatchSummary:
    """Summaries of many trials, one entry per replicate."""

    ybar1: np.ndarray
    ybar: np.ndarray
    x: np.ndarray


def simulate_batch(
    design: DesignConfig,
    theta,
    master_seed: int,
    stream_indices,
    offset: int = 0,
    psi=None,
) -> BatchSummary:
    """Vectorised :func:`simulate_trial` over many streams.

    Replicate ``i`` reads counters ``offset .. offset + 2n - 1`` of stream
    ``stream_indices[i]``; with ``offset=0`` it reproduces
    ``simulate_trial(design, theta[i], RngStream(master_seed, stream_indices[i]))``.
    ``theta`` and ``psi`` broadcast against the replicates; ``psi`` defaults
    to ``design.psi``.
    """
    streams = np.atleast_1d(np.asarray(stream_indices))
    n = design.n
    z = norm_quantile(counter_uniforms(master_seed, streams, offset, 2 * n))
    theta = np.broadcast_to(np.asarray(theta, dtype=float), streams.shape)
    psi = design.psi if psi is None else np.broadcast_to(np.asarray(psi, dtype=float), streams.shape)
    y = theta[:, None] + design.sigma * z
    ybar1 = y[:, :n].sum(axis=1) / n
    x = continues(ybar1, psi, design.investigator)
    ybar_full = y.sum(axis=1) / (2 * n)
    ybar = np.where(x == 1, ybar_full, ybar1)
    return BatchSummary(ybar1, ybar, x)


def log_likelihood(data: TrialData, theta, design: DesignConfig, include_design_factor: bool = False):
    """Gaussian log-likelihood of the observed outcomes, optionally with the design factor.

    The design factor ``P(X = x | history)`` does not involve ``theta``: it is 1
    for data that the design could have produced and 0 otherwise. Impossible
    data raises :class:`InconsistentDataError` when the factor is included.
    """
    if data.n != design.n:
        raise DomainError(f"data has {data.n} first-stage outcomes, design expects {design.n}")
    if include_design_factor:
        expected = int(continues(data.y1.mean(), design.psi, design.investigator))
        if expected != data.x:
            raise InconsistentDataError(
                f"x={data.x} is impossible for investigator {design.investigator} with psi={design.psi}"
            )
    y = data.outcomes()
    th = np.asarray(theta, dtype=float)
    resid = y[None, :] - np.atleast_1d(th)[:, None]
    ll = -0.5 * y.size * math.log(2 * math.pi * design.sigma**2) - 0.5 * (resid**2).sum(axis=1) / design.sigma**2
    return float(ll[0]) if th.ndim == 0 else ll


def check_likelihood_proportionality(
    data: TrialData, design_a: DesignConfig, design_b: DesignConfig, theta_grid
) -> float:
    """Largest departure of ``log L_B - log L_A`` from its value at the first grid point."""
    grid = np.asarray(theta_grid, dtype=float)
    diff = log_likelihood(data, grid, design_b, True) - log_likelihood(data, grid, design_a, True)
    return float(np.max(np.abs(diff - diff[0])))


# ---------------------------------------------------------------------------
# Greedy (not well-behaved) design
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GreedyTrialData:
    n_total: int
    raw: np.ndarray
    n0: int

    @property
    def retained(self) -> np.ndarray:
        return self.raw[: self.n0]


def best_prefix(raw) -> np.ndarray | int:
    """Length of the shortest prefix with the largest running mean.

    Works row-wise on 2-D input. Equal fractions such as 1/3 and 2/6 round to
    the same double, so ``argmax`` (first occurrence) breaks ties exactly.
    """
    raw = np.asarray(raw)
    i = np.arange(1, raw.shape[-1] + 1)
    n0 = np.argmax(np.cumsum(raw, axis=-1) / i, axis=-1) + 1
    return int(n0) if raw.ndim == 1 else n0


def simulate_greedy(n_total: int, p: float, rng: RngStream) -> GreedyTrialData:
    """``n_total`` Bernoulli(p) responses, keeping only the best-mean prefix."""
    if n_total < 1:
        raise DomainError("n_total must be at least 1")
    if not 0.0 <= p <= 1.0:
        raise DomainError("p must lie in [0, 1]")
    raw = rng.bernoulli(p, n_total)
    return GreedyTrialData(n_total, raw, best_prefix(raw))


def admissible_suffix_counts(ones: int, n0: int, n_rest: int) -> np.ndarray:
    """Number of binary suffixes with ``j`` ones that never lift the running mean.

    Entry ``j`` counts length-``n_rest`` sequences whose partial sums satisfy
    ``(ones + S_k) / (n0 + k) <= ones / n0`` for every ``k``. The discarded
    outcomes then have probability ``sum_j c_j p^j (1 - p)^(n_rest - j)``.
    Counts are exact in float64 up to 2**53.
    """
    counts = np.zeros(n_rest + 1)
    counts[0] = 1.0
    for k in range(1, n_rest + 1):
        nxt = counts.copy()
        nxt[1:] += counts[:-1]
        nxt[(ones * k) // n0 + 1 :] = 0.0
        counts = nxt
    return counts


def greedy_log_likelihood(data: GreedyTrialData, p, kind: str = "naive"):
    """Log-likelihood of a greedy trial as a function of the response rate ``p``.

    ``kind``:
      * ``"naive"`` - the retained prefix treated as a fixed-size sample;
      * ``"full"`` - all ``n_total`` raw outcomes;
      * ``"observed"`` - the observed prefix together with the event that the
        discarded outcomes never raised the running mean, i.e. the exact
        likelihood of what the design reports.
    """
    pv = np.atleast_1d(np.asarray(p, dtype=float))
    if ((pv <= 0) | (pv >= 1)).any():
        raise DomainError("p must lie strictly inside (0, 1)")
    if kind == "full":
        ones, size = int(data.raw.sum()), data.n_total
    else:
        ones, size = int(data.retained.sum()), data.n0
    ll = ones * np.log(pv) + (size - ones) * np.log1p(-pv)
    if kind == "observed":
        rest = data.n_total - data.n0
        c = admissible_suffix_counts(ones, data.n0, rest)
        j = np.nonzero(c)[0]
        terms = np.log(c[j])[None, :] + j[None, :] * np.log(pv)[:, None] + (rest - j)[None, :] * np.log1p(-pv)[:, None]
        ll = ll + special.logsumexp(terms, axis=1)
    elif kind not in ("naive", "full"):
        raise DomainError(f"unknown likelihood kind {kind!r}")
    return float(ll[0]) if np.ndim(p) == 0 else ll


def greedy_likelihood_deviation(data: GreedyTrialData, p_grid, reference: str = "full") -> float:
    """Same statistic as :func:`check_likelihood_proportionality`, naive vs ``reference``."""
    grid = np.asarray(p_grid, dtype=float)
    diff = greedy_log_likelihood(data, grid, reference) - greedy_log_likelihood(data, grid, "naive")
    return float(np.max(np.abs(diff - diff[0])))


# ---------------------------------------------------------------------------
# CSV layout: header y1,y2,x ; y2 blank when the trial stopped
# ---------------------------------------------------------------------------


def format_trial_csv(data: TrialData) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["y1", "y2", "x"])
    for i, v in enumerate(data.y1):
        w.writerow([repr(float(v)), "" if data.y2 is None else repr(float(data.y2[i])), data.x])
    return buf.getvalue()


def write_trial_csv(data: TrialData, path: str | Path) -> None:
    Path(path).write_text(format_trial_csv(data))


def parse_trial_csv(text: str) -> TrialData:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise DomainError("trial CSV has no rows")
    if set(rows[0]) != {"y1", "y2", "x"}:
        raise DomainError("trial CSV must have header y1,y2,x")
    try:
        y1 = [float(r["y1"]) for r in rows]
        xs = {int(r["x"]) for r in rows}
    except (TypeError, ValueError) as exc:
        raise DomainError(f"malformed trial CSV: {exc}") from exc
    if len(xs) != 1:
        raise DomainError("x must be constant down the file")
    x = xs.pop()
    if x == 0:
        if any(r["y2"] for r in rows):
            raise DomainError("stopped trial (x=0) must leave y2 blank")
        return TrialData(np.array(y1), None, 0)
    try:
        y2 = [float(r["y2"]) for r in rows]
    except (TypeError, ValueError) as exc:
        raise DomainError(f"malformed y2 column: {exc}") from exc
    return TrialData(np.array(y1), np.array(y2), x)


def read_trial_csv(path: str | Path) -> TrialData:
    return parse_trial_csv(Path(path).read_text())


def table1() -> TrialData:
    """The bundled worked-example data (n = 5, continued past the interim)."""
    from importlib import resources

    return parse_trial_csv(resources.files("seqparadox").joinpath("data/table1.csv").read_text())

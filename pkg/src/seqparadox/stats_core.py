"""Normal-family special functions, quadrature and counter-based random streams.

Everything downstream (bias formulas, posteriors, simulation) is built on
the handful of primitives here, so they carry the accuracy contracts:

* ``norm_cdf`` is accurate to ~1e-16 absolute on [-8, 8] (erfc based).
* ``integrate`` is an adaptive Gauss-Kronrod (7/15) rule used as the
  independent oracle for every closed form in the package.
* ``RngStream`` is keyed by ``(master_seed, stream_index)`` and produces the
  k-th uniform as a pure function of ``(master_seed, stream_index, k)``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from .errors import AccuracyError, DegenerateError, DomainError

__all__ = [
    "QuadratureResult",
    "RngStream",
    "counter_uniforms",
    "integrate",
    "log_norm_cdf",
    "norm_cdf",
    "norm_pdf",
    "norm_quantile",
    "probit_normal_integral",
    "truncated_normal_mean",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
TINY = 1e-300


def _as_array(z, name: str = "z") -> tuple[np.ndarray, bool]:
    arr = np.asarray(z, dtype=float)
    if np.isnan(arr).any() or np.isinf(arr).any():
        raise DomainError(f"{name} must be finite")
    return arr, arr.ndim == 0


def _ret(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


def norm_pdf(z):
    """Standard normal density."""
    arr, scalar = _as_array(z)
    return _ret(np.exp(-0.5 * arr * arr - _LOG_SQRT_2PI), scalar)


def norm_cdf(z):
    """Standard normal CDF via the complementary error function.

    ``Phi(z) = erfc(-z / sqrt(2)) / 2`` keeps full relative precision in the
    lower tail, which the bias and posterior formulas rely on.
    """
    arr, scalar = _as_array(z)
    out = np.clip(special.ndtr(arr), 0.0, 1.0)
    return _ret(out, scalar)


def log_norm_cdf(z):
    """``log Phi(z)``, finite far into the lower tail."""
    arr = np.asarray(z, dtype=float)
    if np.isnan(arr).any():
        raise DomainError("z must not be NaN")
    return _ret(special.log_ndtr(arr), arr.ndim == 0)


def norm_quantile(p):
    """Inverse of :func:`norm_cdf` on the open unit interval."""
    arr = np.asarray(p, dtype=float)
    if np.isnan(arr).any() or (arr <= 0.0).any() or (arr >= 1.0).any():
        raise DomainError("p must lie strictly inside (0, 1)")
    return _ret(special.ndtri(arr), arr.ndim == 0)


def _pdf_inf(z: float) -> float:
    return 0.0 if math.isinf(z) else math.exp(-0.5 * z * z - _LOG_SQRT_2PI)


def truncated_normal_mean(mu: float, sigma: float, a: float = -math.inf, b: float = math.inf) -> float:
    """Mean of ``N(mu, sigma^2)`` restricted to ``[a, b]``.

    Infinite bounds are allowed. The probability mass of the interval is
    formed on whichever side of the mean keeps it away from cancellation;
    a mass below 1e-300 raises :class:`DegenerateError`.
    """
    if not (math.isfinite(mu) and math.isfinite(sigma)) or sigma <= 0:
        raise DomainError("mu must be finite and sigma positive")
    if math.isnan(a) or math.isnan(b) or not a < b:
        raise DomainError("require a < b")
    alpha = (a - mu) / sigma
    beta = (b - mu) / sigma
    if alpha > 0:
        # upper tail: Phi(beta) - Phi(alpha) == Phi(-alpha) - Phi(-beta)
        mass = float(special.ndtr(-alpha) - special.ndtr(-beta))
    else:
        mass = float(special.ndtr(beta) - special.ndtr(alpha))
    if mass < TINY:
        raise DegenerateError(f"truncation interval [{a}, {b}] carries no mass")
    return mu + sigma * (_pdf_inf(alpha) - _pdf_inf(beta)) / mass


def probit_normal_integral(a: float, b: float, c: float, omega: float, mu: float, sigma: float, sign: int = 1) -> float:
    """``E[Phi(sign * (a + b U - c) / omega)]`` for ``U ~ N(mu, sigma^2)``.

    Closed form ``Phi(sign * (a + b mu - c) / sqrt(omega^2 + sigma^2 b^2))``.
    """
    if omega <= 0 or not math.isfinite(omega):
        raise DomainError("omega must be positive and finite")
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    scale = math.hypot(omega, sigma * b)
    return norm_cdf(sign * (a + b * mu - c) / scale)


# ---------------------------------------------------------------------------
# Adaptive quadrature
# ---------------------------------------------------------------------------

_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
# 15 abscissae on [-1, 1]: -x_0..-x_6, 0, x_6..x_0
_NODES = np.concatenate([-_XGK[:-1], [0.0], _XGK[:-1][::-1]])
_KW = np.concatenate([_WGK[:-1], [_WGK[-1]], _WGK[:-1][::-1]])
_GW = np.zeros(15)
_GW[[1, 3, 5]] = _WG[:3]
_GW[[13, 11, 9]] = _WG[:3]
_GW[7] = _WG[3]


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abs_error_estimate: float
    evaluations: int


def _evaluator(f: Callable) -> Callable[[np.ndarray], np.ndarray]:
    def call(x: np.ndarray) -> np.ndarray:
        try:
            y = np.asarray(f(x), dtype=float)
            if y.shape == x.shape:
                return y
        except (TypeError, ValueError):
            pass
        return np.array([float(f(float(v))) for v in x.ravel()]).reshape(x.shape)

    return call


def integrate(f: Callable, lo: float, hi: float, tol: float = 1e-10, max_evals: int = 1_000_000) -> QuadratureResult:
    """Adaptive Gauss-Kronrod quadrature of ``f`` over ``[lo, hi]``.

    ``f`` may be vectorised (preferred) or scalar. The panel with the largest
    Kronrod/Gauss discrepancy is bisected until the summed discrepancy is at
    most ``tol`` (absolute). Running out of ``max_evals`` raises
    :class:`AccuracyError` carrying the best estimate.
    """
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise DomainError("integration bounds must be finite with lo < hi")
    if tol <= 0:
        raise DomainError("tol must be positive")
    fv = _evaluator(f)

    def panels(bounds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        centre = 0.5 * (bounds[:, 0] + bounds[:, 1])
        half = 0.5 * (bounds[:, 1] - bounds[:, 0])
        x = centre[:, None] + half[:, None] * _NODES[None, :]
        y = fv(x)
        if not np.isfinite(y).all():
            raise DomainError("integrand is not finite on the integration range")
        kron = half * (y @ _KW)
        gauss = half * (y @ _GW)
        return kron, np.abs(kron - gauss)

    kron, err = panels(np.array([[lo, hi]]))
    evals = 15
    heap = [(-err[0], lo, hi, kron[0])]
    total, total_err = float(kron[0]), float(err[0])
    steps = 0
    while total_err > tol:
        if evals + 30 > max_evals:
            raise AccuracyError(
                f"quadrature did not reach tol={tol:g} within {max_evals} evaluations",
                estimate=total,
                error=total_err,
            )
        neg_e, a, b, k = heapq.heappop(heap)
        m = 0.5 * (a + b)
        kk, ee = panels(np.array([[a, m], [m, b]]))
        evals += 30
        steps += 1
        heapq.heappush(heap, (-ee[0], a, m, kk[0]))
        heapq.heappush(heap, (-ee[1], m, b, kk[1]))
        total += kk[0] + kk[1] - k
        total_err += ee[0] + ee[1] + neg_e
        if steps % 64 == 0 or total_err <= tol:
            # resync: incremental updates drift once many panels are live
            total = math.fsum(item[3] for item in heap)
            total_err = math.fsum(-item[0] for item in heap)
    return QuadratureResult(total, total_err, evals)


# ---------------------------------------------------------------------------
# Counter-based random streams
# ---------------------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C_STREAM = np.uint64(0xD1B54A32D192ED03)
_C_KEY2 = np.uint64(0x8CB92BA72F3D8DD7)
_U64_MAX = 2**64 - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser; a bijection on uint64
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= _U64_MAX:
        raise DomainError("seeds must be unsigned 64-bit integers")
    return seed


def _stream_keys(master_seed: int, streams: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    seed_key = _mix64(np.array([_check_seed(master_seed)], dtype=np.uint64))
    key = _mix64(seed_key ^ _mix64(streams * _GOLDEN + _C_STREAM))
    return key, _mix64(key ^ _C_KEY2)


def counter_uniforms(master_seed: int, stream_indices, start: int, count: int) -> np.ndarray:
    """Uniforms for counters ``start..start+count-1`` of each listed stream.

    Returns shape ``(len(stream_indices), count)`` with values in the open
    interval (0, 1) on a 2**-53 lattice. Row ``i`` equals what
    ``RngStream(master_seed, stream_indices[i])`` yields after skipping
    ``start`` draws.
    """
    streams = np.atleast_1d(np.asarray(stream_indices)).astype(np.uint64)
    if start < 0 or count < 0:
        raise DomainError("start and count must be non-negative")
    key, key2 = _stream_keys(master_seed, streams)
    ctr = np.arange(start, start + count, dtype=np.uint64)
    z = _mix64(key[:, None] + ctr[None, :] * _GOLDEN)
    z = _mix64(z ^ key2[:, None])
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


@dataclass
class RngStream:
    """Deterministic random stream keyed by ``(master_seed, stream_index)``.

    The stream keeps a counter of consumed uniforms. Streams are single-owner:
    give each replicate or chain its own ``stream_index``.
    """

    master_seed: int
    stream_index: int
    counter: int = field(default=0)

    def __post_init__(self) -> None:
        self.master_seed = _check_seed(self.master_seed)
        self.stream_index = _check_seed(self.stream_index)

    def uniform(self, size: int | None = None):
        k = 1 if size is None else int(size)
        u = counter_uniforms(self.master_seed, [self.stream_index], self.counter, k)[0]
        self.counter += k
        return float(u[0]) if size is None else u

    def normal(self, loc: float = 0.0, scale: float = 1.0, size: int | None = None):
        z = special.ndtri(self.uniform(1 if size is None else size))
        out = loc + scale * z
        return float(out[0]) if size is None else out

    def bernoulli(self, p: float, size: int) -> np.ndarray:
        return (self.uniform(size) < p).astype(np.int64)

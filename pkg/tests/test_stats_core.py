import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqparadox.errors import AccuracyError, DegenerateError, DomainError
from seqparadox.stats_core import (
    RngStream,
    counter_uniforms,
    integrate,
    log_norm_cdf,
    norm_cdf,
    norm_pdf,
    norm_quantile,
    probit_normal_integral,
    truncated_normal_mean,
)

mp.mp.dps = 40


# values from mpmath at 40 digits
@pytest.mark.parametrize(
    "z, pdf, cdf",
    [
        (1.118034, 0.2135384122, None),
        (-1.118034, None, 0.1317762362),
        (1.96, None, 0.9750021049),
    ],
)
def test_normal_functions_reference_values(z, pdf, cdf):
    if pdf is not None:
        assert norm_pdf(z) == pytest.approx(pdf, abs=1e-10)
    if cdf is not None:
        assert norm_cdf(z) == pytest.approx(cdf, abs=1e-10)


@pytest.mark.parametrize("z", [-37.5, -20.0, -8.0, -1.0, 0.0, 0.5, 3.0, 8.0])
def test_norm_cdf_matches_mpmath_relative(z):
    exact = float(mp.ncdf(z))
    assert norm_cdf(z) == pytest.approx(exact, rel=1e-13)
    assert log_norm_cdf(z) == pytest.approx(float(mp.log(mp.ncdf(z))), rel=1e-13)


def test_deep_lower_tail_log_cdf_stays_finite():
    assert math.isfinite(log_norm_cdf(-1e3))
    assert log_norm_cdf(-1e3) == pytest.approx(float(mp.log(mp.ncdf(-1000))), rel=1e-12)


@given(st.floats(-40, 40))
def test_cdf_symmetry_and_bounds(z):
    a, b = norm_cdf(z), norm_cdf(-z)
    assert 0.0 <= a <= 1.0
    assert a + b == pytest.approx(1.0, abs=1e-15)


@given(st.floats(1e-12, 1 - 1e-12))
def test_quantile_inverts_cdf(p):
    assert norm_cdf(norm_quantile(p)) == pytest.approx(p, rel=1e-12, abs=1e-300)


def test_vector_inputs_return_arrays():
    z = np.array([-1.0, 0.0, 1.0])
    assert isinstance(norm_cdf(z), np.ndarray)
    assert isinstance(norm_cdf(0.3), float)
    np.testing.assert_allclose(norm_pdf(z), np.exp(-z * z / 2) / math.sqrt(2 * math.pi), rtol=1e-15)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(DomainError):
        norm_cdf(bad)
    with pytest.raises(DomainError):
        norm_pdf(bad)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_quantile_domain(p):
    with pytest.raises(DomainError):
        norm_quantile(p)


# --- truncated normal -------------------------------------------------------


def test_truncated_mean_half_line():
    assert truncated_normal_mean(0.0, 1.0, 0.0) == pytest.approx(0.7978845608028654, abs=1e-14)


def test_truncated_mean_interval_mpmath():
    # N(0.5, 1.2^2) on [1, 2]; mpmath quadrature
    assert truncated_normal_mean(0.5, 1.2, 1.0, 2.0) == pytest.approx(1.4438884365085003, abs=1e-12)


def test_truncated_mean_far_tail():
    # mass ~1e-198, still representable; mpmath phi(30) / Phi(-30)
    assert truncated_normal_mean(0.0, 1.0, 30.0) == pytest.approx(30.033259667433677, rel=1e-12)


def test_truncated_mean_no_mass_raises():
    with pytest.raises(DegenerateError):
        truncated_normal_mean(0.0, 1.0, 40.0)


def test_truncated_mean_bad_interval():
    with pytest.raises(DomainError):
        truncated_normal_mean(0.0, 1.0, 2.0, 1.0)
    with pytest.raises(DomainError):
        truncated_normal_mean(0.0, 0.0)


@given(
    st.floats(-5, 5),
    st.floats(0.1, 5),
    st.floats(-4, 4),
    st.floats(0.01, 4),
)
def test_truncated_mean_inside_interval(mu, sigma, lo, width):
    hi = lo + width
    try:
        m = truncated_normal_mean(mu, sigma, lo, hi)
    except DegenerateError:
        mass = mp.ncdf((hi - mu) / mp.mpf(sigma)) - mp.ncdf((lo - mu) / mp.mpf(sigma))
        assert mass < 1e-300
        return
    assert lo - 1e-9 <= m <= hi + 1e-9


# --- probit-normal integral ---------------------------------------------------


def test_probit_normal_integral_mpmath():
    # E[Phi((0.3 + 1.7 U - 0.2) / 0.4)], U ~ N(0.5, 1.3^2)
    assert probit_normal_integral(0.3, 1.7, 0.2, 0.4, 0.5, 1.3) == pytest.approx(0.66384931164514211, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(-2, 2),
    st.floats(-2, 2),
    st.floats(-2, 2),
    st.floats(0.1, 2),
    st.floats(-2, 2),
    st.floats(0.1, 2),
    st.sampled_from([1, -1]),
)
def test_probit_normal_integral_quadrature(a, b, c, omega, mu, sigma, sign):
    f = lambda u: norm_cdf(sign * (a + b * u - c) / omega) * norm_pdf((u - mu) / sigma) / sigma  # noqa: E731
    q = integrate(f, mu - 12 * sigma, mu + 12 * sigma, tol=1e-13).value
    assert probit_normal_integral(a, b, c, omega, mu, sigma, sign) == pytest.approx(q, abs=1e-11)


def test_probit_normal_integral_sign_complement():
    args = (0.2, -0.7, 0.1, 0.5, 0.3, 1.1)
    assert probit_normal_integral(*args, 1) + probit_normal_integral(*args, -1) == pytest.approx(1.0, abs=1e-15)


def test_probit_normal_integral_domain():
    with pytest.raises(DomainError):
        probit_normal_integral(0, 1, 0, 0.0, 0, 1)
    with pytest.raises(DomainError):
        probit_normal_integral(0, 1, 0, 1.0, 0, 1, sign=2)


# --- quadrature ---------------------------------------------------------------


def test_integrate_polynomial_and_gaussian():
    assert integrate(lambda x: x**3 - x, 0.0, 2.0).value == pytest.approx(2.0, abs=1e-13)
    r = integrate(norm_pdf, -12.0, 12.0, tol=1e-14)
    assert r.value == pytest.approx(1.0, abs=1e-14)
    assert r.abs_error_estimate <= 1e-14
    assert r.evaluations % 15 == 0


def test_integrate_accepts_scalar_function():
    assert integrate(lambda x: math.sin(x), 0.0, math.pi).value == pytest.approx(2.0, abs=1e-12)


def test_integrate_sharp_step():
    f = lambda x: norm_cdf((x - 0.3) / 1e-4)  # noqa: E731
    assert integrate(f, -1.0, 1.0, tol=1e-12).value == pytest.approx(0.7, abs=1e-10)


def test_integrate_budget_exhaustion_reports_estimate():
    with pytest.raises(AccuracyError) as info:
        integrate(lambda x: np.sin(1.0 / x), 1e-6, 1.0, tol=1e-15, max_evals=300)
    assert math.isfinite(info.value.estimate)


def test_integrate_domain():
    with pytest.raises(DomainError):
        integrate(norm_pdf, 1.0, 0.0)
    with pytest.raises(DomainError):
        integrate(norm_pdf, 0.0, math.inf)


# --- counter-based random streams ----------------------------------------------


def test_stream_is_deterministic_and_counter_based():
    a = RngStream(42, 3)
    first = a.uniform(5)
    rest = a.uniform(3)
    b = RngStream(42, 3)
    np.testing.assert_array_equal(b.uniform(8), np.concatenate([first, rest]))
    np.testing.assert_array_equal(counter_uniforms(42, [3], 5, 3)[0], rest)
    assert a.counter == 8


def test_streams_differ_and_are_open_interval():
    u = counter_uniforms(7, np.arange(50), 0, 2000)
    assert u.shape == (50, 2000)
    assert (u > 0).all() and (u < 1).all()
    assert len({tuple(row[:4]) for row in u}) == 50
    assert not np.array_equal(counter_uniforms(7, [0], 0, 10), counter_uniforms(8, [0], 0, 10))


def test_stream_uniformity_and_independence():
    from scipy import stats

    u = counter_uniforms(2024, np.arange(20), 0, 5000).ravel()
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    x = counter_uniforms(2024, [0], 0, 100_000)[0]
    lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert abs(lag1) < 4 / math.sqrt(x.size)
    # neighbouring streams are uncorrelated
    y = counter_uniforms(2024, [1], 0, 100_000)[0]
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / math.sqrt(x.size)


def test_normal_and_bernoulli_moments():
    z = RngStream(1, 0).normal(2.0, 3.0, 200_000)
    assert abs(z.mean() - 2.0) < 4 * 3.0 / math.sqrt(z.size)
    assert abs(z.std() - 3.0) < 0.03
    b = RngStream(1, 1).bernoulli(0.3, 100_000)
    assert set(np.unique(b)) <= {0, 1}
    assert abs(b.mean() - 0.3) < 4 * math.sqrt(0.21 / b.size)


def test_scalar_draws():
    s = RngStream(5, 0)
    assert isinstance(s.uniform(), float)
    assert isinstance(s.normal(), float)
    assert s.counter == 2


def test_seed_range():
    RngStream(2**64 - 1, 0).uniform()
    with pytest.raises(DomainError):
        RngStream(-1, 0)
    with pytest.raises(DomainError):
        RngStream(2**64, 0)

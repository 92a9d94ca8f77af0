import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqparadox.errors import DomainError, InconsistentDataError
from seqparadox.stats_core import RngStream
from seqparadox.trial import (
    DesignConfig,
    GreedyTrialData,
    TrialData,
    admissible_suffix_counts,
    best_prefix,
    check_likelihood_proportionality,
    continues,
    format_trial_csv,
    greedy_likelihood_deviation,
    greedy_log_likelihood,
    log_likelihood,
    parse_trial_csv,
    read_trial_csv,
    simulate_batch,
    simulate_greedy,
    simulate_trial,
    summarize,
    write_trial_csv,
)


def test_example_fixture(example_data, example_summary):
    assert example_data.n == 5 and example_data.x == 1
    assert example_data.y1[0] == -0.0716906
    assert example_data.y2[-1] == 3.169979
    assert example_summary.ybar1 == pytest.approx(0.77265474, abs=1e-12)
    assert example_summary.ybar == pytest.approx(0.88023177, abs=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=0, sigma=1.0, psi=0.0),
        dict(n=2.5, sigma=1.0, psi=0.0),
        dict(n=3, sigma=0.0, psi=0.0),
        dict(n=3, sigma=math.inf, psi=0.0),
        dict(n=3, sigma=1.0, psi=math.nan),
        dict(n=3, sigma=1.0, psi=0.0, investigator="C"),
    ],
)
def test_design_validation(kwargs):
    with pytest.raises(DomainError):
        DesignConfig(**kwargs)


def test_infinite_threshold_allowed():
    d = DesignConfig(3, 1.0, math.inf)
    assert continues(1e300, d.psi) == 1


def test_tie_at_threshold_continues():
    assert continues(1.0, 1.0, "B") == 1
    assert continues(np.nextafter(1.0, 2.0), 1.0, "B") == 0
    assert continues(50.0, 1.0, "A") == 1


def test_trial_data_validation():
    with pytest.raises(DomainError):
        TrialData(np.ones(3), None, 1)
    with pytest.raises(DomainError):
        TrialData(np.ones(3), np.ones(3), 0)
    with pytest.raises(DomainError):
        TrialData(np.ones(3), np.ones(2), 1)
    with pytest.raises(DomainError):
        TrialData(np.array([]), None, 0)
    with pytest.raises(DomainError):
        TrialData(np.ones(3), None, 2)


def test_summary_of_stopped_trial():
    s = summarize(TrialData(np.array([1.0, 2.0, 3.0]), None, 0))
    assert s.ybar1 == s.ybar == 2.0 and s.x == 0


def test_simulate_trial_same_stream_same_first_stage():
    d = DesignConfig(5, 2.0, 1.0)
    b = simulate_trial(d, 2.0, RngStream(9, 4))
    a = simulate_trial(d.with_investigator("A"), 2.0, RngStream(9, 4))
    np.testing.assert_array_equal(a.y1, b.y1)
    assert a.x == 1


def test_batch_matches_single_trials():
    d = DesignConfig(4, 1.5, 0.3)
    idx = np.arange(200)
    batch = simulate_batch(d, 0.2, 123, idx)
    for i in idx:
        s = summarize(simulate_trial(d, 0.2, RngStream(123, int(i))))
        assert s.x == batch.x[i]
        assert s.ybar1 == pytest.approx(batch.ybar1[i], abs=1e-14)
        assert s.ybar == pytest.approx(batch.ybar[i], abs=1e-14)


def test_batch_offset_and_per_replicate_threshold():
    d = DesignConfig(3, 1.0, 0.0)
    idx = np.arange(50)
    psi = np.linspace(-1, 1, 50)
    batch = simulate_batch(d, 0.0, 5, idx, offset=2, psi=psi)
    for i in (0, 17, 49):
        rng = RngStream(5, i, counter=2)
        s = summarize(simulate_trial(DesignConfig(3, 1.0, float(psi[i])), 0.0, rng))
        assert (s.x, s.ybar1) == (batch.x[i], pytest.approx(batch.ybar1[i], abs=1e-14))


def test_simulated_moments():
    d = DesignConfig(5, 2.0, math.inf)
    b = simulate_batch(d, 1.0, 3, np.arange(100_000))
    assert (b.x == 1).all()
    se = 2.0 / math.sqrt(10)
    assert abs(b.ybar.mean() - 1.0) < 4 * se / math.sqrt(b.ybar.size)
    assert b.ybar.std() == pytest.approx(se, rel=0.01)


# --- likelihoods ----------------------------------------------------------------


def test_log_likelihood_matches_scipy(example_data, example_design):
    from scipy import stats

    grid = np.linspace(-2, 3, 11)
    ll = log_likelihood(example_data, grid, example_design)
    ref = [stats.norm.logpdf(example_data.outcomes(), t, 2.0).sum() for t in grid]
    np.testing.assert_allclose(ll, ref, rtol=1e-13)
    assert isinstance(log_likelihood(example_data, 0.5, example_design), float)


def test_likelihoods_proportional_across_investigators(example_data, example_design):
    grid = np.linspace(-3, 5, 101)
    dev = check_likelihood_proportionality(example_data, example_design.with_investigator("A"), example_design, grid)
    assert dev <= 1e-12


def test_impossible_data_rejected(example_data):
    # ybar1 = 0.77 exceeds psi = 0.5, so B must have stopped
    d = DesignConfig(5, 2.0, 0.5)
    with pytest.raises(InconsistentDataError):
        log_likelihood(example_data, 0.0, d, include_design_factor=True)
    assert math.isfinite(log_likelihood(example_data, 0.0, d))


def test_sample_size_mismatch(example_data):
    with pytest.raises(DomainError):
        log_likelihood(example_data, 0.0, DesignConfig(4, 2.0, 1.0))


# --- CSV ------------------------------------------------------------------------


def test_csv_round_trip(tmp_path, example_data):
    path = tmp_path / "t.csv"
    write_trial_csv(example_data, path)
    back = read_trial_csv(path)
    np.testing.assert_array_equal(back.y1, example_data.y1)
    np.testing.assert_array_equal(back.y2, example_data.y2)
    stopped = TrialData(np.array([0.1, 1 / 3]), None, 0)
    text = format_trial_csv(stopped)
    assert text.splitlines()[1].endswith(",,0")
    back = parse_trial_csv(text)
    assert back.y2 is None and back.y1[1] == 1 / 3


@pytest.mark.parametrize(
    "text",
    [
        "",
        "a,b,c\n1,2,3\n",
        "y1,y2,x\n1,2,1\n1,,1\n",
        "y1,y2,x\n1,,0\n2,3,0\n",
        "y1,y2,x\n1,,0\n2,,1\n",
        "y1,y2,x\nfoo,1,1\n",
    ],
)
def test_malformed_csv(text):
    with pytest.raises(DomainError):
        parse_trial_csv(text)


# --- greedy design --------------------------------------------------------------


def test_best_prefix_examples():
    assert best_prefix([0, 1, 1, 0]) == 3
    assert best_prefix([1, 0, 1, 1]) == 1
    assert best_prefix([0, 0, 0]) == 1
    # 1/3 and 2/6 tie: the shorter prefix wins
    assert best_prefix([0, 0, 1, 0, 0, 1]) == 3
    np.testing.assert_array_equal(best_prefix(np.array([[0, 1], [1, 0]])), [2, 1])


@given(st.lists(st.integers(0, 1), min_size=1, max_size=30))
def test_best_prefix_brute_force(raw):
    from fractions import Fraction

    means = [Fraction(sum(raw[:k]), k) for k in range(1, len(raw) + 1)]
    assert best_prefix(raw) == means.index(max(means)) + 1


def _brute_counts(ones, n0, rest):
    out = np.zeros(rest + 1)
    for tail in itertools.product((0, 1), repeat=rest):
        s, ok = ones, True
        for k, v in enumerate(tail, 1):
            s += v
            if s * n0 > ones * (n0 + k):
                ok = False
                break
        if ok:
            out[sum(tail)] += 1
    return out


@pytest.mark.parametrize("ones, n0, rest", [(1, 3, 4), (2, 5, 6), (0, 1, 5), (3, 4, 7), (1, 1, 6), (2, 7, 8)])
def test_admissible_suffix_counts(ones, n0, rest):
    np.testing.assert_array_equal(admissible_suffix_counts(ones, n0, rest), _brute_counts(ones, n0, rest))


def test_observed_likelihood_sums_to_one_over_outcomes():
    # summing the observed-data probability over every reachable (prefix, n0) gives 1
    n_total, p = 7, 0.37
    total = 0.0
    seen = set()
    for raw in itertools.product((0, 1), repeat=n_total):
        n0 = best_prefix(list(raw))
        key = raw[:n0]
        if key in seen:
            continue
        seen.add(key)
        g = GreedyTrialData(n_total, np.array(raw), n0)
        total += math.exp(greedy_log_likelihood(g, p, "observed"))
    assert total == pytest.approx(1.0, abs=1e-13)


def test_greedy_naive_and_full_differ():
    grid = np.linspace(0.02, 0.98, 101)
    devs = [greedy_likelihood_deviation(simulate_greedy(50, 0.5, RngStream(5, i)), grid) for i in range(10)]
    assert max(devs) > 1e-3


def test_greedy_single_outcome_kinds_agree():
    g = simulate_greedy(1, 0.4, RngStream(0, 0))
    assert g.n0 == 1
    grid = np.linspace(0.1, 0.9, 9)
    np.testing.assert_allclose(greedy_log_likelihood(g, grid, "naive"), greedy_log_likelihood(g, grid, "full"))
    np.testing.assert_allclose(greedy_log_likelihood(g, grid, "observed"), greedy_log_likelihood(g, grid, "full"))


def test_greedy_domain():
    with pytest.raises(DomainError):
        simulate_greedy(0, 0.5, RngStream(0, 0))
    with pytest.raises(DomainError):
        simulate_greedy(5, 1.5, RngStream(0, 0))
    g = simulate_greedy(5, 0.5, RngStream(0, 0))
    with pytest.raises(DomainError):
        greedy_log_likelihood(g, 0.0)
    with pytest.raises(DomainError):
        greedy_log_likelihood(g, 0.5, "other")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.floats(0.05, 0.95), st.integers(0, 2**32))
def test_retained_prefix_mean_is_maximal(n_total, p, seed):
    g = simulate_greedy(n_total, p, RngStream(seed, 0))
    best = g.retained.mean()
    assert all(g.raw[:k].mean() <= best for k in range(1, n_total + 1))

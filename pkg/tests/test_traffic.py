import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from parksim import traffic as tr
from parksim.traffic import (
    PARKING_TIME, VACANT_TIME, MomentSet, SeriesDivergenceError, SumWeibullParams, WeibullParams,
)

E1 = WeibullParams(1.0, 1.0)


# ------------------------------------------------------------------ sampling


def test_sample_exponential_case():
    assert tr.sample_weibull(WeibullParams(1, 10), math.exp(-1)) == pytest.approx(10.0)


def test_sample_rayleigh_case():
    assert tr.sample_weibull(WeibullParams(2, 1), math.exp(-1)) == pytest.approx(1.0)


@pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5])
def test_sample_rejects_closed_endpoints(u):
    with pytest.raises(ValueError):
        tr.sample_weibull(WeibullParams(1, 1), u)


def test_sample_mean_matches_moment():
    rng = np.random.default_rng(11)
    x = tr.sample_weibull(PARKING_TIME, tr._open_uniforms(rng, 1_000_000))
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - tr.weibull_moment(PARKING_TIME, 1)) < 3 * se


def test_sample_shape_one_is_exponential():
    rng = np.random.default_rng(12)
    x = tr.sample_weibull(WeibullParams(1.0, 5.0), tr._open_uniforms(rng, 100_000))
    assert stats.kstest(x, "expon", args=(0, 5.0)).statistic < 0.01


@given(st.floats(0.1, 5), st.floats(0.1, 1e4), st.floats(1e-9, 1 - 1e-9))
def test_sample_positive(shape, scale, u):
    assert tr.sample_weibull(WeibullParams(shape, scale), u) > 0


def test_params_validated():
    with pytest.raises(ValueError):
        WeibullParams(0, 1)
    with pytest.raises(ValueError):
        SumWeibullParams(1, 1, -1)
    with pytest.raises(ValueError):
        MomentSet(1.0, 0.5, 1.0)


# ------------------------------------------------------------------ moments


def test_moment_exponential_mean():
    assert tr.weibull_moment(WeibullParams(1, 2), 1) == pytest.approx(2.0)


def test_moment_half_shape():
    assert tr.weibull_moment(WeibullParams(0.5, 1), 1) == pytest.approx(2.0)


def test_moment_matches_quadrature():
    pdf = lambda x: stats.weibull_min.pdf(x, 0.4, scale=3600)
    q, _ = integrate.quad(lambda x: x * pdf(x), 0, np.inf, limit=500, epsrel=1e-11)
    assert tr.weibull_moment(PARKING_TIME, 1) == pytest.approx(q, rel=1e-6)


def test_moment_overflow_reported():
    with pytest.raises(tr.NonFiniteMomentError):
        tr.weibull_moment(WeibullParams(0.01, 1e6), 40)


def test_sum_moment_linearity():
    assert tr.sum_moment(PARKING_TIME, VACANT_TIME, 1) == pytest.approx(
        tr.weibull_moment(PARKING_TIME, 1) + tr.weibull_moment(VACANT_TIME, 1), rel=1e-12)


def test_sum_moment_two_exponentials():
    assert tr.sum_moment(E1, E1, 2) == pytest.approx(6.0, rel=1e-12)


def test_sum_moment_erlang_fourth():
    # E[G^4] for a Gamma(2, 1) variate is 2*3*4*5
    assert tr.sum_moment(E1, E1, 4) == pytest.approx(120.0, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_sum_moment_monte_carlo(n):
    rng = np.random.default_rng(100 + n)
    a, b = tr.alternating_holding_times(PARKING_TIME, VACANT_TIME, 10_000_000, rng)
    assert tr.sum_moment(PARKING_TIME, VACANT_TIME, n) == pytest.approx(np.mean((a + b) ** n), rel=0.01)


def test_sum_moment_fourth_monte_carlo_within_standard_errors():
    # The fourth power of a shape-0.4 variate is too heavy-tailed for a 1%
    # Monte-Carlo band; compare in standard errors instead.
    rng = np.random.default_rng(104)
    a, b = tr.alternating_holding_times(PARKING_TIME, VACANT_TIME, 10_000_000, rng)
    s4 = (a + b) ** 4
    se = s4.std() / math.sqrt(s4.size)
    assert abs(s4.mean() - tr.sum_moment(PARKING_TIME, VACANT_TIME, 4)) < 3 * se


def test_sum_moment_fourth_nested_quadrature():
    # E[(X1 + X2)^4] = int E[(x + X2)^4] f1(x) dx, both integrals in log space
    def log_quad(g, p, hi):
        h = lambda z: g(math.exp(z)) * stats.weibull_min.pdf(math.exp(z), p.shape, scale=p.scale) * math.exp(z)
        return integrate.quad(h, -40, math.log(p.scale) + hi, limit=800, epsrel=1e-11)[0]

    q = log_quad(lambda x: log_quad(lambda y: (x + y) ** 4, VACANT_TIME, 8), PARKING_TIME, 15)
    assert tr.sum_moment(PARKING_TIME, VACANT_TIME, 4) == pytest.approx(q, rel=1e-5)


# -------------------------------------------------------------------- fit


def test_fit_erlang_two_is_exact():
    sp = tr.fit_sum_weibull(E1, E1)
    assert (sp.shape, sp.mu, sp.scale) == pytest.approx((1.0, 2.0, 2.0), rel=1e-8)
    x = np.linspace(0, 20, 2001)
    assert np.max(np.abs(tr.sum_cdf(sp, x) - (1 - (1 + x) * np.exp(-x)))) <= 0.01


def test_fit_table_one_heavy_tailed():
    sp = tr.fit_sum_weibull(PARKING_TIME, VACANT_TIME)
    assert 0 < sp.shape < 1


def test_fit_residuals_and_scale_identity():
    sp = tr.fit_sum_weibull(PARKING_TIME, VACANT_TIME)
    m = tr.sum_moments(PARKING_TIME, VACANT_TIME)
    r1, r2, r3 = tr.moment_equation_residuals(sp, m)
    assert abs(r1) < 1e-8 and abs(r2) < 1e-8
    assert abs(r3) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(0.2, 5.0))
def test_fit_residuals_property(a1, a2, ratio):
    p1, p2 = WeibullParams(a1, 1.0), WeibullParams(a2, ratio)
    sp = tr.fit_sum_weibull(p1, p2)
    r1, r2, r3 = tr.moment_equation_residuals(sp, tr.sum_moments(p1, p2))
    assert abs(r1) < 1e-8 and abs(r2) < 1e-8 and abs(r3) < 1e-10


def test_fit_first_moment_reproduced():
    sp = tr.fit_sum_weibull(PARKING_TIME, VACANT_TIME)
    # E[X] of the alpha-mu law
    m1 = sp.scale * math.exp(math.lgamma(sp.mu + 1 / sp.shape) - math.lgamma(sp.mu) - math.log(sp.mu) / sp.shape)
    assert m1 == pytest.approx(tr.sum_moment(PARKING_TIME, VACANT_TIME, 1), rel=1e-10)


# -------------------------------------------------------------- pdf / cdf


def test_pdf_reduces_to_exponential():
    assert tr.sum_pdf(SumWeibullParams(1, 1, 1), 0.5) == pytest.approx(math.exp(-0.5))


def test_pdf_direct_substitution():
    assert tr.sum_pdf(SumWeibullParams(1, 1, 2), 1.0) == pytest.approx(4 * math.exp(-2))


def test_pdf_rejects_non_positive():
    with pytest.raises(ValueError):
        tr.sum_pdf(SumWeibullParams(1, 1, 1), 0.0)


def test_pdf_normalised_for_table_one_fit():
    sp = tr.fit_sum_weibull(PARKING_TIME, VACANT_TIME)
    q, _ = integrate.quad(lambda z: tr.sum_pdf(sp, math.exp(z)) * math.exp(z), -40, 25, limit=800)
    assert 0.999 <= q <= 1.001


def test_cdf_basics():
    sp = SumWeibullParams(1, 1, 1)
    assert tr.sum_cdf(sp, 0.0) == 0.0
    assert tr.sum_cdf(sp, math.log(2)) == pytest.approx(0.5)


def test_cdf_matches_integrated_pdf():
    sp = tr.fit_sum_weibull(PARKING_TIME, VACANT_TIME)
    for x in (10.0, 500.0, 4000.0, 30000.0, 200000.0):
        q, _ = integrate.quad(lambda z: tr.sum_pdf(sp, math.exp(z)) * math.exp(z), -40, math.log(x),
                              limit=800, epsabs=1e-13)
        assert abs(q - tr.sum_cdf(sp, x)) < 1e-6


@given(st.lists(st.floats(0, 1e6), min_size=2, max_size=40))
def test_cdf_monotone_and_pdf_nonnegative(xs):
    sp = tr.fit_sum_weibull(PARKING_TIME, VACANT_TIME)
    xs = np.sort(np.asarray(xs))
    f = tr.sum_cdf(sp, xs)
    assert np.all(np.diff(f) >= 0)
    assert np.all((f >= 0) & (f <= 1))
    pos = xs[xs > 0]
    if pos.size:
        assert np.all(tr.sum_pdf(sp, pos) >= 0)


# ------------------------------------------------------------ count model


def test_count_zero_time():
    assert tr.count_prob(VACANT_TIME, 0.0, 0) == 1.0
    assert tr.count_prob(VACANT_TIME, 0.0, 2) == 0.0


@pytest.mark.parametrize("rate", [0.1, 0.5, 1.0, 2.0, 3.0])
@pytest.mark.parametrize("k", range(7))
def test_count_shape_one_is_poisson(rate, k):
    p = WeibullParams(1.0, 50.0)
    assert tr.count_prob(p, rate * 50.0, k) == pytest.approx(tr.poisson_pmf(rate, k), abs=1e-6)


def test_count_mass_complete_for_poisson():
    p = WeibullParams(1.0, 1.0)
    assert sum(tr.count_prob(p, 2.0, k) for k in range(25)) >= 1 - 1e-6


def test_count_delta_base_row():
    table = tr.build_count_table(0.7, 2, 40)
    for j in range(41):
        assert math.log(table.delta(0, j)) == pytest.approx(math.lgamma(0.7 * j + 1) - math.lgamma(j + 1), abs=1e-12)


def test_count_delta_recursion_direct():
    a = 0.7
    table = tr.build_count_table(a, 2, 12)
    for j in range(1, 13):
        direct = sum(table.delta(0, m) * math.gamma(a * (j - m) + 1) / math.gamma(j - m + 1) for m in range(0, j))
        assert table.delta(1, j) == pytest.approx(direct, rel=1e-10)


def test_count_matches_renewal_monte_carlo():
    p = VACANT_TIME
    counts = tr.renewal_counts(p, 900.0, 1_000_000, np.random.default_rng(21))
    for k in range(4):
        assert tr.count_prob(p, 900.0, k) == pytest.approx(np.mean(counts == k), abs=0.01)


def test_count_divergence_reported():
    with pytest.raises(SeriesDivergenceError) as info:
        tr.count_prob(WeibullParams(0.4, 1.0), 400.0, 0, j_max=40)
    assert math.isfinite(info.value.partial_sum) or math.isinf(info.value.last_term)


def test_count_rejects_bad_arguments():
    with pytest.raises(ValueError):
        tr.count_prob(VACANT_TIME, -1.0, 0)
    with pytest.raises(ValueError):
        tr.count_prob(VACANT_TIME, 1.0, 5, j_max=3)


# ----------------------------------------------------------- timelines


def test_timeline_truncated_single_interval():
    tl = tr.generate_occupancy_timeline(WeibullParams(1, 1e9), WeibullParams(1, 1e9), 1.0, tr.VACANT,
                                        np.random.default_rng(0))
    assert len(tl.transitions) == 0
    assert tl.intervals() == [(tr.VACANT, 0.0, 1.0)]


def test_timeline_mean_interval():
    p = WeibullParams(1.0, 50.0)
    tl = tr.generate_occupancy_timeline(p, p, 1e6, tr.OCCUPIED, np.random.default_rng(3))
    gaps = np.diff(np.concatenate([[0.0], tl.transitions]))
    assert gaps.mean() == pytest.approx(50.0, rel=0.02)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(10.0, 1e5))
def test_timeline_alternates_and_increases(seed, horizon):
    tl = tr.generate_occupancy_timeline(PARKING_TIME, VACANT_TIME, horizon, None, np.random.default_rng(seed))
    states = tl.states()
    assert all(a != b for a, b in zip(states, states[1:]))
    assert np.all(np.diff(tl.transitions) > 0)
    assert np.all((tl.transitions > 0) & (tl.transitions < horizon))
    iv = tl.intervals()
    assert iv[-1][2] == horizon
    assert len(tl.arrivals()) + len(tl.departures()) == len(tl.transitions)


def test_stationary_start_probability():
    rng = np.random.default_rng(8)
    starts = [tr.generate_occupancy_timeline(PARKING_TIME, VACANT_TIME, 1.0, None, rng).initial_state
              for _ in range(20_000)]
    p = tr.stationary_occupied_probability(PARKING_TIME, VACANT_TIME)
    frac = np.mean([s == tr.OCCUPIED for s in starts])
    assert abs(frac - p) < 4 * math.sqrt(p * (1 - p) / len(starts))

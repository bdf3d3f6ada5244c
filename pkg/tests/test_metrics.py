import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parksim.metrics import (
    DelaySummary, EmpiricalDistribution, FitError, energy_summary, fit_weibull_mle, info_delay_cdf,
    interarrivals, merge_interarrivals, min_lifetime_node, survival,
)
from parksim.node import IMMEDIATE, InfoRecord
from parksim.radio import RX, EnergyLedger, RadioPowerProfile


def test_survival_examples():
    d = EmpiricalDistribution([1.0, 2.0, 3.0])
    assert survival(d, 2.0) == pytest.approx(1 / 3)
    assert survival(d, 0.5) == pytest.approx(1.0)
    assert survival(d, 3.0) == pytest.approx(0.0)
    assert d.cdf(2.0) == pytest.approx(2 / 3)


def test_empirical_requires_samples():
    with pytest.raises(ValueError):
        EmpiricalDistribution([])


@pytest.mark.parametrize("shape, lo, hi", [(1.0, 0.98, 1.02), (0.4, 0.39, 0.41)])
def test_mle_recovers_shape(shape, lo, hi):
    x = 50.0 * np.random.default_rng(1).weibull(shape, 100_000)
    fit = fit_weibull_mle(x)
    assert lo <= fit.shape <= hi
    assert fit.scale == pytest.approx(50.0, rel=0.03)


def test_mle_matches_scipy():
    from scipy import stats
    x = 7.0 * np.random.default_rng(2).weibull(1.7, 2000)
    fit = fit_weibull_mle(x)
    c, _, s = stats.weibull_min.fit(x, floc=0)
    assert fit.shape == pytest.approx(c, rel=1e-4)
    assert fit.scale == pytest.approx(s, rel=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 4.0), st.floats(0.1, 1e4), st.integers(0, 2**31))
def test_mle_within_three_standard_errors(shape, scale, seed):
    x = scale * np.random.default_rng(seed).weibull(shape, 20_000)
    fit = fit_weibull_mle(x)
    assert abs(fit.shape - shape) <= 3.5 * fit.shape_se + 1e-9
    assert abs(fit.scale - scale) <= 3.5 * fit.scale_se + 1e-9


def test_mle_rejects_bad_input():
    with pytest.raises(FitError):
        fit_weibull_mle(np.ones(100))
    with pytest.raises(FitError):
        fit_weibull_mle(np.arange(10) + 1.0)
    with pytest.raises(FitError):
        fit_weibull_mle(np.r_[0.0, np.arange(1, 100.0)])


def test_merge_example():
    d = merge_interarrivals({1: [1.0, 3.0], 2: [2.0, 4.0]})
    assert list(d.samples) == [1.0, 1.0, 1.0]
    assert list(merge_interarrivals({1: [1.0, 3.0], 2: [2.0, 4.0]}, group=[1]).samples) == [2.0]
    assert list(interarrivals([3.0, 1.0, 6.0])) == [2.0, 3.0]


@given(st.dictionaries(st.integers(0, 5), st.lists(st.floats(0, 1000), min_size=1, max_size=20), min_size=1))
def test_merged_gaps_sum_to_span(times):
    allt = np.concatenate([np.asarray(v) for v in times.values()])
    if allt.size < 2:
        return
    d = merge_interarrivals(times)
    assert d.count == allt.size - 1
    assert d.samples.sum() == pytest.approx(allt.max() - allt.min(), abs=1e-6)


def test_superposition_mean_gap():
    # k independent Poisson streams of rate r merge into rate k*r
    rng = np.random.default_rng(4)
    streams = {i: np.cumsum(rng.exponential(10.0, 5000)) for i in range(4)}
    horizon = min(v[-1] for v in streams.values())
    clipped = {i: v[v <= horizon] for i, v in streams.items()}
    assert merge_interarrivals(clipped).samples.mean() == pytest.approx(2.5, rel=0.03)


def test_delay_cdf():
    ns = 1_000_000_000
    recs = [InfoRecord(i, 1, 0, IMMEDIATE, 1, sent_at=0, delivered_at=d * ns) for i, d in enumerate([1, 2, 3])]
    recs.append(InfoRecord(9, 1, 0, IMMEDIATE, 1))
    s = info_delay_cdf(recs)
    assert s.delivered == 3 and s.total == 4
    assert s.delivery_ratio == pytest.approx(0.75)
    assert s.fraction_within(2.0) == pytest.approx(2 / 3)
    assert s.percentiles()["p50"] == pytest.approx(2.0)
    empty = info_delay_cdf([])
    assert math.isnan(empty.delivery_ratio) and empty.percentiles()["p50"] is None


def test_energy_summary_identical_nodes():
    p = RadioPowerProfile()
    ledgers, roles = {}, {0: "gateway"}
    for n in range(1, 5):
        led = EnergyLedger(p)
        led.account_state(RX, 1.0)
        led.close(100.0)
        ledgers[n] = led
        roles[n] = "sensor"
    ledgers[0] = EnergyLedger(p)
    s = energy_summary(ledgers, roles, 100.0)
    assert set(s) == {"sensor"}
    assert s["sensor"].std == pytest.approx(0.0)
    assert s["sensor"].n == 4


def test_min_lifetime_node_excludes_gateway():
    lifetimes = {0: 1.0, 1: 5.0, 2: 3.0, 3: 3.0}
    roles = {0: "gateway", 1: "sensor", 2: "router", 3: "sensor"}
    assert min_lifetime_node(lifetimes, roles) == 2

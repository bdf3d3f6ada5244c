"""Empirical distributions, Weibull MLE fits, delay and energy summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize

from .node import InfoRecord
from .radio import EnergyLedger, lifetime_estimate

MIN_FIT_SAMPLES = 50


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalDistribution:
    samples: np.ndarray

    def __post_init__(self):
        arr = np.sort(np.asarray(self.samples, dtype=float))
        if arr.size < 1:
            raise ValueError("empirical distribution needs at least one sample")
        object.__setattr__(self, "samples", arr)

    @property
    def count(self) -> int:
        return int(self.samples.size)

    def cdf(self, x):
        return np.searchsorted(self.samples, x, side="right") / self.count

    def quantile(self, q):
        return np.quantile(self.samples, q)


def survival(d: EmpiricalDistribution, x):
    """Fraction of samples strictly greater than ``x``."""
    return 1.0 - d.cdf(x)


@dataclass(frozen=True)
class WeibullFit:
    shape: float
    scale: float
    log_likelihood: float
    n: int

    @property
    def shape_se(self) -> float:
        # inverse Fisher information of the two-parameter Weibull
        return math.sqrt(0.6079 * self.shape**2 / self.n)

    @property
    def scale_se(self) -> float:
        return math.sqrt(1.1087 * self.scale**2 / (self.shape**2 * self.n))


def fit_weibull_mle(d: EmpiricalDistribution | Sequence[float], xtol: float = 1e-9) -> WeibullFit:
    """Maximum-likelihood Weibull fit from the profile equation in the shape.

    The shape solves  sum(x^c ln x)/sum(x^c) - 1/c - mean(ln x) = 0, which is
    increasing in c; the scale then follows in closed form.
    """
    x = d.samples if isinstance(d, EmpiricalDistribution) else np.asarray(d, dtype=float)
    if x.size < MIN_FIT_SAMPLES:
        raise FitError(f"need at least {MIN_FIT_SAMPLES} samples, got {x.size}")
    if np.any(x <= 0):
        raise FitError("samples must be positive")
    lx = np.log(x)
    if np.ptp(lx) == 0:
        raise FitError("degenerate sample: all values equal")
    # rescale so x^c stays finite for large c
    lz = lx - lx.max()
    mean_l = lz.mean()

    def g(c):
        w = np.exp(c * lz)
        return float((w * lz).sum() / w.sum() - 1.0 / c - mean_l)

    lo, hi = 0.01, 1.0
    while g(hi) < 0:
        hi *= 2
        if hi > 1e4:
            raise FitError("shape equation has no root below 1e4")
    while g(lo) > 0:
        lo /= 2
        if lo < 1e-8:
            raise FitError("shape equation has no root above 1e-8")
    c = optimize.brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    scale = math.exp(lx.max() + math.log(np.exp(c * lz).mean()) / c)
    n = x.size
    ll = float(n * math.log(c) - n * c * math.log(scale) + (c - 1) * lx.sum() - ((x / scale) ** c).sum())
    return WeibullFit(float(c), float(scale), ll, int(n))


def interarrivals(times: Iterable[float]) -> np.ndarray:
    t = np.sort(np.asarray(list(times), dtype=float))
    return np.diff(t)


def merge_interarrivals(event_times: Mapping[int, Sequence[float]], group: Iterable[int] | None = None) -> EmpiricalDistribution:
    """Gaps between consecutive events of the union of the chosen nodes' event streams."""
    keys = sorted(event_times) if group is None else list(group)
    if not keys:
        raise ValueError("empty node group")
    merged = np.sort(np.concatenate([np.asarray(event_times[k], dtype=float) for k in keys]))
    if merged.size < 2:
        raise ValueError("need at least two events in the union")
    return EmpiricalDistribution(np.diff(merged))


# ----------------------------------------------------------------- delays


@dataclass(frozen=True)
class DelaySummary:
    delays: EmpiricalDistribution | None
    delivered: int
    total: int

    @property
    def delivery_ratio(self) -> float:
        return self.delivered / self.total if self.total else float("nan")

    def percentiles(self, qs=(0.5, 0.9, 0.99)) -> dict[str, float | None]:
        out = {}
        for q in qs:
            key = f"p{round(q * 100)}"
            out[key] = None if self.delays is None else float(self.delays.quantile(q))
        return out

    def fraction_within(self, t: float) -> float:
        return float("nan") if self.delays is None else float(self.delays.cdf(t))


def info_delay_cdf(records: Iterable[InfoRecord]) -> DelaySummary:
    """Delays of delivered information; undelivered records count only towards the loss."""
    records = list(records)
    delays = [r.delay for r in records if r.delivered_at is not None]
    dist = EmpiricalDistribution(delays) if delays else None
    return DelaySummary(dist, len(delays), len(records))


# ----------------------------------------------------------------- energy


@dataclass(frozen=True)
class LifetimeStats:
    mean: float
    std: float
    min: float
    max: float
    n: int


def _stats(values: Sequence[float]) -> LifetimeStats:
    v = np.asarray(values, dtype=float)
    return LifetimeStats(float(v.mean()), float(v.std()), float(v.min()), float(v.max()), int(v.size))


def energy_summary(ledgers: Mapping[int, EnergyLedger], roles: Mapping[int, str], span: float,
                   battery_mah: float = 6300.0, battery_volts: float = 3.0,
                   include: Iterable[str] = ("sensor", "router")) -> dict[str, LifetimeStats]:
    """Lifetime statistics per role, in days."""
    by_role: dict[str, list[float]] = {}
    for n, led in sorted(ledgers.items()):
        if roles[n] not in include:
            continue
        by_role.setdefault(roles[n], []).append(
            lifetime_estimate(led.total_mj, span, battery_mah, battery_volts))
    return {role: _stats(v) for role, v in sorted(by_role.items())}


def min_lifetime_node(lifetimes: Mapping[int, float], roles: Mapping[int, str],
                      include: Iterable[str] = ("sensor", "router")) -> int:
    include = set(include)
    return min((n for n in lifetimes if roles[n] in include), key=lambda n: (lifetimes[n], n))

"""Closed-form traffic mathematics for parking occupancy.

Parking (occupied) and vacant durations are Weibull distributed.  The vehicle
interarrival time of one space is their sum, approximated by an alpha-mu
(generalised gamma) law whose parameters are recovered by matching the first,
second and fourth moments.  The number of arrivals of a Weibull renewal
process in a window is evaluated with the alternating count series.

All gamma arithmetic is done with log-gamma so that shapes well below 0.5
and fourth moments do not overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

OCCUPIED = "occupied"
VACANT = "vacant"


class NonFiniteMomentError(ArithmeticError):
    pass


class FitFailure(RuntimeError):
    def __init__(self, message: str, residuals: tuple[float, float]):
        super().__init__(f"{message} (residuals={residuals})")
        self.residuals = residuals


class SeriesDivergenceError(ArithmeticError):
    def __init__(self, message: str, partial_sum: float, last_term: float):
        super().__init__(
            f"{message}: partial sum {partial_sum!r}, last term magnitude {last_term!r}"
        )
        self.partial_sum = partial_sum
        self.last_term = last_term


@dataclass(frozen=True)
class WeibullParams:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"Weibull shape and scale must be positive: {self}")


@dataclass(frozen=True)
class SumWeibullParams:
    """alpha-mu parameters of the summed variate."""

    shape: float
    scale: float
    mu: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0 and self.mu > 0):
            raise ValueError(f"alpha, lambda and mu must be positive: {self}")


@dataclass(frozen=True)
class MomentSet:
    m1: float
    m2: float
    m4: float

    def __post_init__(self):
        if not (self.m1 > 0 and self.m2 >= self.m1**2 and self.m4 >= self.m2**2):
            raise ValueError(f"inconsistent moments: {self}")


# Default occupancy parameters (seconds).
PARKING_TIME = WeibullParams(shape=0.4, scale=3600.0)
VACANT_TIME = WeibullParams(shape=0.7, scale=900.0)


def sample_weibull(p: WeibullParams, u):
    """Inverse-CDF draw; ``u`` may be a scalar or an array in the open interval (0, 1)."""
    arr = np.asarray(u, dtype=float)
    if np.any((arr <= 0.0) | (arr >= 1.0)):
        raise ValueError("invalid draw: u must lie strictly inside (0, 1)")
    out = p.scale * (-np.log(arr)) ** (1.0 / p.shape)
    return float(out) if out.ndim == 0 else out


def log_weibull_moment(p: WeibullParams, n: float) -> float:
    return n * math.log(p.scale) + math.lgamma(1.0 + n / p.shape)


def weibull_moment(p: WeibullParams, n: int) -> float:
    if n < 1:
        raise ValueError("moment order must be >= 1")
    log_m = log_weibull_moment(p, n)
    if log_m > 709.0:
        raise NonFiniteMomentError(f"E[X^{n}] overflows for {p}")
    return math.exp(log_m)


def log_sum_moment(p1: WeibullParams, p2: WeibullParams, n: int) -> float:
    # Binomial expansion of E[(X1 + X2)^n] for independent X1, X2, with E[X^0] = 1.
    logs = [
        math.log(math.comb(n, k)) + log_weibull_moment(p1, k) + log_weibull_moment(p2, n - k)
        for k in range(n + 1)
    ]
    return float(special.logsumexp(logs))


def sum_moment(p1: WeibullParams, p2: WeibullParams, n: int) -> float:
    if n < 1:
        raise ValueError("moment order must be >= 1")
    log_m = log_sum_moment(p1, p2, n)
    if not math.isfinite(log_m) or log_m > 709.0:
        raise NonFiniteMomentError(f"E[(X1+X2)^{n}] overflows")
    return math.exp(log_m)


def sum_moments(p1: WeibullParams, p2: WeibullParams) -> MomentSet:
    return MomentSet(sum_moment(p1, p2, 1), sum_moment(p1, p2, 2), sum_moment(p1, p2, 4))


def _log_cv2(mu: float, b: float) -> float:
    """log of Var(Y^b)/E^2[Y^b]-style ratio for the alpha-mu law, with b = n/alpha.

    Gamma(mu)Gamma(mu+2b)/Gamma(mu+b)^2 - 1, in logs.
    """
    d = special.gammaln(mu) + special.gammaln(mu + 2 * b) - 2 * special.gammaln(mu + b)
    return float(np.log(np.expm1(d)))


def _moment_targets(m: MomentSet) -> tuple[float, float]:
    c1 = m.m2 / m.m1**2 - 1.0
    c2 = m.m4 / m.m2**2 - 1.0
    if not (c1 > 0 and c2 > 0):
        raise ValueError("degenerate moment ratios: variance of X or X^2 is zero")
    return c1, c2


def moment_equation_residuals(sp: SumWeibullParams, m: MomentSet) -> tuple[float, float, float]:
    """Relative residuals of the two gamma-ratio equations and of the scale equation."""
    a, mu, lam = sp.shape, sp.mu, sp.scale
    c1, c2 = _moment_targets(m)
    # Gamma^2(mu+1/a) / (Gamma(mu)Gamma(mu+2/a) - Gamma^2(mu+1/a)) = m1^2/(m2 - m1^2)
    r1 = math.expm1(-_log_cv2(mu, 1.0 / a) + math.log(c1))
    # Gamma^2(mu+2/a) / (Gamma(mu)Gamma(mu+4/a) - Gamma^2(mu+2/a)) = m2^2/(m4 - m2^2)
    r2 = math.expm1(-_log_cv2(mu, 2.0 / a) + math.log(c2))
    lam_eq = math.exp(
        math.log(mu) / a + math.lgamma(mu) + math.log(m.m1) - math.lgamma(mu + 1.0 / a)
    )
    r3 = lam / lam_eq - 1.0
    return r1, r2, r3


_ALPHA_LO, _ALPHA_HI = 0.05, 3.0
_MU_LO, _MU_HI = 0.01, 100.0


def _solve_inv_alpha(mu: float, log_c1: float) -> float | None:
    # log cv2 grows with 1/alpha at fixed mu; return None when outside the alpha bracket.
    lo, hi = 1.0 / _ALPHA_HI, 1.0 / _ALPHA_LO
    f_lo = _log_cv2(mu, lo) - log_c1
    f_hi = _log_cv2(mu, hi) - log_c1
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)) or f_lo * f_hi > 0:
        return None
    return optimize.brentq(lambda b: _log_cv2(mu, b) - log_c1, lo, hi, xtol=1e-15, rtol=1e-15)


def _newton_fallback(log_c1: float, log_c2: float, budget: int = 200):
    # Damped Newton on (log alpha, log mu) with a finite-difference Jacobian.
    def resid(v):
        a, mu = math.exp(v[0]), math.exp(v[1])
        return np.array([_log_cv2(mu, 1 / a) - log_c1, _log_cv2(mu, 2 / a) - log_c2])

    v = np.array([math.log(0.5), 0.0])
    r = resid(v)
    for _ in range(budget):
        if np.max(np.abs(r)) < 1e-13:
            break
        h = 1e-7
        jac = np.column_stack([(resid(v + h * e) - r) / h for e in np.eye(2)])
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-6:
            cand = v + t * step
            rc = resid(cand)
            if np.all(np.isfinite(rc)) and np.linalg.norm(rc) < np.linalg.norm(r):
                v, r = cand, rc
                break
            t *= 0.5
        else:
            break
    return math.exp(v[0]), math.exp(v[1]), (float(r[0]), float(r[1]))


def fit_sum_weibull(p1: WeibullParams, p2: WeibullParams) -> SumWeibullParams:
    """Moment-matched alpha-mu approximation of X1 + X2.

    alpha and mu solve the first- and second-order gamma-ratio equations
    simultaneously (inner bisection for alpha at fixed mu, outer bracketed
    search over mu), and lambda follows from the mean.
    """
    m = sum_moments(p1, p2)
    c1, c2 = _moment_targets(m)
    log_c1, log_c2 = math.log(c1), math.log(c2)

    def outer(mu):
        b = _solve_inv_alpha(mu, log_c1)
        if b is None:
            return None
        return _log_cv2(mu, 2 * b) - log_c2

    grid = np.geomspace(_MU_LO, _MU_HI, 241)
    vals = [outer(mu) for mu in grid]
    bracket = None
    for (m_lo, f_lo), (m_hi, f_hi) in zip(zip(grid, vals), zip(grid[1:], vals[1:])):
        if f_lo is not None and f_hi is not None and f_lo * f_hi <= 0:
            bracket = (m_lo, m_hi)
            break

    if bracket is not None:
        mu = optimize.brentq(outer, *bracket, xtol=1e-14, rtol=1e-15, maxiter=500)
        alpha = 1.0 / _solve_inv_alpha(mu, log_c1)
    else:
        alpha, mu, last = _newton_fallback(log_c1, log_c2)
        if max(abs(x) for x in last) > 1e-10:
            raise FitFailure("alpha-mu moment equations did not converge", last)

    lam = math.exp(
        math.log(mu) / alpha + math.lgamma(mu) + math.log(m.m1) - math.lgamma(mu + 1.0 / alpha)
    )
    sp = SumWeibullParams(shape=alpha, scale=lam, mu=mu)
    r1, r2, _ = moment_equation_residuals(sp, m)
    if max(abs(r1), abs(r2)) > 1e-8:
        raise FitFailure("residuals above tolerance", (r1, r2))
    return sp


def sum_logpdf(sp: SumWeibullParams, x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("density is defined for x > 0 only")
    a, lam, mu = sp.shape, sp.scale, sp.mu
    out = (
        math.log(a)
        - a * mu * math.log(lam)
        + mu * math.log(mu)
        - math.lgamma(mu)
        + (a * mu - 1.0) * np.log(x)
        - mu * (x / lam) ** a
    )
    return float(out) if out.ndim == 0 else out


def sum_pdf(sp: SumWeibullParams, x):
    return np.exp(sum_logpdf(sp, x))


def sum_cdf(sp: SumWeibullParams, x):
    """1 - Gamma(mu, mu (x/lambda)^alpha) / Gamma(mu).

    Evaluated as the regularised lower incomplete gamma, which is the same
    quantity without the cancellation near x = 0.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("CDF argument must be non-negative")
    out = special.gammainc(sp.mu, sp.mu * (x / sp.scale) ** sp.shape)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- count model

DEFAULT_J_MAX = 160


@dataclass(frozen=True)
class CountModelTable:
    alpha: float
    j_max: int
    log_delta: tuple[tuple[float, ...], ...]
    """log_delta[k][j - k] = log Delta_j^k for k <= j <= j_max."""

    def delta(self, k: int, j: int) -> float:
        return math.exp(self.log_delta[k][j - k])

    @property
    def k_max(self) -> int:
        return len(self.log_delta) - 1


@lru_cache(maxsize=64)
def build_count_table(alpha: float, k_max: int, j_max: int = DEFAULT_J_MAX) -> CountModelTable:
    if j_max < k_max:
        raise ValueError("j_max must be >= k")
    j = np.arange(j_max + 1, dtype=float)
    lg_aj1 = special.gammaln(alpha * j + 1.0)
    rows = [lg_aj1 - special.gammaln(j + 1.0)]
    for k in range(k_max):
        prev = rows[-1]  # indexed by absolute j, entries valid for j >= k
        nxt = np.full(j_max + 1, -np.inf)
        for jj in range(k + 1, j_max + 1):
            m = np.arange(k, jj)
            terms = prev[m] + special.gammaln(alpha * (jj - m) + 1.0) - special.gammaln(jj - m + 1.0)
            nxt[jj] = special.logsumexp(terms)
        rows.append(nxt)
    log_delta = tuple(tuple(float(v) for v in rows[k][k:]) for k in range(k_max + 1))
    return CountModelTable(alpha=alpha, j_max=j_max, log_delta=log_delta)


def count_prob(p: WeibullParams, t: float, k: int, j_max: int = DEFAULT_J_MAX) -> float:
    """P(N(t) = k) for a renewal process with Weibull(p) interarrivals started at 0."""
    if t < 0 or k < 0:
        raise ValueError("t and k must be non-negative")
    if j_max < k:
        raise ValueError("j_max must be >= k")
    if t == 0:
        return 1.0 if k == 0 else 0.0

    a = p.shape
    table = build_count_table(a, k, j_max)
    log_x = math.log(t / p.scale)
    terms: list[float] = []
    small_run = 0
    biggest = 0.0
    prev_mag = None
    for j in range(k, j_max + 1):
        log_mag = a * j * log_x + table.log_delta[k][j - k] - math.lgamma(a * j + 1.0)
        mag = math.exp(log_mag) if log_mag < 709 else math.inf
        if not math.isfinite(mag):
            raise SeriesDivergenceError("term overflow", math.fsum(terms), mag)
        terms.append(mag if (j + k) % 2 == 0 else -mag)
        biggest = max(biggest, mag)
        running = math.fsum(terms)
        if mag < 1e-12 * max(abs(running), 1e-300) or mag == 0.0:
            small_run += 1
            if small_run >= 3:
                break
        else:
            small_run = 0
        prev_mag = mag
    else:
        last = abs(terms[-1])
        growing = prev_mag is not None and len(terms) > 1 and last >= abs(terms[-2])
        reason = "terms still growing at j_max" if growing else "no convergence within j_max"
        raise SeriesDivergenceError(reason, math.fsum(terms), last)

    total = math.fsum(terms)
    # Cancellation guard: the sum is meaningless once rounding of the largest
    # term exceeds the probability resolution we promise.
    if biggest * 1e-16 * len(terms) > 1e-9:
        raise SeriesDivergenceError("catastrophic cancellation", total, biggest)
    if total < -1e-9 or total > 1 + 1e-9:
        raise SeriesDivergenceError("series left [0, 1]", total, abs(terms[-1]))
    return min(1.0, max(0.0, total))


# ------------------------------------------------------------ occupancy timeline


@dataclass(frozen=True)
class OccupancyTimeline:
    initial_state: str
    transitions: np.ndarray
    horizon: float

    def states(self) -> list[str]:
        out, s = [], self.initial_state
        for _ in range(len(self.transitions) + 1):
            out.append(s)
            s = OCCUPIED if s == VACANT else VACANT
        return out

    def intervals(self) -> list[tuple[str, float, float]]:
        edges = [0.0, *self.transitions.tolist(), self.horizon]
        return [(s, edges[i], edges[i + 1]) for i, s in enumerate(self.states())]

    def arrivals(self) -> np.ndarray:
        """Transition instants into the occupied state."""
        first_is_arrival = self.initial_state == VACANT
        return self.transitions[0 if first_is_arrival else 1 :: 2]

    def departures(self) -> np.ndarray:
        first_is_arrival = self.initial_state == VACANT
        return self.transitions[1 if first_is_arrival else 0 :: 2]


def stationary_occupied_probability(pp: WeibullParams, pv: WeibullParams) -> float:
    ep, ev = weibull_moment(pp, 1), weibull_moment(pv, 1)
    return ep / (ep + ev)


def _open_uniforms(rng: np.random.Generator, n: int) -> np.ndarray:
    u = rng.random(n)
    while np.any(u == 0.0):
        bad = u == 0.0
        u[bad] = rng.random(int(bad.sum()))
    return u


def generate_occupancy_timeline(
    pp: WeibullParams,
    pv: WeibullParams,
    horizon: float,
    initial_state: str | None,
    rng: np.random.Generator,
) -> OccupancyTimeline:
    """Alternate occupied/vacant holding times until ``horizon``.

    ``initial_state=None`` draws the start state from the stationary
    occupied fraction.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if initial_state is None:
        occupied = rng.random() < stationary_occupied_probability(pp, pv)
        initial_state = OCCUPIED if occupied else VACANT
    if initial_state not in (OCCUPIED, VACANT):
        raise ValueError(f"unknown state {initial_state!r}")

    times: list[float] = []
    t = 0.0
    occupied = initial_state == OCCUPIED
    block = 256
    while True:
        u = _open_uniforms(rng, block)
        for ui in u:
            t += sample_weibull(pp if occupied else pv, ui)
            if t >= horizon:
                return OccupancyTimeline(initial_state, np.asarray(times), float(horizon))
            times.append(t)
            occupied = not occupied
        block = min(block * 2, 1 << 16)


def alternating_holding_times(
    pp: WeibullParams, pv: WeibullParams, pairs: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised draws of ``pairs`` parking and vacant durations."""
    return (
        sample_weibull(pp, _open_uniforms(rng, pairs)),
        sample_weibull(pv, _open_uniforms(rng, pairs)),
    )


def renewal_counts(p: WeibullParams, t: float, n_paths: int, rng: np.random.Generator,
                   chunk: int = 100_000) -> np.ndarray:
    """Monte-Carlo arrival counts in [0, t] for an ordinary Weibull renewal process."""
    counts = np.empty(n_paths, dtype=np.int64)
    done = 0
    while done < n_paths:
        n = min(chunk, n_paths - done)
        width = 16
        while True:
            draws = sample_weibull(p, _open_uniforms(rng, n * width)).reshape(n, width)
            cum = np.cumsum(draws, axis=1)
            if np.all(cum[:, -1] > t):
                break
            width *= 2
        counts[done : done + n] = (cum <= t).sum(axis=1)
        done += n
    return counts


def poisson_pmf(rate_t: float, k: int) -> float:
    return math.exp(-rate_t + k * math.log(rate_t) - math.lgamma(k + 1)) if rate_t > 0 else float(k == 0)


"""Expectation and risk engine for the futures stage.

All expectations are driven by per-buyer empirical demand histories (treated
as uniform categorical distributions, buyers independent) and by the mean of
the uniform channel-gain model.  The overflow law Pr(V=n) and the per-buyer
volunteer law Pr(v_i=Y) are computed exactly by convolving the independent
committed-demand pmfs; a literal joint enumerator and a seeded Monte-Carlo
sampler are provided as independent oracles for the same quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .model import (
    BuyerProfile,
    FixedGain,
    LongTermContract,
    SellerProfile,
    TaskConfig,
    UniformGain,
    seller_unit_cost,
    unit_valuation,
)


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalDemand:
    """Historical task-count samples of one fixed buyer."""

    samples: tuple[int, ...]

    def __post_init__(self):
        if len(self.samples) == 0:
            raise StatsError("demand history must be nonempty")
        if any(s < 0 for s in self.samples):
            raise StatsError("demand samples must be >= 0")

    @staticmethod
    def of(samples: Sequence[int]) -> "EmpiricalDemand":
        return EmpiricalDemand(tuple(int(s) for s in samples))

    def extended(self, extra: Sequence[int]) -> "EmpiricalDemand":
        return EmpiricalDemand(self.samples + tuple(int(s) for s in extra))


@dataclass(frozen=True)
class RiskConfig:
    rho1: float = 0.3
    rho2: float = 0.3
    rho3: float = 0.3
    u_min: float = 0.01
    overbook_rate: float = 0.1     # fraction of capacity that may be oversold

    def __post_init__(self):
        for name in ("rho1", "rho2", "rho3"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise StatsError(f"{name} must lie in (0, 1]")
        if not self.u_min > 0:
            raise StatsError("u_min must be positive")
        if self.overbook_rate < 0:
            raise StatsError("overbook_rate must be >= 0")


@dataclass(frozen=True)
class OverflowDistribution:
    """Pr(V = n) for n = 0..floor(tau * capacity); zero absorbs all non-overflow mass."""

    probabilities: dict[int, float]
    mean: float
    exact: bool = True            # False when produced by the sampling fallback

    def __post_init__(self):
        total = sum(self.probabilities.values())
        if abs(total - 1.0) > 1e-9:
            raise StatsError(f"overflow probabilities sum to {total}, not 1")

    def pr(self, n: int) -> float:
        return self.probabilities.get(n, 0.0)


# ---------------------------------------------------------------------------
# Scalar expectations
# ---------------------------------------------------------------------------

def expect_alpha(history: EmpiricalDemand, quantity: int) -> float:
    """Empirical probability that realized demand strictly exceeds `quantity`."""
    above = sum(1 for s in history.samples if s > quantity)
    return above / len(history.samples)


def expected_demand(history: EmpiricalDemand) -> float:
    return sum(history.samples) / len(history.samples)


def expect_valuation(buyer: BuyerProfile, task: TaskConfig, seller_rate: float) -> float:
    """Plug-in expected valuation: the valuation evaluated at the mean gain.

    This is the mean of the uniform gain pushed through the (nonlinear)
    valuation, not the true expectation of the composition.
    """
    if not isinstance(buyer.channel_model, UniformGain):
        raise StatsError("expected valuation needs a uniform channel model")
    return unit_valuation(buyer, buyer.channel_model.mean(), task, seller_rate)


def valuations_vectorized(buyer: BuyerProfile, gains: np.ndarray, task: TaskConfig,
                          seller_rate: float) -> np.ndarray:
    """unit_valuation broadcast over an array of channel gains."""
    d = task.data_size_bits
    rate = task.bandwidth_hz * np.log2(1.0 + buyer.tx_power * gains)
    t_local = d / buyer.compute_rate
    t_save = t_local - d / rate - d / seller_rate
    c_save = buyer.compute_power * t_local - buyer.tx_power * d / rate
    return task.w1 * t_save + task.w2 * c_save


# ---------------------------------------------------------------------------
# Committed-demand pmfs and the exact overflow law
# ---------------------------------------------------------------------------

def committed_pmf(history: EmpiricalDemand, quantity: int) -> np.ndarray:
    """pmf of min(demand, quantity) on support 0..quantity."""
    pmf = np.zeros(quantity + 1)
    inv = 1.0 / len(history.samples)
    for s in history.samples:
        pmf[min(s, quantity)] += inv
    return pmf


def convolve_pmfs(pmfs: Sequence[np.ndarray]) -> np.ndarray:
    """Distribution of the sum of independent integer variables."""
    out = np.array([1.0])
    for pmf in pmfs:
        out = np.convolve(out, pmf)
    return out


def overflow_distribution(histories: Sequence[EmpiricalDemand],
                          quantities: Sequence[int],
                          capacity: int,
                          overbook_rate: float) -> OverflowDistribution:
    """Exact law of V = max(0, sum_i min(demand_i, quantity_i) - capacity).

    Buyers are independent, so the committed sum's distribution is the
    convolution of the per-buyer committed pmfs; this enumerates the joint
    empirical distribution without materializing the product space.
    """
    if len(histories) != len(quantities):
        raise StatsError("one quantity per history required")
    if sum(quantities) > (1 + overbook_rate) * capacity + 1e-9:
        raise StatsError("total quantity exceeds the overbooked capacity")
    limit = math.floor(overbook_rate * capacity)
    sum_pmf = convolve_pmfs([committed_pmf(h, n) for h, n in zip(histories, quantities)])
    probs = {0: float(sum_pmf[: capacity + 1].sum())}
    mean = 0.0
    for n in range(1, limit + 1):
        s = capacity + n
        p = float(sum_pmf[s]) if s < len(sum_pmf) else 0.0
        probs[n] = p
        mean += n * p
    return OverflowDistribution(probs, mean)


def enumerate_joint_overflow(histories: Sequence[EmpiricalDemand],
                             quantities: Sequence[int],
                             capacity: int,
                             overbook_rate: float,
                             enumeration_cap: int = 10**6,
                             rng: np.random.Generator | None = None,
                             fallback_samples: int = 10**5) -> OverflowDistribution:
    """Literal product-space enumeration of the joint demand distribution.

    Independent oracle for `overflow_distribution`.  Beyond the case cap it
    needs an rng and falls back to seeded sampling, marking the result inexact.
    """
    cases = 1
    for h in histories:
        cases *= len(h.samples)
    limit = math.floor(overbook_rate * capacity)
    if cases > enumeration_cap:
        if rng is None:
            raise StatsError(
                f"joint enumeration would visit {cases} cases (cap {enumeration_cap})")
        draws = np.stack([rng.choice(h.samples, size=fallback_samples) for h in histories])
        committed = np.minimum(draws, np.asarray(quantities)[:, None]).sum(axis=0)
        overflow = np.minimum(np.maximum(0, committed - capacity), limit)
        counts = np.bincount(overflow, minlength=limit + 1)
        probs = {n: counts[n] / fallback_samples for n in range(limit + 1)}
        mean = sum(n * p for n, p in probs.items())
        return OverflowDistribution(probs, mean, exact=False)

    probs = {n: 0.0 for n in range(limit + 1)}
    mean = 0.0
    idx = [0] * len(histories)
    sizes = [len(h.samples) for h in histories]
    weight = 1.0
    for size in sizes:
        weight /= size
    while True:
        committed = sum(min(h.samples[i], n)
                        for h, i, n in zip(histories, idx, quantities))
        v = max(0, committed - capacity)
        probs[v] += weight
        mean += v * weight
        for pos in range(len(idx)):
            idx[pos] += 1
            if idx[pos] < sizes[pos]:
                break
            idx[pos] = 0
        else:
            break
    return OverflowDistribution(probs, mean)


# ---------------------------------------------------------------------------
# Volunteer law
# ---------------------------------------------------------------------------

def hypergeometric_pmf(y: int, population: int, successes: int, draws: int) -> float:
    """Pr(Y = y) drawing `draws` without replacement from `population` items of
    which `successes` are marked."""
    if min(y, population, successes, draws) < 0:
        raise StatsError("hypergeometric arguments must be >= 0")
    if y > successes or y > draws or draws - y > population - successes:
        return 0.0
    return (math.comb(successes, y)
            * math.comb(population - successes, draws - y)
            / math.comb(population, draws))


def volunteer_distribution(overflow: OverflowDistribution,
                           own_committed: int,
                           total_committed: int) -> tuple[dict[int, float], float]:
    """Mixture-of-hypergeometrics volunteer law for fixed committed counts.

    Each of the V overflow tasks is drawn uniformly without replacement from
    the committed multiset; Pr(v_i=Y) mixes the hypergeometric over the
    overflow law.  Returns (pmf over Y, mean).
    """
    if own_committed > total_committed:
        raise StatsError("own committed tasks cannot exceed the total")
    pmf = {y: 0.0 for y in range(own_committed + 1)}
    mean = 0.0
    for n, p_n in overflow.probabilities.items():
        if p_n == 0.0:
            continue
        if n > total_committed:
            raise StatsError("overflow support exceeds total committed tasks")
        if n == 0 or own_committed == 0:
            pmf[0] += p_n
            continue
        for y in range(0, min(own_committed, n) + 1):
            h = hypergeometric_pmf(y, total_committed, own_committed, n)
            pmf[y] += p_n * h
            mean += y * p_n * h
    return pmf, mean


def _escape_probabilities(capacity: int, max_own: int, max_total: int) -> np.ndarray:
    """esc[x, s] = Pr(none of a buyer's x committed tasks volunteers | total s).

    Under shortage the seller keeps `capacity` of the s committed tasks
    uniformly at random; the buyer escapes iff all x of its tasks are kept,
    a falling-factorial ratio evaluated in log space.
    """
    esc = np.ones((max_own + 1, max_total + 1))
    xs = np.arange(max_own + 1)[:, None]
    ss = np.arange(max_total + 1)[None, :]
    shortage = ss > capacity
    feasible = shortage & (xs <= capacity) & (xs <= ss)
    with np.errstate(invalid="ignore", divide="ignore"):
        log_esc = (gammaln(capacity + 1.0) - gammaln(np.maximum(capacity - xs, 0) + 1.0)
                   - gammaln(ss + 1.0) + gammaln(np.maximum(ss - xs, 0) + 1.0))
        log_esc = np.broadcast_to(log_esc, esc.shape)
        esc[feasible] = np.exp(log_esc[feasible])
    esc[shortage & (xs > capacity)] = 0.0
    return esc


# ---------------------------------------------------------------------------
# Market-level analytic context
# ---------------------------------------------------------------------------

@dataclass
class MarketStats:
    """Analytic context for one futures market: per-buyer histories plus the
    shared task and seller constants.  Scalar expectations are cached.

    Volunteer risk conditions on the buyer's own committed count and on the
    leave-one-out committed sum, which reproduces the exact law of the
    task-level volunteer draw (and therefore agrees with sampling oracles).
    """

    histories: list[EmpiricalDemand]
    buyers: list[BuyerProfile]
    seller: SellerProfile
    task: TaskConfig
    risk: RiskConfig
    _valuations: dict[int, float] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.histories) != len(self.buyers):
            raise StatsError("one history per buyer required")
        self.unit_cost = seller_unit_cost(self.seller, self.task)
        self.capacity = self.seller.capacity
        self.booking_limit = int(math.floor((1 + self.risk.overbook_rate) * self.capacity))
        self._pmf_cache: dict[tuple[int, int], np.ndarray] = {}
        self._alpha_cache: dict[tuple[int, int], float] = {}
        self._mean_cache: dict[int, float] = {}
        self._esc: np.ndarray | None = None

    def committed(self, i: int, quantity: int) -> np.ndarray:
        """Cached pmf of min(demand_i, quantity)."""
        key = (i, quantity)
        if key not in self._pmf_cache:
            self._pmf_cache[key] = committed_pmf(self.histories[i], quantity)
        return self._pmf_cache[key]

    def _escape(self, max_own: int, max_total: int) -> np.ndarray:
        """Shared escape-probability table, regrown on demand."""
        if (self._esc is None or self._esc.shape[0] <= max_own
                or self._esc.shape[1] <= max_total):
            grow = self._esc.shape if self._esc is not None else (0, 0)
            self._esc = _escape_probabilities(
                self.capacity, max(max_own, grow[0]), max(max_total, grow[1]))
        return self._esc

    @property
    def n_buyers(self) -> int:
        return len(self.buyers)

    def expected_valuation(self, i: int) -> float:
        if i not in self._valuations:
            self._valuations[i] = expect_valuation(self.buyers[i], self.task,
                                                   self.seller.compute_rate)
        return self._valuations[i]

    def alpha(self, i: int, quantity: int) -> float:
        key = (i, quantity)
        if key not in self._alpha_cache:
            self._alpha_cache[key] = expect_alpha(self.histories[i], quantity)
        return self._alpha_cache[key]

    def mean_demand(self, i: int) -> float:
        if i not in self._mean_cache:
            self._mean_cache[i] = expected_demand(self.histories[i])
        return self._mean_cache[i]

    def expected_buyer_utility(self, i: int, quantity: int, price: float,
                               buyer_penalty: float) -> float:
        """Plug-in expected contract utility: the two demand branches mixed by
        the over-demand probability, each evaluated at expectation inputs."""
        a = self.alpha(i, quantity)
        ev = self.expected_valuation(i)
        er = self.mean_demand(i)
        over = quantity * (ev - price)
        under = er * (ev - price) - (quantity - er) * buyer_penalty
        return a * over + (1 - a) * under

    # -- exact volunteer law ---------------------------------------------------

    def _own_and_rest(self, i: int, quantities: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        own = self.committed(i, quantities[i])
        rest = convolve_pmfs([self.committed(j, quantities[j])
                              for j in range(self.n_buyers) if j != i])
        return own, rest

    def exceedance_given_rest(self, i: int, quantity: int, rest: np.ndarray) -> float:
        """Pr(buyer i volunteers) given the leave-one-out committed-sum pmf."""
        own = self.committed(i, quantity)
        esc = self._escape(len(own) - 1, len(own) - 1 + len(rest) - 1)
        cols = np.arange(len(own))[:, None] + np.arange(len(rest))[None, :]
        escape = esc[np.arange(len(own))[:, None], cols]
        return float(1.0 - own @ escape @ rest)

    def volunteer_exceedance(self, i: int, quantities: Sequence[int]) -> float:
        """Exact Pr(buyer i volunteers at least one task) under the quantity vector."""
        _own, rest = self._own_and_rest(i, quantities)
        return self.exceedance_given_rest(i, quantities[i], rest)

    def volunteer_exceedances(self, quantities: Sequence[int]) -> np.ndarray:
        """Per-buyer volunteer probabilities for one vector, via prefix/suffix
        convolutions (one leave-one-out pmf per buyer in linear total work)."""
        m = self.n_buyers
        if sum(quantities) <= self.capacity:
            return np.zeros(m)
        pmfs = [self.committed(i, quantities[i]) for i in range(m)]
        prefix = [np.array([1.0])]
        for pmf in pmfs[:-1]:
            prefix.append(np.convolve(prefix[-1], pmf))
        suffix = [np.array([1.0])]
        for pmf in pmfs[:0:-1]:
            suffix.append(np.convolve(suffix[-1], pmf))
        suffix.reverse()
        out = np.zeros(m)
        for i in range(m):
            rest = np.convolve(prefix[i], suffix[i])
            out[i] = self.exceedance_given_rest(i, quantities[i], rest)
        return out

    def volunteer_mean(self, i: int, quantities: Sequence[int]) -> float:
        """Exact E[volunteered tasks of buyer i]; the per-case hypergeometric
        mean is draws * own / total."""
        own, rest = self._own_and_rest(i, quantities)
        xs = np.arange(len(own))[:, None]
        ss = xs + np.arange(len(rest))[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(ss > self.capacity, (ss - self.capacity) / np.maximum(ss, 1), 0.0)
        return float(own @ (xs * frac) @ rest)

    def volunteer_law(self, i: int, quantities: Sequence[int]) -> tuple[dict[int, float], float]:
        """Exact pmf and mean of buyer i's volunteered task count (small markets)."""
        own, rest = self._own_and_rest(i, quantities)
        pmf: dict[int, float] = {0: 0.0}
        mean = 0.0
        for x in range(len(own)):
            if own[x] == 0.0:
                continue
            for s_rest in range(len(rest)):
                w = own[x] * rest[s_rest]
                if w == 0.0:
                    continue
                total = x + s_rest
                draws = max(0, total - self.capacity)
                if draws == 0 or x == 0:
                    pmf[0] += w
                    continue
                for y in range(0, min(x, draws) + 1):
                    h = hypergeometric_pmf(y, total, x, draws)
                    pmf[y] = pmf.get(y, 0.0) + w * h
                    mean += y * w * h
        return pmf, mean

    def overflow(self, quantities: Sequence[int]) -> OverflowDistribution:
        return overflow_distribution(self.histories, quantities, self.capacity,
                                     self.risk.overbook_rate)

    # -- printed expectation formulas -------------------------------------------

    def expected_fb_sum_utility(self, contracts: Sequence[LongTermContract]) -> float:
        """Expected sum utility of the fixed buyers under the given contracts."""
        quantities = [c.quantity for c in contracts]
        total = self.overflow(quantities).mean * _shared(contracts, "seller_penalty")
        for i, c in enumerate(contracts):
            if c.is_null:
                continue
            a = self.alpha(i, c.quantity)
            ev = self.expected_valuation(i)
            er = self.mean_demand(i)
            e_vol = self.volunteer_mean(i, quantities)
            total += a * (c.quantity - e_vol) * (ev - c.price)
            total += (1 - a) * ((er - e_vol) * (ev - c.price)
                                + (c.quantity - er - e_vol) * c.buyer_penalty)
        return total

    def expected_seller_utility(self, contracts: Sequence[LongTermContract]) -> float:
        """Expected seller utility under the given contracts."""
        quantities = [c.quantity for c in contracts]
        ev_overflow = self.overflow(quantities).mean
        live = [c for c in contracts if not c.is_null]
        total = 0.0
        if live:
            ref = live[0]
            total -= ev_overflow * (ref.seller_penalty + (ref.price - self.unit_cost)
                                    + ref.buyer_penalty)
        for i, c in enumerate(contracts):
            if c.is_null:
                continue
            a = self.alpha(i, c.quantity)
            total += a * c.quantity * (c.price - self.unit_cost)
            total += (1 - a) * (c.quantity - self.mean_demand(i)) * c.buyer_penalty
        return total

    # -- risk gates --------------------------------------------------------------

    def utility_risk_ok(self, i: int, quantity: int, price: float,
                        buyer_penalty: float) -> bool:
        """Markov-bound surrogate for the buyer's low-utility chance constraint."""
        eu = self.expected_buyer_utility(i, quantity, price, buyer_penalty)
        return eu / self.risk.u_min > 1.0 - self.risk.rho1

    def volunteer_risk_ok(self, i: int, quantities: Sequence[int]) -> bool:
        return self.volunteer_exceedance(i, quantities) <= self.risk.rho2

    def check_buyer_risks(self, i: int, contract: LongTermContract,
                          quantities: Sequence[int]) -> tuple[bool, bool]:
        """(utility-risk pass, volunteer-risk pass) for buyer i under the full
        quantity vector.  Failures are values, never errors."""
        ok_u = self.utility_risk_ok(i, contract.quantity, contract.price,
                                    contract.buyer_penalty)
        ok_v = self.volunteer_risk_ok(i, quantities)
        return ok_u, ok_v

    def check_seller_risk(self, expected_utility: float) -> bool:
        if self.seller.desired_utility <= 0:
            return True
        return expected_utility / self.seller.desired_utility > 1.0 - self.risk.rho3


def _shared(contracts: Sequence[LongTermContract], attr: str) -> float:
    vals = {getattr(c, attr) for c in contracts if not c.is_null}
    if len(vals) > 1:
        raise StatsError(f"{attr} must be market-wide across live contracts")
    return vals.pop() if vals else 0.0


# ---------------------------------------------------------------------------
# Monte-Carlo oracle
# ---------------------------------------------------------------------------

@dataclass
class OracleEstimate:
    mean: float
    stderr: float

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(value - self.mean) <= k * max(self.stderr, 1e-12)


def monte_carlo_oracle(stats: MarketStats,
                       contracts: Sequence[LongTermContract],
                       n_trials: int,
                       seed: int) -> dict:
    """Sampling estimates of every futures-stage expectation and risk.

    Demands are drawn from the empirical histories, gains from the channel
    models, volunteers uniformly at task level — the same law the analytic
    engine evaluates in closed form.
    """
    if n_trials < 1:
        raise StatsError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    m = stats.n_buyers
    quantities = np.array([c.quantity for c in contracts])
    demands = np.stack([rng.choice(h.samples, size=n_trials) for h in stats.histories])
    committed = np.minimum(demands, quantities[:, None])
    overflow = np.maximum(0, committed.sum(axis=0) - stats.capacity)

    vol = np.zeros((m, n_trials), dtype=int)
    for t in np.nonzero(overflow)[0]:
        pool = np.repeat(np.arange(m), committed[:, t])
        chosen = rng.choice(pool.size, size=overflow[t], replace=False)
        vol[:, t] = np.bincount(pool[chosen], minlength=m)

    gains = np.empty((m, n_trials))
    for i, b in enumerate(stats.buyers):
        cm = b.channel_model
        if isinstance(cm, FixedGain):
            gains[i] = cm.gain
        else:
            gains[i] = rng.uniform(cm.mu1, cm.mu2, size=n_trials)

    vals = np.stack([valuations_vectorized(b, gains[i], stats.task,
                                           stats.seller.compute_rate)
                     for i, b in enumerate(stats.buyers)])

    p = _shared(contracts, "price")
    qb = _shared(contracts, "buyer_penalty")
    qs = _shared(contracts, "seller_penalty")
    n_col = quantities[:, None]
    alphas = demands > n_col

    base = np.where(alphas, n_col * (vals - p),
                    demands * (vals - p) - (n_col - demands) * qb)
    # the forfeit term is counted only for actual volunteers
    forfeit = np.where(vol > 0, vol * (vals - p) - (n_col - vol) * qb, 0.0)
    buyer_sum = base.sum(axis=0) + overflow * qs - forfeit.sum(axis=0)
    seller = (np.where(alphas, n_col * (p - stats.unit_cost),
                       (n_col - demands) * qb).sum(axis=0)
              - overflow * (qs + (p - stats.unit_cost) + qb))

    def est(x):
        x = np.asarray(x, dtype=float)
        se = float(x.std(ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else 0.0
        return OracleEstimate(float(x.mean()), se)

    return {
        "alpha": [est(alphas[i]) for i in range(m)],
        "overflow": est(overflow),
        "volunteers": [est(vol[i]) for i in range(m)],
        "volunteer_exceedance": [est(vol[i] > 0) for i in range(m)],
        "buyer_sum_utility": est(buyer_sum),
        "seller_utility": est(seller),
        "under_floor": [est(base[i] < stats.risk.u_min) for i in range(m)],
    }

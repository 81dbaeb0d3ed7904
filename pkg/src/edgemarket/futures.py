"""Futures-stage bilateral negotiation with overbooking.

Buyers sweep the shared term grid (price, buyer penalty, seller compensation)
and their own quantity range, reporting every candidate that clears the gates
they can evaluate alone (price window and the utility-risk surrogate); the
volunteer-risk bound is a joint constraint over the full quantity vector, so
the seller enforces it during selection and it is re-audited on the signed
contracts.  The seller picks, per shared-term slice, the quantity vector that
maximizes its expected utility subject to the overbooked capacity, the
volunteer bound, and its own risk gate.  Small markets are solved by exact
combination search; larger ones by deterministic coordinate ascent (the
overflow expectation couples buyers, so no capacity-indexed dynamic program
is exact), followed by a monotone repair pass for the volunteer bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import LongTermContract
from .stats import MarketStats, convolve_pmfs

EXACT_COMBO_CAP = 200_000


class NegotiationError(ValueError):
    pass


@dataclass(frozen=True)
class NegotiationGrid:
    """Discrete search grid for futures terms.

    Quantity bounds are per buyer; shared terms (price and both penalties) use
    one market-wide grid.  All sweeps run from the maximum downward.
    """

    p_max: float = 10.0
    p_min: float = 1.0
    dp: float = 1.0
    q_max: float = 5.0
    q_min: float = 1.0
    dq: float = 1.0
    qt_max: float = 5.0
    qt_min: float = 1.0
    dqt: float = 1.0
    n_max: tuple[int, ...] = ()
    n_min: tuple[int, ...] = ()

    def __post_init__(self):
        for hi, lo, step in ((self.p_max, self.p_min, self.dp),
                             (self.q_max, self.q_min, self.dq),
                             (self.qt_max, self.qt_min, self.dqt)):
            if hi < lo or step <= 0:
                raise NegotiationError("grid bounds need max >= min and step > 0")
        if len(self.n_max) != len(self.n_min):
            raise NegotiationError("quantity bounds must pair up per buyer")
        if any(hi < lo or lo < 0 for hi, lo in zip(self.n_max, self.n_min)):
            raise NegotiationError("per-buyer quantity bounds need max >= min >= 0")

    @staticmethod
    def _descending(hi: float, lo: float, step: float) -> tuple[float, ...]:
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return tuple(hi - k * step for k in range(count))

    @property
    def prices(self) -> tuple[float, ...]:
        return self._descending(self.p_max, self.p_min, self.dp)

    @property
    def buyer_penalties(self) -> tuple[float, ...]:
        return self._descending(self.q_max, self.q_min, self.dq)

    @property
    def seller_penalties(self) -> tuple[float, ...]:
        return self._descending(self.qt_max, self.qt_min, self.dqt)

    def quantities(self, i: int) -> tuple[int, ...]:
        return tuple(range(self.n_max[i], self.n_min[i] - 1, -1))

    def sizes(self) -> tuple[int, int, int, int]:
        """(L_p, L_q, L_qt, L_n) with L_n the largest per-buyer range."""
        l_n = max((hi - lo + 1 for hi, lo in zip(self.n_max, self.n_min)), default=0)
        return (len(self.prices), len(self.buyer_penalties),
                len(self.seller_penalties), l_n)

    @staticmethod
    def from_histories(histories, **overrides) -> "NegotiationGrid":
        """Default grid: unit-step shared terms, quantity bounds from each
        buyer's demand-history extremes."""
        n_max = tuple(max(h.samples) for h in histories)
        n_min = tuple(min(h.samples) for h in histories)
        return NegotiationGrid(n_max=n_max, n_min=n_min, **overrides)


@dataclass
class CandidateSet:
    """Buyer-reported candidates, stored compactly.

    Per buyer the gates depend only on (price, buyer_penalty, quantity), so
    the set factorizes as {(price, buyer_penalty) -> passing quantities} x the
    full compensation grid.  `visits` counts conceptually visited grid points.
    """

    by_slice: list[dict[tuple[float, float], np.ndarray]]
    grid: NegotiationGrid
    visits: int = 0

    def contracts(self, i: int) -> list[LongTermContract]:
        """Materialized candidate list for buyer i (small markets / tests)."""
        out = []
        for (p, q), ns in self.by_slice[i].items():
            for qt in self.grid.seller_penalties:
                for n in ns:
                    out.append(LongTermContract(i, int(n), p, q, qt))
        return out

    def is_empty(self, i: int) -> bool:
        return not self.by_slice[i]


@dataclass
class FuturesResult:
    contracts: dict[int, LongTermContract]
    interaction_count: int
    candidate_visits: int
    expected_seller_utility: float
    exact: bool


# ---------------------------------------------------------------------------
# Buyer side
# ---------------------------------------------------------------------------

def enumerate_buyer_candidates(i: int, stats: MarketStats, grid: NegotiationGrid
                               ) -> tuple[dict[tuple[float, float], np.ndarray], int]:
    """All {quantity, price, penalties} candidates clearing buyer i's own gates:
    the price must cover the seller's unit cost without exceeding the buyer's
    expected valuation, and the Markov utility-risk surrogate must pass.

    The volunteer-risk bound needs the whole market's quantity vector, which
    does not exist at report time; alone, a buyer can never overflow the
    capacity, so that bound is enforced during seller selection instead.
    """
    ns = np.array(grid.quantities(i), dtype=int)
    visits = (len(grid.prices) * len(grid.buyer_penalties)
              * len(grid.seller_penalties) * len(ns))
    ev = stats.expected_valuation(i)
    out: dict[tuple[float, float], np.ndarray] = {}
    if len(ns) == 0:
        return out, visits

    alphas = np.array([stats.alpha(i, int(n)) for n in ns])
    er = stats.mean_demand(i)
    for p in grid.prices:
        if not (stats.unit_cost <= p <= ev):
            continue
        for q in grid.buyer_penalties:
            eu = (alphas * ns * (ev - p)
                  + (1 - alphas) * (er * (ev - p) - (ns - er) * q))
            ok = (eu / stats.risk.u_min > 1.0 - stats.risk.rho1) & (ns > 0)
            if ok.any():
                out[(p, q)] = ns[ok]
    return out, visits


def report_candidates(stats: MarketStats, grid: NegotiationGrid) -> CandidateSet:
    by_slice = []
    visits = 0
    for i in range(stats.n_buyers):
        cands, v = enumerate_buyer_candidates(i, stats, grid)
        by_slice.append(cands)
        visits += v
    return CandidateSet(by_slice, grid, visits)


# ---------------------------------------------------------------------------
# Seller side
# ---------------------------------------------------------------------------

def _seller_terms(stats: MarketStats, i: int, ns: np.ndarray, p: float, q: float
                  ) -> np.ndarray:
    """Per-buyer additive part of the seller expectation for each quantity."""
    if ns.size == 0:
        return np.empty(0)
    alphas = np.array([stats.alpha(i, int(n)) for n in ns])
    er = stats.mean_demand(i)
    return alphas * ns * (p - stats.unit_cost) + (1 - alphas) * (ns - er) * q


def _overflow_mean(stats: MarketStats, quantities: Sequence[int],
                   cache: dict[tuple[int, ...], float]) -> float:
    key = tuple(int(n) for n in quantities)
    if key not in cache:
        pmf = convolve_pmfs([stats.committed(i, n) for i, n in enumerate(key)])
        idx = np.arange(len(pmf))
        cache[key] = float(np.maximum(0, idx - stats.capacity) @ pmf)
    return cache[key]


def _better(challenger: tuple, incumbent: tuple | None) -> bool:
    """Deterministic preference: higher expected utility, then larger total
    quantity, lower price, lower buyer penalty, lower compensation, then the
    lexicographically larger quantity vector."""
    if incumbent is None:
        return True
    eu, total, p, q, qt, vec = challenger
    ieu, itotal, ip, iq, iqt, ivec = incumbent
    if abs(eu - ieu) > 1e-9:
        return eu > ieu
    return (total, -p, -q, -qt, vec) > (itotal, -ip, -iq, -iqt, ivec)


class _VolunteerGate:
    """Cached exact volunteer-risk checks over candidate quantity vectors."""

    def __init__(self, stats: MarketStats):
        self.stats = stats
        self.rest_cache: dict[tuple, np.ndarray] = {}
        self.exceed_cache: dict[tuple, float] = {}
        self.vec_cache: dict[tuple, bool] = {}

    def vector_ok(self, vec: Sequence[int]) -> bool:
        vec = tuple(vec)
        if vec not in self.vec_cache:
            self.vec_cache[vec] = self._vector_ok(vec)
        return self.vec_cache[vec]

    def _vector_ok(self, vec: tuple) -> bool:
        if sum(vec) <= self.stats.capacity:
            return True
        m = len(vec)
        for i in range(m):
            if vec[i] == 0:
                continue
            rest_key = tuple((j, vec[j]) for j in range(m) if j != i and vec[j])
            key = (i, vec[i], rest_key)
            if key not in self.exceed_cache:
                if rest_key not in self.rest_cache:
                    self.rest_cache[rest_key] = convolve_pmfs(
                        [self.stats.committed(j, n) for j, n in rest_key])
                self.exceed_cache[key] = self.stats.exceedance_given_rest(
                    i, vec[i], self.rest_cache[rest_key])
            if self.exceed_cache[key] > self.stats.risk.rho2:
                return False
        return True


def _ascend_slice(stats: MarketStats, gains: list[np.ndarray],
                  choices: list[np.ndarray], kappa: float,
                  max_sweeps: int = 40) -> tuple[np.ndarray, float]:
    """Best of two deterministic coordinate-ascent starts: all-null and
    greedy per-buyer maxima trimmed to the booking limit."""
    null_start = np.zeros(stats.n_buyers, dtype=int)
    greedy_start = null_start.copy()
    budget = stats.booking_limit
    for i, g in enumerate(gains):
        k = int(np.argmax(g))
        n = int(choices[i][k])
        if g[k] > 0 and n <= budget:
            greedy_start[i] = n
            budget -= n

    best_vec, best_val = None, -np.inf
    for start in (null_start, greedy_start):
        vec = _ascend_from(stats, start.copy(), gains, choices, kappa, max_sweeps)
        val = _score(stats, vec, gains, choices, kappa)
        if val > best_val + 1e-12 or (val > best_val - 1e-12 and best_vec is not None
                                      and vec.sum() > best_vec.sum()):
            best_vec, best_val = vec, val
    return best_vec, best_val


def _ascend_from(stats: MarketStats, current: np.ndarray, gains, choices,
                 kappa: float, max_sweeps: int) -> np.ndarray:
    m = stats.n_buyers
    for _ in range(max_sweeps):
        changed = False
        pmfs = [stats.committed(i, int(current[i])) for i in range(m)]
        prefix = [np.array([1.0])]
        for pmf in pmfs[:-1]:
            prefix.append(np.convolve(prefix[-1], pmf))
        suffix = [np.array([1.0])]
        for pmf in pmfs[:0:-1]:
            suffix.append(np.convolve(suffix[-1], pmf))
        suffix.reverse()
        for i in range(m):
            rest = np.convolve(prefix[i], suffix[i])
            tail1 = np.concatenate((np.cumsum(rest[::-1])[::-1], [0.0]))
            tailx = np.concatenate(
                (np.cumsum((rest * np.arange(len(rest)))[::-1])[::-1], [0.0]))
            # E[max(0, min(demand_i, n) + rest - capacity)] for every n at once:
            # m(s) is the overflow tail expectation given own committed load s
            top = int(choices[i].max())
            s = np.arange(top + 1)
            cut = np.clip(stats.capacity - s + 1, 0, len(rest))
            m_s = tailx[cut] + (s - stats.capacity) * tail1[cut]
            hist = stats.committed(i, top)          # pmf with mass >= top pooled
            surv = 1.0 - np.concatenate(([0.0], np.cumsum(hist)))[: top + 1]
            below = np.concatenate(([0.0], np.cumsum(hist[:-1] * m_s[:-1])))[: top + 1]
            ev_by_n = below + np.where(s < top, surv * m_s, hist[top] * m_s[top])

            budget = stats.booking_limit - int(current.sum() - current[i])
            vals = gains[i] - kappa * ev_by_n[choices[i]]
            vals[choices[i] > budget] = -np.inf
            best_val = vals.max()
            near = np.nonzero(vals > best_val - 1e-12)[0]
            best_k = int(near[np.argmax(choices[i][near])])
            if int(choices[i][best_k]) != current[i]:
                current[i] = int(choices[i][best_k])
                changed = True
        if not changed:
            break
    return current


def _score(stats, vec, gains, choices, kappa) -> float:
    total = 0.0
    for i in range(len(vec)):
        k = int(np.nonzero(choices[i] == vec[i])[0][0])
        total += float(gains[i][k])
    if any(vec):
        total -= kappa * _overflow_mean(stats, vec, {})
    return total


def _repair_volunteer_risk(stats: MarketStats, vec: np.ndarray,
                           options: list[np.ndarray]) -> np.ndarray:
    """Shrink quantities until every live buyer's volunteer risk passes.

    Exceedance is monotone in every quantity, so stepping the worst violator
    down its candidate ladder (ending at null) always terminates."""
    vec = vec.copy()
    ladders = [np.sort(opts)[::-1] for opts in options]
    while True:
        if vec.sum() <= stats.capacity:
            return vec
        exceed = stats.volunteer_exceedances(vec)
        exceed[vec == 0] = 0.0
        worst = int(np.argmax(exceed))
        if exceed[worst] <= stats.risk.rho2:
            return vec
        ladder = ladders[worst]
        lower = ladder[ladder < vec[worst]]
        vec[worst] = int(lower[0]) if lower.size else 0


def seller_select(candidates: CandidateSet, stats: MarketStats,
                  grid: NegotiationGrid) -> tuple[dict[int, LongTermContract], float, bool]:
    """Pick one candidate per buyer (or null) maximizing the seller expectation
    under the overbooked capacity, the per-buyer volunteer bound, and the
    seller risk gate.

    Shared terms are market-wide, so the search runs per (price, penalty)
    slice; compensation only scales the overflow cost and the candidate sets
    never depend on it, so the large-market path searches its minimum grid
    value only (the objective is nonincreasing in it), while the exact path
    iterates every compensation value.
    """
    m = stats.n_buyers
    slices = sorted({key for cs in candidates.by_slice for key in cs},
                    key=lambda pq: (-pq[0], -pq[1]))
    best: tuple | None = None
    ev_cache: dict[tuple[int, ...], float] = {}
    gate = _VolunteerGate(stats)
    exact_all = True

    for (p, q) in slices:
        options = [candidates.by_slice[i].get((p, q), np.empty(0, dtype=int))
                   for i in range(m)]
        slice_gains = [_seller_terms(stats, i, opts, p, q)
                       for i, opts in enumerate(options)]
        # overflow only subtracts, so the gain sum bounds the slice's best
        upper = sum(float(g.max()) for g in slice_gains if g.size and g.max() > 0)
        if best is not None and upper < best[0] - 1e-9:
            continue
        combos = 1
        for opts in options:
            combos *= opts.size + 1
        if combos <= EXACT_COMBO_CAP:
            pools = [np.concatenate(([0], opts)).astype(int) for opts in options]
            gains = [np.concatenate(([0.0], g)) for g in slice_gains]
            for combo in itertools.product(*(range(len(pool)) for pool in pools)):
                vec = tuple(int(pools[i][k]) for i, k in enumerate(combo))
                total_n = sum(vec)
                if total_n > stats.booking_limit:
                    continue
                if not gate.vector_ok(vec):
                    continue
                g = sum(gains[i][k] for i, k in enumerate(combo))
                ev_overflow = _overflow_mean(stats, vec, ev_cache) if total_n else 0.0
                for qt in grid.seller_penalties:
                    eu = g - ev_overflow * (qt + (p - stats.unit_cost) + q)
                    if not stats.check_seller_risk(eu):
                        continue
                    cand = (eu, total_n, p, q, qt, vec)
                    if _better(cand, best):
                        best = cand
        else:
            exact_all = False
            kappa = grid.qt_min + (p - stats.unit_cost) + q
            gains = [np.concatenate(([0.0], g)) for g in slice_gains]
            choices = [np.concatenate(([0], opts)).astype(int) for opts in options]
            vec_arr, _ = _ascend_slice(stats, gains, choices, kappa)
            vec_arr = _repair_volunteer_risk(stats, vec_arr, options)
            eu = _score(stats, vec_arr, gains, choices, kappa)
            vec = tuple(int(n) for n in vec_arr)
            if stats.check_seller_risk(eu):
                cand = (eu, sum(vec), p, q, grid.qt_min, vec)
                if _better(cand, best):
                    best = cand

    if best is None:
        return ({i: LongTermContract(i, 0, 0.0, 0.0, 0.0) for i in range(m)}, 0.0, exact_all)
    eu, _total, p, q, qt, vec = best
    contracts = {i: LongTermContract(i, vec[i], p if vec[i] else 0.0,
                                     q if vec[i] else 0.0, qt if vec[i] else 0.0)
                 for i in range(m)}
    return contracts, eu, exact_all


def negotiate_futures(stats: MarketStats, grid: NegotiationGrid) -> FuturesResult:
    """Full futures round: every buyer reports candidates, the seller selects.

    Interactions: one per reported candidate set plus one seller broadcast.
    """
    candidates = report_candidates(stats, grid)
    contracts, eu, exact = seller_select(candidates, stats, grid)
    return FuturesResult(contracts=contracts,
                         interaction_count=stats.n_buyers + 1,
                         candidate_visits=candidates.visits,
                         expected_seller_utility=eu,
                         exact=exact)


# ---------------------------------------------------------------------------
# Independent constraint audit
# ---------------------------------------------------------------------------

def audit_contracts(stats: MarketStats, contracts: dict[int, LongTermContract],
                    grid: NegotiationGrid) -> dict[str, bool]:
    """Re-check every gate on the final signed vector from first principles."""
    vec = [contracts[i].quantity if i in contracts else 0 for i in range(stats.n_buyers)]
    live = [(i, c) for i, c in contracts.items() if not c.is_null]
    price_ok = all(stats.unit_cost <= c.price <= stats.expected_valuation(i)
                   for i, c in live)
    capacity_ok = sum(vec) <= (1 + stats.risk.overbook_rate) * stats.capacity + 1e-9
    utility_ok = all(stats.utility_risk_ok(i, c.quantity, c.price, c.buyer_penalty)
                     for i, c in live)
    exceed = stats.volunteer_exceedances(vec) if live else np.zeros(len(vec))
    volunteer_ok = all(exceed[i] <= stats.risk.rho2 for i, _c in live)
    ordered = [contracts[i] if i in contracts else LongTermContract(i, 0, 0, 0, 0)
               for i in range(stats.n_buyers)]
    seller_ok = (not live) or stats.check_seller_risk(
        stats.expected_seller_utility(ordered))
    return {
        "price_window": price_ok,
        "capacity": capacity_ok,
        "buyer_utility_risk": utility_ok,
        "volunteer_risk": volunteer_ok,
        "seller_risk": seller_ok,
    }

"""Per-transaction execution: demand realization, contract fulfillment,
volunteer selection under shortage, and spot negotiation over the residue.

Shortage and surplus are mutually exclusive in a transaction: overcommitted
tasks are pushed back onto uniformly drawn volunteers, and only leftover
capacity is offered on the spot side to over-demand fixed buyers and arriving
occasional buyers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    BuyerProfile,
    LongTermContract,
    ModelError,
    SellerProfile,
    TaskConfig,
    TemporaryContract,
    UniformGain,
    seller_unit_cost,
    transmission_time,
    unit_valuation,
)


@dataclass(frozen=True)
class SpotBuyer:
    """One participant of a spot round: an over-demand fixed buyer's remainder
    or an arriving occasional buyer."""

    buyer_id: int
    demand: int
    valuation: float
    transmission_s: float


@dataclass
class MarketDraw:
    """Realized uncertainty of one transaction."""

    fb_demands: np.ndarray            # tasks each fixed buyer actually carries
    fb_gains: np.ndarray
    fb_valuations: np.ndarray
    fb_transmission_s: np.ndarray
    occasionals: list[SpotBuyer]


@dataclass
class TransactionOutcome:
    realized_demands: np.ndarray
    committed: np.ndarray             # min(demand, contract quantity)
    volunteer_tasks: np.ndarray
    residual_supply: int
    spot_contracts: list[TemporaryContract]
    fb_total_utility: float
    spot_buyer_utility: float
    seller_futures_utility: float
    seller_spot_utility: float
    fulfilled: int                    # contract tasks actually served
    defaulted: int                    # volunteered + contracted-but-unused
    interactions: int
    task_latencies_ms: np.ndarray
    served_total: int
    decision_time_ms: float
    audit: dict = field(default_factory=dict)

    @property
    def buyer_utility(self) -> float:
        return self.fb_total_utility + self.spot_buyer_utility

    @property
    def seller_utility(self) -> float:
        return self.seller_futures_utility + self.seller_spot_utility


class TransactionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Realization
# ---------------------------------------------------------------------------

def realize_demands(fb_profiles: Sequence[BuyerProfile],
                    fb_demands: Sequence[int],
                    task: TaskConfig,
                    seller: SellerProfile,
                    ob_rate: float,
                    ob_demand_range: tuple[int, int],
                    ob_profile_sampler,
                    rng: np.random.Generator) -> MarketDraw:
    """Draw one transaction's uncertainty.

    Fixed-buyer demands come from the caller (trace row or history sampler);
    their gains are fresh uniform draws.  The occasional-buyer count is
    Poisson, each with a uniform demand and a gain fixed at trade time.
    """
    m = len(fb_profiles)
    demands = np.asarray(fb_demands, dtype=int)
    if demands.shape != (m,) or (demands < 0).any():
        raise TransactionError("need one nonnegative demand per fixed buyer")
    gains = np.empty(m)
    vals = np.empty(m)
    ttx = np.empty(m)
    for i, b in enumerate(fb_profiles):
        cm = b.channel_model
        if not isinstance(cm, UniformGain):
            raise TransactionError("fixed buyers use uniform channel models")
        gains[i] = rng.uniform(cm.mu1, cm.mu2)
        vals[i] = unit_valuation(b, gains[i], task, seller.compute_rate)
        ttx[i] = transmission_time(task, b.tx_power, gains[i])

    lo, hi = ob_demand_range
    count = rng.poisson(ob_rate) if ob_rate > 0 else 0
    obs = []
    for j in range(count):
        profile, gain = ob_profile_sampler(rng)
        demand = int(rng.integers(lo, hi + 1))
        if demand <= 0:
            continue
        obs.append(SpotBuyer(
            buyer_id=m + j,
            demand=demand,
            valuation=unit_valuation(profile, gain, task, seller.compute_rate),
            transmission_s=transmission_time(task, profile.tx_power, gain)))
    return MarketDraw(demands, gains, vals, ttx, obs)


def select_volunteers(committed: Sequence[int], capacity: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Uniform task-level volunteer draw: the shortage is met by sampling
    committed tasks without replacement across buyers."""
    committed = np.asarray(committed, dtype=int)
    if (committed < 0).any():
        raise TransactionError("committed counts must be >= 0")
    shortage = int(committed.sum()) - capacity
    if shortage <= 0:
        return np.zeros(len(committed), dtype=int)
    pool = np.repeat(np.arange(len(committed)), committed)
    chosen = rng.choice(pool.size, size=shortage, replace=False)
    return np.bincount(pool[chosen], minlength=len(committed))


# ---------------------------------------------------------------------------
# Spot negotiation
# ---------------------------------------------------------------------------

def negotiate_spot(buyers: Sequence[SpotBuyer],
                   residual: int,
                   price_values: Sequence[float],
                   unit_cost: float,
                   quantity_floor: int = 1
                   ) -> tuple[list[TemporaryContract], int, int]:
    """One-shot spot round over residual supply.

    Sweeps the shared price downward; a buyer is eligible at a price that
    covers the service cost without exceeding its valuation; the seller keeps
    the price maximizing margin times feasible fill.  Returns the contracts,
    the number of candidate grid points visited, and the interaction count.
    """
    if residual < 0:
        raise TransactionError("residual supply must be >= 0")
    if residual == 0 or not buyers:
        return [], 0, 0
    visits = 0
    best_utility = 0.0
    best: tuple[float, list[TemporaryContract]] | None = None
    for p in price_values:
        eligible = [b for b in buyers if unit_cost <= p <= b.valuation]
        visits += sum(max(0, b.demand - quantity_floor + 1) for b in buyers)
        if not eligible:
            continue
        fill = _max_fill([b.demand for b in eligible], residual, quantity_floor)
        utility = sum(fill) * (p - unit_cost)
        if utility > best_utility + 1e-12:
            best_utility = utility
            best = (p, [TemporaryContract(b.buyer_id, n, p)
                        for b, n in zip(eligible, fill) if n > 0])
    contracts = best[1] if best else []
    return contracts, visits, len(buyers) + 1


def _max_fill(demands: Sequence[int], residual: int, floor: int) -> list[int]:
    """Largest total allocation with per-buyer amounts in {0} or [floor, demand],
    resolved deterministically in buyer order."""
    if floor <= 1:
        out = []
        left = residual
        for d in demands:
            take = min(d, left)
            out.append(take)
            left -= take
        return out
    # small exact knapsack over reachable totals, only needed for floor > 1
    reachable = {0: []}
    for d in demands:
        nxt = {}
        for total, alloc in reachable.items():
            for take in [0] + list(range(floor, d + 1)):
                t = total + take
                if t <= residual and (t not in nxt):
                    nxt[t] = alloc + [take]
        reachable = nxt
    best_total = max(reachable)
    return reachable[best_total]


# ---------------------------------------------------------------------------
# Transaction execution
# ---------------------------------------------------------------------------

def execute_transaction(contracts: dict[int, LongTermContract],
                        draw: MarketDraw,
                        seller: SellerProfile,
                        task: TaskConfig,
                        spot_prices: Sequence[float],
                        rng: np.random.Generator,
                        include_spot: bool = True,
                        measure_time: bool = False) -> TransactionOutcome:
    """Fulfill long-term contracts, volunteer off any shortage, then trade the
    residue on the spot side.  Raises on any violated accounting invariant."""
    m = len(draw.fb_demands)
    quantities = np.array([contracts[i].quantity if i in contracts else 0
                           for i in range(m)], dtype=int)
    unit_cost = seller_unit_cost(seller, task)
    t0 = time.perf_counter() if measure_time else 0.0

    committed = np.minimum(draw.fb_demands, quantities)
    volunteers = select_volunteers(committed, seller.capacity, rng)
    overflow = int(volunteers.sum())
    residual = seller.capacity - int(committed.sum()) + overflow
    if residual < 0:
        raise TransactionError("negative residual supply")

    spot_buyers = []
    if include_spot:
        # over-demand fixed buyers bring only the over-contract excess; a
        # contract-less buyer's excess is its whole demand
        for i in range(m):
            extra = int(draw.fb_demands[i]) - int(quantities[i])
            if extra > 0:
                spot_buyers.append(SpotBuyer(i, extra, float(draw.fb_valuations[i]),
                                             float(draw.fb_transmission_s[i])))
        spot_buyers.extend(draw.occasionals)
    spot_contracts, _visits, spot_ni = negotiate_spot(
        spot_buyers, residual, spot_prices, unit_cost)
    decision_ms = (time.perf_counter() - t0) * 1e3 if measure_time else 0.0

    live = [(i, contracts[i]) for i in range(m)
            if i in contracts and not contracts[i].is_null]
    alphas = {i: draw.fb_demands[i] > c.quantity for i, c in live}

    # buyer side: realized contract utilities, compensation, forfeits
    fb_total = 0.0
    for i, c in live:
        v = float(draw.fb_valuations[i])
        d = int(draw.fb_demands[i])
        if alphas[i]:
            fb_total += c.quantity * (v - c.price)
        else:
            fb_total += d * (v - c.price) - (c.quantity - d) * c.buyer_penalty
        w = int(volunteers[i])
        if w > 0:
            fb_total += w * c.seller_penalty
            fb_total -= w * (v - c.price) - (c.quantity - w) * c.buyer_penalty

    # seller side, itemized for the conservation audit
    cash_in = sum(c.quantity * c.price for i, c in live if alphas[i])
    cash_in += sum((c.quantity - int(draw.fb_demands[i])) * c.buyer_penalty
                   for i, c in live if not alphas[i])
    ref = live[0][1] if live else None
    cash_out = overflow * (ref.price + ref.buyer_penalty + ref.seller_penalty) if ref else 0.0
    costed = sum(c.quantity for i, c in live if alphas[i]) - overflow
    service_cost = costed * unit_cost
    seller_futures = cash_in - cash_out - service_cost

    spot_lookup = {b.buyer_id: b for b in spot_buyers}
    spot_in = sum(c.quantity * c.price for c in spot_contracts)
    spot_served = sum(c.quantity for c in spot_contracts)
    seller_spot = spot_in - spot_served * unit_cost
    spot_buyer_total = sum(c.quantity * (spot_lookup[c.buyer_id].valuation - c.price)
                           for c in spot_contracts)

    fulfilled = int(committed.sum()) - overflow
    defaulted = overflow + sum(c.quantity - int(draw.fb_demands[i])
                               for i, c in live if not alphas[i])
    contracted = sum(c.quantity for _i, c in live)
    if fulfilled + defaulted != contracted:
        raise TransactionError("task accounting broke: served+defaulted != contracted")
    if fulfilled + spot_served > seller.capacity:
        raise TransactionError("served tasks exceed capacity")
    if spot_served > residual:
        raise TransactionError("spot allocation exceeds residual supply")

    interactions = (1 if live else 0) + spot_ni

    # per-task completion times: transmission + remote compute + an equal share
    # of the transaction's decision latency
    lat = float(rng.uniform(1.0, 15.0))
    served_total = fulfilled + spot_served
    latencies = np.empty(served_total)
    pos = 0
    share = interactions * lat / served_total if served_total else 0.0
    compute_ms = task.data_size_bits / seller.compute_rate * 1e3
    for i, c in live:
        k = int(committed[i]) - int(volunteers[i])
        if k > 0:
            latencies[pos:pos + k] = draw.fb_transmission_s[i] * 1e3 + compute_ms + share
            pos += k
    for c in spot_contracts:
        b = spot_lookup[c.buyer_id]
        latencies[pos:pos + c.quantity] = b.transmission_s * 1e3 + compute_ms + share
        pos += c.quantity

    outcome = TransactionOutcome(
        realized_demands=draw.fb_demands.copy(),
        committed=committed,
        volunteer_tasks=volunteers,
        residual_supply=residual,
        spot_contracts=spot_contracts,
        fb_total_utility=fb_total,
        spot_buyer_utility=spot_buyer_total,
        seller_futures_utility=seller_futures,
        seller_spot_utility=seller_spot,
        fulfilled=fulfilled,
        defaulted=defaulted,
        interactions=interactions,
        task_latencies_ms=latencies,
        served_total=served_total,
        decision_time_ms=decision_ms,
        audit={
            "cash_in": cash_in + spot_in,
            "cash_out": cash_out,
            "service_cost": service_cost + spot_served * unit_cost,
            "contracted": contracted,
        },
    )
    _verify_money(outcome, unit_cost)
    return outcome


def _verify_money(outcome: TransactionOutcome, unit_cost: float) -> None:
    """Itemized cash flows must reproduce the utility formulas exactly."""
    lhs = (outcome.audit["cash_in"] - outcome.audit["cash_out"]
           - outcome.audit["service_cost"])
    rhs = outcome.seller_futures_utility + outcome.seller_spot_utility
    if abs(lhs - rhs) > 1e-6:
        raise TransactionError(f"money conservation violated: {lhs} != {rhs}")

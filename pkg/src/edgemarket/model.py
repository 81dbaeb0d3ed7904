"""Closed-form market quantities: task times, energies, valuations, utilities, costs.

Everything in this module is a pure function of its arguments.  Money is a
dimensionless real; one task occupies one resource block.  Valuations may come
out negative for poor channels — filtering them is the negotiators' job, not
this module's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence


class ModelError(ValueError):
    """Raised when inputs violate a documented precondition."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskConfig:
    """Per-task constants shared by every participant.

    data_size_bits: payload of a single task (bits).
    bandwidth_hz:   buyer-to-seller link bandwidth (Hz).
    w1, w2:         weights of saved time / saved energy in a buyer's valuation.
    w3:             weight of the seller's per-task energy cost.
    """

    data_size_bits: float
    bandwidth_hz: float
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0

    def __post_init__(self):
        if not (self.data_size_bits > 0 and self.bandwidth_hz > 0):
            raise ModelError("data_size_bits and bandwidth_hz must be positive")
        if min(self.w1, self.w2, self.w3) < 0:
            raise ModelError("weights must be nonnegative")


@dataclass(frozen=True)
class FixedGain:
    """Channel model of a spot participant: the gain is known at trade time."""

    gain: float

    def __post_init__(self):
        if not self.gain > 0:
            raise ModelError("channel gain must be positive")

    def mean(self) -> float:
        return self.gain


@dataclass(frozen=True)
class UniformGain:
    """Channel model of a fixed buyer: gain ~ U(mu1, mu2) per transaction."""

    mu1: float
    mu2: float

    def __post_init__(self):
        if not (0 < self.mu1 <= self.mu2):
            raise ModelError("require 0 < mu1 <= mu2")

    def mean(self) -> float:
        return 0.5 * (self.mu1 + self.mu2)


@dataclass(frozen=True)
class BuyerProfile:
    """Static capabilities of a buyer (fixed, occasional, or spot)."""

    compute_rate: float        # local processing rate, bits/s
    tx_power: float            # transmission power, watt
    compute_power: float       # local processing power, watt
    channel_model: FixedGain | UniformGain

    def __post_init__(self):
        if not (self.compute_rate > 0 and self.tx_power > 0 and self.compute_power > 0):
            raise ModelError("buyer rates and powers must be positive")


@dataclass(frozen=True)
class SellerProfile:
    compute_rate: float        # bits/s
    compute_power: float       # watt
    capacity: int              # resource blocks
    hardware_unit_cost: float = 0.0
    desired_utility: float = 0.0

    def __post_init__(self):
        if not self.compute_rate > 0:
            raise ModelError("seller compute_rate must be positive")
        if self.capacity < 0:
            raise ModelError("capacity must be >= 0")


@dataclass(frozen=True)
class LongTermContract:
    """Futures-stage terms; quantity == 0 encodes "no contract"."""

    buyer_id: int
    quantity: int
    price: float
    buyer_penalty: float       # paid by a buyer per contracted-but-unused task
    seller_penalty: float      # compensation per task pushed back onto a volunteer

    def __post_init__(self):
        if self.quantity < 0:
            raise ModelError("contract quantity must be >= 0")
        if min(self.price, self.buyer_penalty, self.seller_penalty) < 0:
            raise ModelError("price and penalties must be >= 0")

    @property
    def is_null(self) -> bool:
        return self.quantity == 0


@dataclass(frozen=True)
class TemporaryContract:
    """Spot-stage terms over residual supply."""

    buyer_id: int
    quantity: int
    price: float

    def __post_init__(self):
        if self.quantity < 0 or self.price < 0:
            raise ModelError("quantity and price must be >= 0")


# ---------------------------------------------------------------------------
# Closed-form quantities
# ---------------------------------------------------------------------------

def transmission_time(task: TaskConfig, tx_power: float, gain: float) -> float:
    """Upload time of one task over a Shannon-rate link, seconds."""
    snr = tx_power * gain
    if not snr > 0 or not math.isfinite(snr):
        raise ModelError("SNR must be positive and finite")
    return task.data_size_bits / (task.bandwidth_hz * math.log2(1.0 + snr))


def edge_completion_time(task: TaskConfig, buyer: BuyerProfile, gain: float,
                         seller_rate: float) -> float:
    """Upload plus remote processing time of one offloaded task, seconds."""
    return transmission_time(task, buyer.tx_power, gain) + task.data_size_bits / seller_rate


def unit_valuation(buyer: BuyerProfile, gain: float, task: TaskConfig,
                   seller_rate: float) -> float:
    """Per-task value of edge service: weighted saved time plus saved energy.

    Saved time is local processing time minus edge completion time; saved
    energy is local processing energy minus transmission energy.  Either term
    (and the total) may be negative on a bad channel.
    """
    d = task.data_size_bits
    t_local = d / buyer.compute_rate
    t_save = t_local - edge_completion_time(task, buyer, gain, seller_rate)
    t_tx = transmission_time(task, buyer.tx_power, gain)
    c_save = buyer.compute_power * t_local - buyer.tx_power * t_tx
    return task.w1 * t_save + task.w2 * c_save


def seller_unit_cost(seller: SellerProfile, task: TaskConfig) -> float:
    """Seller's cost of serving one task: weighted energy plus hardware share."""
    energy = task.data_size_bits * seller.compute_power / seller.compute_rate
    return task.w3 * energy + seller.hardware_unit_cost


# ---------------------------------------------------------------------------
# Realized utilities
# ---------------------------------------------------------------------------

def demand_exceeds(contract_quantity: int, realized_demand: int) -> bool:
    """The over-demand indicator: true iff realized demand exceeds the contract."""
    return realized_demand > contract_quantity


def fb_utility(contract: LongTermContract, realized_demand: int, valuation: float) -> float:
    """Realized utility of one fixed buyer from its long-term contract.

    Over-demand: the buyer uses (and pays for) the full contracted quantity.
    Under-demand: it uses what it needs and pays the per-task buyer penalty on
    the contracted remainder.
    """
    if realized_demand < 0:
        raise ModelError("realized_demand must be >= 0")
    n, p, q = contract.quantity, contract.price, contract.buyer_penalty
    if demand_exceeds(n, realized_demand):
        return n * (valuation - p)
    return realized_demand * (valuation - p) - (n - realized_demand) * q


def volunteer_count(committed: Iterable[int], capacity: int) -> int:
    """Tasks contracted for the seller that must run locally instead.

    `committed` holds each buyer's usable quantity min(demand, contract).
    Zero when capacity covers the total, the excess otherwise.
    """
    total = sum(committed)
    return max(0, total - capacity)


def fb_sum_utility(entries: Sequence[tuple[LongTermContract, int, float, int]],
                   seller_penalty: float,
                   capacity: int | None = None) -> float:
    """Sum utility of all fixed buyers in one transaction.

    Each entry is (contract, realized_demand, valuation, volunteer_tasks).
    Volunteered tasks earn the per-task compensation, and each volunteer
    forfeits the utility it would have drawn from serving that many tasks
    under its contract.
    """
    total_vol = 0
    for contract, demand, _val, vol in entries:
        committed = min(demand, contract.quantity)
        if vol < 0 or vol > committed:
            raise ModelError(
                f"buyer {contract.buyer_id}: volunteer tasks {vol} outside [0, {committed}]")
        total_vol += vol
    if capacity is not None:
        expected = volunteer_count(
            (min(d, c.quantity) for c, d, _v, _w in entries), capacity)
        if total_vol != expected:
            raise ModelError(
                f"volunteer total {total_vol} inconsistent with capacity arithmetic "
                f"(expected {expected})")

    total = total_vol * seller_penalty
    for contract, demand, val, vol in entries:
        total += fb_utility(contract, demand, val)
        if vol > 0:
            # an actual volunteer forfeits the utility of serving `vol` tasks
            total -= fb_utility(contract, vol, val)
    return total


def seller_futures_utility(entries: Sequence[tuple[LongTermContract, int]],
                           volunteers: int,
                           unit_cost: float) -> float:
    """Seller utility from the futures side of one transaction.

    Payments arrive for the full contracted quantity of over-demand buyers and
    as penalties on under-demand remainders; each volunteered task costs the
    seller its compensation, the refunded margin, and the buyer-side penalty.
    """
    if volunteers < 0:
        raise ModelError("volunteers must be >= 0")
    total = 0.0
    for contract, demand in entries:
        n, p, q = contract.quantity, contract.price, contract.buyer_penalty
        if demand_exceeds(n, demand):
            total += n * (p - unit_cost)
        else:
            total += (n - demand) * q
    if volunteers:
        # shared terms: every non-null contract carries the same p/q/q~ triple
        live = [c for c, _d in entries if not c.is_null]
        if not live:
            raise ModelError("volunteers reported without any live contract")
        ref = live[0]
        total -= volunteers * (ref.seller_penalty + (ref.price - unit_cost) + ref.buyer_penalty)
    return total


def spot_utilities(contracts: Sequence[TemporaryContract],
                   valuations: Sequence[float],
                   unit_cost: float) -> tuple[float, float]:
    """(buyers_total, seller_total) over a transaction's temporary contracts.

    Both sides settle on the allocated quantity.
    """
    if len(contracts) != len(valuations):
        raise ModelError("one valuation per temporary contract required")
    buyers = sum(c.quantity * (v - c.price) for c, v in zip(contracts, valuations))
    seller = sum(c.quantity * (c.price - unit_cost) for c in contracts)
    return buyers, seller

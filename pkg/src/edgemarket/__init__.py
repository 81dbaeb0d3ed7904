"""Desk-scale simulator of a hybrid futures/spot edge-resource market with
overbooking, risk-gated contract negotiation, and a learned renewal policy."""

from .model import (
    BuyerProfile,
    FixedGain,
    LongTermContract,
    SellerProfile,
    TaskConfig,
    TemporaryContract,
    UniformGain,
    fb_sum_utility,
    fb_utility,
    seller_futures_utility,
    seller_unit_cost,
    spot_utilities,
    unit_valuation,
)
from .stats import (
    EmpiricalDemand,
    MarketStats,
    OverflowDistribution,
    RiskConfig,
    expect_alpha,
    expect_valuation,
    expected_demand,
    monte_carlo_oracle,
    overflow_distribution,
    volunteer_distribution,
)
from .futures import NegotiationGrid, audit_contracts, negotiate_futures
from .spot import execute_transaction, negotiate_spot, realize_demands, select_volunteers
from .renewal import RLConfig, RenewalAgent, reputation_value, reward, run_training
from .harness import (
    MarketConfig,
    MarketSession,
    compute_metrics,
    generate_trace,
    load_config,
    load_trace,
    run_method,
    run_monte_carlo,
    save_trace,
    train_agent,
)

__version__ = "0.1.0"

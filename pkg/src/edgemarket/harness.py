"""Experiment orchestration: configuration, demand traces, market sessions,
the method suite (hybrid mechanism plus four baselines), metric computation,
and seeded Monte-Carlo averaging.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .futures import NegotiationGrid, negotiate_futures
from .model import BuyerProfile, FixedGain, LongTermContract, SellerProfile, TaskConfig, UniformGain
from .renewal import ACTION_CONTINUE, ACTION_RENEW, RLConfig, RenewalAgent, reputation_value, run_training
from .spot import MarketDraw, TransactionOutcome, execute_transaction, realize_demands
from .stats import EmpiricalDemand, MarketStats, RiskConfig

METHODS = ("oh-trust", "conspot", "confutures", "hybridfs", "random")

METRICS_HEADER = ("method,run,buyer_utility,seller_utility,potsu,vorm,trlc,uor,"
                  "ni,ptct_ms,rt_ms")


class ConfigError(ValueError):
    pass


class TraceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BuyerRanges:
    """Sampling ranges for buyer device parameters."""

    compute_rate_min: float = 1e9 / 600
    compute_rate_max: float = 1.5e9 / 600
    tx_power_min: float = 0.5
    tx_power_max: float = 0.55
    compute_power_min: float = 0.45
    compute_power_max: float = 0.5
    mu1: float = 100.0
    mu2: float = 400.0


@dataclass(frozen=True)
class SyntheticTraceSpec:
    """Per-buyer Poisson demand with slow compounding drift (nonstationary)."""

    rate_min: float = 12.0
    rate_max: float = 28.0
    drift_min: float = -0.02
    drift_max: float = 0.02
    clip_min: int = 2
    clip_max: int = 60


@dataclass(frozen=True)
class MarketConfig:
    fb_count: int = 30
    ob_rate: float = 20.0
    ob_demand_min: int = 1
    ob_demand_max: int = 30
    runs: int = 1
    seed: int = 0
    transactions: int = 30
    history_days: int = 30
    seller: SellerProfile = field(default_factory=lambda: SellerProfile(
        compute_rate=1.5e12 / 600, compute_power=0.7, capacity=600,
        hardware_unit_cost=0.01, desired_utility=2400.0))
    task: TaskConfig = field(default_factory=lambda: TaskConfig(
        data_size_bits=1.5e6, bandwidth_hz=6e6, w1=7.0, w2=7.0, w3=1.0))
    buyers: BuyerRanges = field(default_factory=BuyerRanges)
    risk: RiskConfig = field(default_factory=RiskConfig)
    rl: RLConfig = field(default_factory=RLConfig)
    grid_p_max: float = 10.0
    grid_p_min: float = 1.0
    grid_dp: float = 1.0
    grid_q_max: float = 5.0
    grid_q_min: float = 1.0
    grid_dq: float = 1.0
    grid_qt_max: float = 5.0
    grid_qt_min: float = 1.0
    grid_dqt: float = 1.0
    trace_path: str | None = None
    trace: SyntheticTraceSpec = field(default_factory=SyntheticTraceSpec)

    def grid_for(self, histories) -> NegotiationGrid:
        return NegotiationGrid.from_histories(
            histories,
            p_max=self.grid_p_max, p_min=self.grid_p_min, dp=self.grid_dp,
            q_max=self.grid_q_max, q_min=self.grid_q_min, dq=self.grid_dq,
            qt_max=self.grid_qt_max, qt_min=self.grid_qt_min, dqt=self.grid_dqt)

    def spot_prices(self) -> tuple[float, ...]:
        count = int(math.floor((self.grid_p_max - self.grid_p_min) / self.grid_dp + 1e-9)) + 1
        return tuple(self.grid_p_max - k * self.grid_dp for k in range(count))


_CONFIG_SECTIONS = {
    "market": {"fb_count": int, "ob_rate": float, "ob_demand_min": int,
               "ob_demand_max": int, "runs": int, "seed": int,
               "transactions": int, "history_days": int},
    "seller": {"compute_rate": float, "compute_power": float, "capacity": int,
               "hardware_unit_cost": float, "desired_utility": float},
    "task": {"data_size_bits": float, "bandwidth_hz": float,
             "w1": float, "w2": float, "w3": float},
    "buyers": {"compute_rate_min": float, "compute_rate_max": float,
               "tx_power_min": float, "tx_power_max": float,
               "compute_power_min": float, "compute_power_max": float,
               "mu1": float, "mu2": float},
    "risk": {"rho1": float, "rho2": float, "rho3": float, "u_min": float,
             "overbook_rate": float},
    "grid": {"p_max": float, "p_min": float, "dp": float, "q_max": float,
             "q_min": float, "dq": float, "qt_max": float, "qt_min": float,
             "dqt": float},
    "rl": {"discount": float, "soft_update": float, "epsilon_start": float,
           "epsilon_end": float, "epsilon_decay_steps": int,
           "renew_penalty": float, "w4": float, "w5": float, "w6": float,
           "w7": float, "replay_capacity": int, "minibatch": int,
           "learning_rate": float, "horizon": int, "hidden": int,
           "episodes": int},
    "trace": {"path": str, "rate_min": float, "rate_max": float,
              "drift_min": float, "drift_max": float, "clip_min": int,
              "clip_max": int},
}


def parse_config_text(text: str) -> MarketConfig:
    """Parse the flat `section.key = value` configuration format."""
    values: dict[str, dict] = {s: {} for s in _CONFIG_SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key '{key}' needs a section prefix")
        section, name = key.split(".", 1)
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section '{section}'")
        if name not in _CONFIG_SECTIONS[section]:
            raise ConfigError(f"line {lineno}: unknown key '{section}.{name}'")
        caster = _CONFIG_SECTIONS[section][name]
        try:
            values[section][name] = caster(value) if caster is not str else value
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {e}") from None
    return _build_config(values)


def load_config(path: str | Path) -> MarketConfig:
    return parse_config_text(Path(path).read_text())


def _build_config(values: dict[str, dict]) -> MarketConfig:
    base = MarketConfig()
    market = values["market"]
    seller = replace(base.seller, **values["seller"]) if values["seller"] else base.seller
    task = replace(base.task, **values["task"]) if values["task"] else base.task
    buyers = replace(base.buyers, **values["buyers"]) if values["buyers"] else base.buyers
    risk = replace(base.risk, **values["risk"]) if values["risk"] else base.risk
    rl = replace(base.rl, **values["rl"]) if values["rl"] else base.rl
    grid_kwargs = {f"grid_{k}": v for k, v in values["grid"].items()}
    trace_vals = dict(values["trace"])
    trace_path = trace_vals.pop("path", None)
    trace = replace(base.trace, **trace_vals) if trace_vals else base.trace
    return replace(base, seller=seller, task=task, buyers=buyers, risk=risk,
                   rl=rl, trace_path=trace_path, trace=trace,
                   **market, **grid_kwargs)


# ---------------------------------------------------------------------------
# Demand traces
# ---------------------------------------------------------------------------

@dataclass
class DemandTrace:
    """Per-buyer daily task counts: the first `history_days` seed the demand
    history, the rest drive realized demands transaction by transaction."""

    counts: dict[int, list[int]]

    def buyers(self) -> list[int]:
        return sorted(self.counts)

    def days(self) -> int:
        return min(len(v) for v in self.counts.values())

    def history(self, buyer: int, history_days: int) -> EmpiricalDemand:
        return EmpiricalDemand.of(self.counts[buyer][:history_days])

    def demand_row(self, t: int, history_days: int) -> list[int]:
        day = history_days + t
        if day >= self.days():
            raise TraceError(f"trace exhausted at transaction {t}")
        return [self.counts[b][day] for b in self.buyers()]


def generate_trace(n_buyers: int, days: int, seed: int,
                   spec: SyntheticTraceSpec | None = None) -> DemandTrace:
    spec = spec or SyntheticTraceSpec()
    rng = np.random.default_rng(seed)
    rates = rng.uniform(spec.rate_min, spec.rate_max, size=n_buyers)
    drifts = rng.uniform(spec.drift_min, spec.drift_max, size=n_buyers)
    counts: dict[int, list[int]] = {}
    for i in range(n_buyers):
        lam = np.clip(rates[i] * (1.0 + drifts[i]) ** np.arange(days),
                      spec.clip_min, spec.clip_max)
        counts[i] = [int(x) for x in rng.poisson(lam)]
    return DemandTrace(counts)


def save_trace(trace: DemandTrace, path: str | Path) -> None:
    lines = ["day,buyer_id,task_count"]
    for b in trace.buyers():
        for day, c in enumerate(trace.counts[b]):
            lines.append(f"{day},{b},{c}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_trace(path: str | Path, expected_buyers: int | None = None) -> DemandTrace:
    """Parse a `day,buyer_id,task_count` file; rejects malformed rows with the
    offending line number and validates per-buyer day monotonicity."""
    counts: dict[int, list[int]] = {}
    last_day: dict[int, int] = {}
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "day,buyer_id,task_count":
        raise TraceError(f"{path}: missing 'day,buyer_id,task_count' header")
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 3:
            raise TraceError(f"{path}:{lineno}: expected 3 comma-separated fields")
        try:
            day, buyer, count = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise TraceError(f"{path}:{lineno}: fields must be integers") from None
        if count < 0:
            raise TraceError(f"{path}:{lineno}: negative task_count")
        if buyer in last_day and day <= last_day[buyer]:
            raise TraceError(f"{path}:{lineno}: day not increasing for buyer {buyer}")
        last_day[buyer] = day
        counts.setdefault(buyer, []).append(count)
    if not counts:
        raise TraceError(f"{path}: no data rows")
    if expected_buyers is not None:
        missing = set(range(expected_buyers)) - set(counts)
        if missing:
            raise TraceError(f"{path}: missing buyers {sorted(missing)}")
    return DemandTrace(counts)


# ---------------------------------------------------------------------------
# Market session
# ---------------------------------------------------------------------------

@dataclass
class SessionResult:
    outcomes: list[TransactionOutcome]
    offline_interactions: int
    renewals: int
    decision_times_ms: list[float]


class MarketSession:
    """State of one simulated run: buyer profiles, growing demand histories,
    the standing contracts, and the transaction loop.

    Methods sharing the futures stage differ only in who decides renewal;
    `mode` picks contract-less variants.  A renew action consumes no practical
    transaction but extends the horizon; a safety valve converts renewals into
    continues if an agent stalls in a renew loop.
    """

    def __init__(self, config: MarketConfig, seed: int, mode: str = "hybrid",
                 include_spot: bool = True, measure_time: bool = False,
                 trace: DemandTrace | None = None):
        self.config = config
        self.mode = mode
        self.include_spot = include_spot
        self.measure_time = measure_time
        ss = np.random.SeedSequence([config.seed, seed])
        setup_seed, market_seed, trace_seed = ss.spawn(3)
        self.setup_rng = np.random.default_rng(setup_seed)
        self.market_rng = np.random.default_rng(market_seed)
        if trace is not None:
            self.trace = trace
        elif config.trace_path:
            self.trace = load_trace(config.trace_path, config.fb_count)
        else:
            days = config.history_days + 4 * config.transactions + 8
            self.trace = generate_trace(config.fb_count, days,
                                        int(trace_seed.generate_state(1)[0]),
                                        config.trace)
        self.profiles = [self._draw_profile() for _ in range(config.fb_count)]
        self.histories = [self.trace.history(b, config.history_days)
                          for b in self.trace.buyers()[: config.fb_count]]
        self.base_grid = config.grid_for(self.histories)
        self.contracts: dict[int, LongTermContract] = {}
        self.outcomes: list[TransactionOutcome] = []
        self.offline_interactions = 0
        self.renewals = 0
        self.executed = 0
        self.horizon = config.transactions
        self.max_steps = 5 * config.transactions
        self.steps = 0
        self._norms = self._normalizers()

    # -- setup helpers ---------------------------------------------------------

    def _draw_profile(self) -> BuyerProfile:
        r = self.config.buyers
        rng = self.setup_rng
        return BuyerProfile(
            compute_rate=rng.uniform(r.compute_rate_min, r.compute_rate_max),
            tx_power=rng.uniform(r.tx_power_min, r.tx_power_max),
            compute_power=rng.uniform(r.compute_power_min, r.compute_power_max),
            channel_model=UniformGain(r.mu1, r.mu2))

    def _ob_sampler(self, rng: np.random.Generator):
        r = self.config.buyers
        profile = BuyerProfile(
            compute_rate=rng.uniform(r.compute_rate_min, r.compute_rate_max),
            tx_power=rng.uniform(r.tx_power_min, r.tx_power_max),
            compute_power=rng.uniform(r.compute_power_min, r.compute_power_max),
            channel_model=FixedGain(rng.uniform(r.mu1, r.mu2)))
        return profile, profile.channel_model.gain

    def _normalizers(self) -> dict[str, np.ndarray | float]:
        n_max = np.maximum([max(h.samples) for h in self.histories], 1)
        cfg = self.config
        ob_cap = cfg.ob_rate + 5 * math.sqrt(max(cfg.ob_rate, 1.0))
        return {
            "demand": n_max.astype(float),
            "utility": cfg.fb_count * cfg.grid_p_max * float(n_max.max()),
            "ni": cfg.fb_count + ob_cap + 2,
            "rep": cfg.rl.w4 * max(cfg.seller.capacity, 1),
        }

    def market_stats(self) -> MarketStats:
        return MarketStats(list(self.histories), list(self.profiles),
                           self.config.seller, self.config.task, self.config.risk)

    # -- contract life cycle -----------------------------------------------------

    def sign_contracts(self) -> None:
        """(Re)negotiate long-term contracts on the current histories."""
        grid = self.config.grid_for(self.histories)
        result = negotiate_futures(self.market_stats(), grid)
        self.contracts = result.contracts
        self.offline_interactions += result.interaction_count
        self.last_negotiation = result

    # -- transaction loop ----------------------------------------------------------

    def _execute_one(self) -> TransactionOutcome:
        cfg = self.config
        demands = self.trace.demand_row(self.executed, cfg.history_days)
        draw = realize_demands(self.profiles, demands, cfg.task, cfg.seller,
                               cfg.ob_rate, (cfg.ob_demand_min, cfg.ob_demand_max),
                               self._ob_sampler, self.market_rng)
        outcome = execute_transaction(self.contracts, draw, cfg.seller, cfg.task,
                                      cfg.spot_prices(), self.market_rng,
                                      include_spot=self.include_spot,
                                      measure_time=self.measure_time)
        self.histories = [h.extended([d]) for h, d in zip(self.histories, demands)]
        self.outcomes.append(outcome)
        self.executed += 1
        return outcome

    def reset(self) -> np.ndarray:
        """Sign initial contracts (contract modes) and execute transaction 1 to
        form the first observation."""
        if self.mode == "hybrid":
            self.sign_contracts()
        outcome = self._execute_one()
        return self._observe(outcome)

    def _observe(self, outcome: TransactionOutcome,
                 ni_override: int | None = None) -> np.ndarray:
        n = self._norms
        rep = reputation_value(outcome.fulfilled, outcome.defaulted,
                               self.config.rl.w4, self.config.rl.w5)
        ni = outcome.interactions if ni_override is None else ni_override
        return np.concatenate([
            outcome.realized_demands / n["demand"],
            [(outcome.buyer_utility + outcome.seller_utility) / n["utility"],
             ni / n["ni"],
             rep / n["rep"]],
        ])

    def reward_inputs(self, outcome: TransactionOutcome) -> tuple[float, float]:
        rep = reputation_value(outcome.fulfilled, outcome.defaulted,
                               self.config.rl.w4, self.config.rl.w5)
        return outcome.buyer_utility + outcome.seller_utility, rep

    def step(self, action: int) -> tuple[np.ndarray, tuple[float, float], bool]:
        """Advance one slot: renew (no transaction, horizon grows) or continue
        (execute the next practical transaction)."""
        self.steps += 1
        if action == ACTION_RENEW and self.steps < self.max_steps:
            self.sign_contracts()
            self.renewals += 1
            self.horizon += 1
            obs = self._observe(self.outcomes[-1],
                                ni_override=self.config.fb_count + 1)
            return obs, (0.0, 0.0), False
        outcome = self._execute_one()
        done = self.executed >= self.horizon
        return self._observe(outcome), self.reward_inputs(outcome), done

    def run_pinned(self, action: int = ACTION_CONTINUE) -> SessionResult:
        """Run the whole horizon with a fixed policy (baselines)."""
        self.reset()
        done = self.executed >= self.horizon
        while not done:
            _, _, done = self.step(action)
        return self.result()

    def run_with_agent(self, agent: RenewalAgent) -> SessionResult:
        obs = self.reset()
        done = self.executed >= self.horizon
        while not done:
            obs, _, done = self.step(agent.act(obs, explore=False))
        return self.result()

    def result(self) -> SessionResult:
        return SessionResult(self.outcomes, self.offline_interactions, self.renewals,
                             [o.decision_time_ms for o in self.outcomes])


# ---------------------------------------------------------------------------
# Baseline without negotiation
# ---------------------------------------------------------------------------

def run_random(config: MarketConfig, seed: int,
               measure_time: bool = False) -> SessionResult:
    """Quantities and per-buyer prices drawn uniformly within grid bounds,
    capped by the capacity; no negotiation (one interaction per transaction),
    but a draw only trades when it is individually rational for both sides
    (price between service cost and the buyer's valuation)."""
    session = MarketSession(config, seed, mode="contractless",
                            include_spot=False, measure_time=measure_time)
    prices = config.spot_prices()
    unit_cost = session.market_stats().unit_cost
    outcomes = []
    for t in range(config.transactions):
        cfg = config
        demands = session.trace.demand_row(t, cfg.history_days)
        draw = realize_demands(session.profiles, demands, cfg.task, cfg.seller,
                               cfg.ob_rate, (cfg.ob_demand_min, cfg.ob_demand_max),
                               session._ob_sampler, session.market_rng)
        t0 = time.perf_counter() if measure_time else 0.0
        rng = session.market_rng
        left = cfg.seller.capacity
        buyer_total = seller_total = 0.0
        served = 0
        lat_entries = []
        participants = ([(i, int(d), float(draw.fb_valuations[i]),
                          float(draw.fb_transmission_s[i]))
                         for i, d in enumerate(draw.fb_demands) if d > 0]
                        + [(o.buyer_id, o.demand, o.valuation, o.transmission_s)
                           for o in draw.occasionals])
        cash_in = 0.0
        for bid, demand, val, ttx in participants:
            q = int(rng.integers(0, demand + 1))
            price = float(rng.choice(prices))
            if not (unit_cost <= price <= val):
                continue
            q = min(q, left)
            left -= q
            if q == 0:
                continue
            buyer_total += q * (val - price)
            seller_total += q * (price - unit_cost)
            served += q
            cash_in += q * price
            lat_entries.append((q, ttx))
        decision_ms = (time.perf_counter() - t0) * 1e3 if measure_time else 0.0
        lat = float(rng.uniform(1.0, 15.0))
        share = 1 * lat / served if served else 0.0
        compute_ms = cfg.task.data_size_bits / cfg.seller.compute_rate * 1e3
        latencies = np.concatenate([
            np.full(q, ttx * 1e3 + compute_ms + share) for q, ttx in lat_entries
        ]) if lat_entries else np.empty(0)
        outcomes.append(TransactionOutcome(
            realized_demands=draw.fb_demands.copy(),
            committed=np.zeros(cfg.fb_count, dtype=int),
            volunteer_tasks=np.zeros(cfg.fb_count, dtype=int),
            residual_supply=left,
            spot_contracts=[],
            fb_total_utility=0.0,
            spot_buyer_utility=buyer_total,
            seller_futures_utility=0.0,
            seller_spot_utility=seller_total,
            fulfilled=0, defaulted=0,
            interactions=1,
            task_latencies_ms=latencies,
            served_total=served,
            decision_time_ms=decision_ms,
            audit={"cash_in": cash_in, "cash_out": 0.0,
                   "service_cost": served * unit_cost, "contracted": 0},
        ))
    return SessionResult(outcomes, 0, 0, [o.decision_time_ms for o in outcomes])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def compute_metrics(outcomes: Sequence[TransactionOutcome],
                    seller: SellerProfile,
                    rl: RLConfig,
                    offline_interactions: int = 0) -> dict[str, float]:
    """One metrics row from a run's transaction outcomes."""
    if not outcomes:
        raise ValueError("no outcomes to report")
    n = len(outcomes)
    reps = [reputation_value(o.fulfilled, o.defaulted, rl.w4, rl.w5) for o in outcomes]
    n_plus = sum(o.fulfilled for o in outcomes)
    n_minus = sum(o.defaulted for o in outcomes)
    all_lat = np.concatenate([o.task_latencies_ms for o in outcomes]) \
        if any(o.served_total for o in outcomes) else np.empty(0)
    return {
        "buyer_utility": float(np.mean([o.buyer_utility for o in outcomes])),
        "seller_utility": float(np.mean([o.seller_utility for o in outcomes])),
        "potsu": float(np.mean([o.seller_utility >= seller.desired_utility
                                for o in outcomes])),
        "vorm": float(np.mean(reps)),
        "trlc": n_plus / (n_plus + n_minus) if (n_plus + n_minus) else 0.0,
        "uor": float(np.mean([o.served_total / seller.capacity for o in outcomes])),
        "ni": (sum(o.interactions for o in outcomes) + offline_interactions) / n,
        "ptct_ms": float(all_lat.mean()) if all_lat.size else 0.0,
        "rt_ms": float(np.mean([o.decision_time_ms for o in outcomes])),
    }


# ---------------------------------------------------------------------------
# Methods
# ---------------------------------------------------------------------------

def train_agent(config: MarketConfig, seed: int | None = None) -> tuple[RenewalAgent, list[float]]:
    """Train the renewal policy on fresh sessions of this market."""
    seed = config.seed if seed is None else seed

    def factory(ep_seed: int):
        train_cfg = replace(config, transactions=config.rl.horizon)
        return MarketSession(train_cfg, ep_seed, mode="hybrid")

    return run_training(factory, config.rl, seed)


def run_method(method: str, config: MarketConfig, seed: int,
               agent: RenewalAgent | None = None,
               measure_time: bool = False) -> dict[str, float]:
    """Execute one seeded run of a method and report its metrics row."""
    if method not in METHODS:
        raise ConfigError(f"unknown method '{method}' (choose from {METHODS})")
    if method == "random":
        result = run_random(config, seed, measure_time)
    elif method == "conspot":
        session = MarketSession(config, seed, mode="contractless",
                                include_spot=True, measure_time=measure_time)
        result = session.run_pinned(ACTION_CONTINUE)
    elif method == "confutures":
        session = MarketSession(config, seed, mode="hybrid",
                                include_spot=False, measure_time=measure_time)
        result = session.run_pinned(ACTION_CONTINUE)
    elif method == "hybridfs":
        session = MarketSession(config, seed, mode="hybrid",
                                include_spot=True, measure_time=measure_time)
        result = session.run_pinned(ACTION_CONTINUE)
    else:  # oh-trust
        if agent is None:
            agent, _ = train_agent(config)
        session = MarketSession(config, seed, mode="hybrid",
                                include_spot=True, measure_time=measure_time)
        result = session.run_with_agent(agent)
    return compute_metrics(result.outcomes, config.seller, config.rl,
                           result.offline_interactions)


def run_monte_carlo(config: MarketConfig, method: str,
                    agent: RenewalAgent | None = None,
                    measure_time: bool = False) -> tuple[dict[str, float], list[dict[str, float]]]:
    """Average `config.runs` independent seeded runs; returns (aggregate, rows)."""
    if config.runs < 1:
        raise ConfigError("runs must be >= 1")
    if method == "oh-trust" and agent is None:
        agent, _ = train_agent(config)
    rows = [run_method(method, config, run, agent, measure_time)
            for run in range(config.runs)]
    agg = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return agg, rows


def format_rows(method_rows: dict[str, list[dict[str, float]]]) -> str:
    """Render the metrics CSV (one row per method per run)."""
    lines = [METRICS_HEADER]
    fields = METRICS_HEADER.split(",")[2:]
    for method, rows in method_rows.items():
        for run, row in enumerate(rows):
            cells = [method, str(run)] + [f"{row[f]:.6f}" for f in fields]
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"

"""Episode driver: fundamental process, scheduling, accounting, logging.

One episode is a single-threaded state machine; parallelism happens across
episodes (each owns its seeded generator, results merged by the caller).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .lob import OrderBook, Trade
from .pomdp import (ObsContext, RewardWeights, RolloutRecord, action_to_order,
                    compute_reward, window_stats)


class AccountingError(AssertionError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n: int = 200
    t_sim: int = 2110
    halt_windows: tuple[tuple[int, int], ...] = ((1, 100), (1100, 1110))
    tif: int = 200
    tick: float = 0.01
    v_max: int = 20
    r_max: float = 0.05
    xi: float = 0.05
    omega_b: float = 100.0
    omega_s: float = 100.0
    p0_f: float = 300.0
    gbm_drift: float = 0.0
    gbm_vol_min: float = 0.0
    gbm_vol_max: float = 0.003
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    depth_cap: float = 1000.0

    def validate(self) -> None:
        positive = {"n": self.n, "t_sim": self.t_sim, "tif": self.tif,
                    "v_max": self.v_max, "r_max": self.r_max, "xi": self.xi,
                    "p0_f": self.p0_f, "tick": self.tick}
        for key, val in positive.items():
            if val <= 0:
                raise ValueError(f"{key} must be positive, got {val}")
        if self.gbm_vol_min < 0 or self.gbm_vol_max < self.gbm_vol_min:
            raise ValueError("gbm volatility range must satisfy 0 <= min <= max")
        for lo, hi in self.halt_windows:
            if not (1 <= lo <= hi <= self.t_sim):
                raise ValueError(f"halt window [{lo},{hi}] outside [1,{self.t_sim}]")
        for name in ("short", "cash", "illiquidity", "fundamental",
                     "omega_u", "omega_l"):
            if getattr(self.reward_weights, name) < 0:
                raise ValueError(f"reward weight {name} must be nonnegative")

    def halted(self, t: int) -> bool:
        return any(lo <= t <= hi for lo, hi in self.halt_windows)


@dataclass
class AgentState:
    traits: object
    cash: float
    position: int
    last_step: int = 0   # previous selection time t_{i-1}
    count: int = 0       # selections so far (the index i)


@dataclass(frozen=True)
class DecisionRow:
    step: int
    agent_id: int
    index: int          # per-agent selection index i (1-based)
    gamma: float
    utility: float
    reward: float


@dataclass
class EpisodeLog:
    mids: np.ndarray           # index 0..T, mids[0] = p0_f
    fundamentals: np.ndarray
    exec_volume: np.ndarray    # executed units per step (index 0 unused)
    selected: np.ndarray       # acting agent per step, -1 at index 0
    halted: np.ndarray         # halt-window flag per step (index 0 False)
    trades: list[Trade]
    decisions: list[DecisionRow]
    transitions: list[RolloutRecord]
    gbm_vol: float
    final_cash: np.ndarray
    final_position: np.ndarray

    @property
    def t_sim(self) -> int:
        return len(self.mids) - 1

    def trading_steps(self) -> np.ndarray:
        """Step indices outside halt windows (the bar-forming session)."""
        return np.flatnonzero(~self.halted[1:]) + 1


class Population(Protocol):
    kind: str
    n: int

    def begin_episode(self, cfg: SimConfig, rng: np.random.Generator) -> list: ...


@dataclass(frozen=True)
class MarketView:
    """Market context handed to rule-based deciders."""
    t: int
    mid: float
    fundamental: float
    mids: list
    fundamentals: list
    halted: bool


def fundamental_step(p_prev: float, drift: float, vol: float,
                     rng: np.random.Generator) -> float:
    """One GBM step (unit time): p * exp(drift - vol^2/2 + vol * z)."""
    z = rng.standard_normal()
    return p_prev * math.exp(drift - 0.5 * vol * vol + vol * z)


def episode_rng(seed: int, episode_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, episode_index]))


def run_episode(cfg: SimConfig, population, rng: np.random.Generator,
                episode_index: int = 0,
                record_transitions: bool = True) -> EpisodeLog:
    """Run one full simulation episode and return its log.

    Each step: advance the fundamental, expire orders, uncross after halts,
    record the mid, pick one agent uniformly, let it act, match, settle,
    and (for learning populations) compute its reward and transition.
    """
    cfg.validate()
    traits = population.begin_episode(cfg, rng)
    if len(traits) != population.n:
        raise ValueError("population returned wrong trait count")
    states = [AgentState(tr, cash=float(tr.c0), position=int(tr.w0))
              for tr in traits]
    total_position = sum(st.position for st in states)

    book = OrderBook(initial_price=cfg.p0_f, tick=cfg.tick)
    vol = rng.uniform(cfg.gbm_vol_min, cfg.gbm_vol_max)
    fund = cfg.p0_f
    mids = [cfg.p0_f]
    funds = [cfg.p0_f]
    devs = [0.0]
    exec_volume = np.zeros(cfg.t_sim + 1, dtype=int)
    selected = np.full(cfg.t_sim + 1, -1, dtype=int)
    halted_mask = np.zeros(cfg.t_sim + 1, dtype=bool)
    trades_log: list[Trade] = []
    decisions: list[DecisionRow] = []
    transitions: list[RolloutRecord] = []
    prev_obs: dict[int, tuple] = {}   # j -> (obs, action, presquash, logp)
    rl = population.kind == "rl"

    def settle(trades: list[Trade]) -> None:
        nonlocal total_position
        for tr in trades:
            cost = tr.price * tr.volume
            buyer, seller = states[tr.buy_agent], states[tr.sell_agent]
            buyer.cash -= cost
            buyer.position += tr.volume
            seller.cash += cost
            seller.position -= tr.volume
        trades_log.extend(trades)
        if sum(st.position for st in states) != total_position:
            raise AccountingError("total stock position changed by trading")

    for t in range(1, cfg.t_sim + 1):
        fund = fundamental_step(fund, cfg.gbm_drift, vol, rng)
        book.expire(t)
        halted = cfg.halted(t)
        halted_mask[t] = halted
        step_trades: list[Trade] = []
        if not halted and book.is_crossed:
            step_trades.extend(book.uncross(t))
        mid = book.mid_price(fundamental=fund)
        mids.append(mid)
        funds.append(fund)
        devs.append(math.log(fund / mid))

        j = int(rng.integers(cfg.n))
        selected[t] = j
        st = states[j]
        st.count += 1
        window_start = st.last_step

        if rl:
            ret, volat = window_stats(mids, window_start, t)
            b, s = book.depth_weighted_volumes(cfg.xi, cfg.omega_b,
                                               cfg.omega_s, mid)
            ctx = ObsContext(mid=mid, fundamental=fund, ret=ret, vol=volat,
                             buy_depth=b, sell_depth=s,
                             position=st.position, cash=st.cash)
            obs = population.build_obs(j, ctx, rng)
            action, presquash, logp = population.act(j, obs, rng)
            intent = action_to_order(float(action[0]), float(action[1]),
                                     mid, cfg.v_max, cfg.r_max)
            if intent is not None:
                v, price = intent
                side = "buy" if v > 0 else "sell"
                order = book.new_order(j, side, abs(v), price, t, cfg.tif)
                step_trades.extend(book.submit(order, halted))
            breakdown = compute_reward(ctx, traits[j].alpha, devs, t,
                                       cfg.reward_weights, cfg.depth_cap)
            decisions.append(DecisionRow(t, j, st.count, traits[j].gamma,
                                         breakdown.utility, breakdown.total))
            if st.count > 1 and record_transitions:
                p_obs, p_act, p_pre, p_logp = prev_obs[j]
                rec = RolloutRecord(obs=p_obs, action=p_act, presquash=p_pre,
                                    log_prob=p_logp, reward=breakdown.total,
                                    next_obs=obs, gamma=traits[j].gamma,
                                    episode=episode_index)
                transitions.append(rec)
                population.on_transition(j, rec)
            prev_obs[j] = (obs, action, presquash, logp)
        else:
            view = MarketView(t=t, mid=mid, fundamental=fund, mids=mids,
                              fundamentals=funds, halted=halted)
            intent = population.decide(j, st, view, rng)
            if intent is not None:
                v, price = intent
                side = "buy" if v > 0 else "sell"
                order = book.new_order(j, side, abs(v), price, t, cfg.tif)
                step_trades.extend(book.submit(order, halted))

        settle(step_trades)
        exec_volume[t] = sum(tr.volume for tr in step_trades)
        st.last_step = t

    return EpisodeLog(
        mids=np.array(mids), fundamentals=np.array(funds),
        exec_volume=exec_volume, selected=selected, halted=halted_mask,
        trades=trades_log,
        decisions=decisions, transitions=transitions, gbm_vol=vol,
        final_cash=np.array([st.cash for st in states]),
        final_position=np.array([st.position for st in states], dtype=int),
    )


def episode_utility(log: EpisodeLog) -> float:
    """Discounted cumulative utility of one episode: sum_j sum_i gamma_j^i u."""
    return float(sum(row.gamma ** row.index * row.utility
                     for row in log.decisions))


def aggregate_utility(logs: list[EpisodeLog]) -> float:
    """Mean per-episode discounted cumulative utility across logs."""
    if not logs:
        return 0.0
    return float(np.mean([episode_utility(log) for log in logs]))

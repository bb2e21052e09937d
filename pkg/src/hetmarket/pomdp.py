"""Observation construction, action-to-order conversion, and the reward.

The 11-component observation layout (see OBS_FIELDS) and the reward terms
(CARA-style utility squashed by arctan, short/cash indicators, illiquidity,
and the integrated fundamental-deviation penalty) are the heart of the
POMDP interface between agents and the market.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .traits import AgentTraits, TRAIT_SLOTS, TraitPriors

OBS_DIM = 11
ACTION_DIM = 2

OBS_FIELDS = (
    "asset_ratio",        # w * mid / x
    "asset_to_vmax",      # w / v_max
    "inv_buying_power",   # mid / c
    "ret",                # mean one-step log return over the agent's window
    "vol",                # mean squared deviation of the same log returns
    "pos_to_buy_depth",   # |w| / b_xi
    "pos_to_sell_depth",  # |w| / s_xi
    "blurred_fund_ret",   # log(pf/mid) + noise(sigma_j)
    "sigma",
    "alpha",
    "gamma",
)


@dataclass(frozen=True)
class ObsBounds:
    """Fixed min-max normalization bounds, one (lo, hi) pair per component.

    Values outside the bounds are clipped before the affine map to [-1, 1];
    a zero-width pair maps to 0. The trait bounds default to +-4 prior stds
    so they stay stationary across an experiment.
    """
    asset_ratio: tuple[float, float] = (-2.0, 2.0)
    asset_to_vmax: tuple[float, float] = (-5.0, 5.0)
    inv_buying_power: tuple[float, float] = (0.0, 1.0)
    ret: tuple[float, float] = (-0.05, 0.05)
    vol: tuple[float, float] = (0.0, 0.0025)
    pos_to_buy_depth: tuple[float, float] = (0.0, 10.0)
    pos_to_sell_depth: tuple[float, float] = (0.0, 10.0)
    blurred_fund_ret: tuple[float, float] = (-0.2, 0.2)
    sigma: tuple[float, float] = (0.0, 0.044)
    alpha: tuple[float, float] = (-1.2, 5.2)
    gamma: tuple[float, float] = (0.9, 0.999)

    @classmethod
    def from_priors(cls, priors: TraitPriors, **overrides) -> "ObsBounds":
        defaults = {
            "sigma": (0.0, priors.mu_sigma + 4.0 * priors.lambda_sigma),
            "alpha": (priors.mu_alpha - 4.0 * priors.lambda_alpha,
                      priors.mu_alpha + 4.0 * priors.lambda_alpha),
            "gamma": (priors.gamma_lo, priors.gamma_max),
        }
        defaults.update(overrides)
        return cls(**defaults)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = [getattr(self, name) for name in OBS_FIELDS]
        lo = np.array([p[0] for p in pairs], dtype=float)
        hi = np.array([p[1] for p in pairs], dtype=float)
        return lo, hi


def minmax_normalize(raw: np.ndarray, bounds: ObsBounds) -> np.ndarray:
    """Clip each component to its bounds, then map affinely to [-1, 1]."""
    lo, hi = bounds.arrays()
    clipped = np.clip(np.nan_to_num(raw, nan=0.0, posinf=np.inf, neginf=-np.inf),
                      lo, hi)
    width = hi - lo
    out = np.zeros_like(clipped)
    nz = width > 0
    out[nz] = 2.0 * (clipped[nz] - lo[nz]) / width[nz] - 1.0
    return out


def window_stats(mids: "np.ndarray | list[float]", start: int, end: int) -> tuple[float, float]:
    """Mean and mean-squared-deviation of one-step log returns over (start, end].

    ``mids`` must cover indices 0..end; the window is the gap between the
    agent's previous and current selections.
    """
    if end <= start:
        raise ValueError("window must be nonempty")
    m = np.asarray(mids, dtype=float)
    logs = np.log(m[start + 1:end + 1] / m[start:end])
    ret = float(logs.mean())
    vol = float(np.mean((logs - ret) ** 2))
    return ret, vol


def capped_ratio(num: float, den: float, cap: float) -> float:
    """num/den with an empty denominator saturating at ``cap`` (0 if num == 0)."""
    if den > 0.0:
        return min(num / den, cap)
    return cap if num > 0.0 else 0.0


def illiquidity(b: float, s: float, omega_l: float, cap: float) -> float:
    """Illiquidity of the book: inverse depths plus the imbalance term.

    Each singular term saturates at ``cap``; an empty side makes the
    imbalance term itself saturate.
    """
    inv = capped_ratio(1.0, b, cap) + capped_ratio(1.0, s, cap)
    if min(b, s) > 0.0:
        imbalance = min(max(b, s) / min(b, s) - 1.0, cap)
    else:
        imbalance = cap
    return inv + omega_l * imbalance


def integrated_fundamental_deviation(devs: "np.ndarray | list[float]", t: int) -> float:
    """Penalty for a persistent one-sided deviation of mid from fundamental.

    ``devs[k]`` is log(pf_k / pmid_k). Scans backward from t over the run of
    steps sharing the current deviation sign (the run starts after the most
    recent sign flip; devs[0] == 0 in a fresh episode, so the scan always
    terminates). Each step contributes |devs[t']| / (t + 1 - t').
    """
    d_t = devs[t]
    s = math.copysign(1.0, d_t) if d_t != 0.0 else 0.0
    if s == 0.0:
        return 0.0
    total = 0.0
    tp = t
    while tp >= 1:
        d = devs[tp]
        if d == 0.0 or math.copysign(1.0, d) != s:
            break
        total += abs(d) / (t + 1 - tp)
        tp -= 1
    return total


@dataclass(frozen=True)
class ObsContext:
    """Pre-action market snapshot shared by the observation and the reward."""
    mid: float
    fundamental: float
    ret: float
    vol: float
    buy_depth: float
    sell_depth: float
    position: int
    cash: float

    @property
    def wealth(self) -> float:
        return self.cash + self.position * self.mid


def build_observation(ctx: ObsContext, traits: AgentTraits,
                      rng: np.random.Generator, bounds: ObsBounds,
                      v_max: int, depth_cap: float,
                      mask: frozenset[str] | set[str] = frozenset()) -> np.ndarray:
    """Assemble and normalize the 11-component observation vector."""
    w, mid = ctx.position, ctx.mid
    x = ctx.wealth
    eta = rng.normal(0.0, traits.sigma) if traits.sigma > 0 else 0.0
    if x != 0.0:
        asset_ratio = w * mid / x
    else:
        asset_ratio = 0.0 if w == 0 else math.copysign(math.inf, w)
    raw = np.array([
        asset_ratio,
        w / v_max,
        mid / ctx.cash if ctx.cash != 0.0 else math.inf,
        ctx.ret,
        ctx.vol,
        capped_ratio(abs(w), ctx.buy_depth, depth_cap),
        capped_ratio(abs(w), ctx.sell_depth, depth_cap),
        math.log(ctx.fundamental / mid) + eta,
        traits.sigma,
        traits.alpha,
        traits.gamma,
    ])
    obs = minmax_normalize(raw, bounds)
    if mask:
        for name in mask:
            obs[TRAIT_SLOTS[name]] = 0.0
    return obs


def action_to_order(v_tilde: float, r_tilde: float, mid: float,
                    v_max: int, r_max: float) -> tuple[int, float] | None:
    """Map a policy action to (signed volume, limit price); None when v = 0.

    Volume is ceil(v_max * v_tilde); a positive v buys, negative sells |v|.
    The margin moves the price away from mid against the trade direction
    when r_tilde > 0 (price-sensitive) and toward it when r_tilde < 0.
    """
    v = math.ceil(v_max * v_tilde)
    if v == 0:
        return None
    sign = 1.0 if v_tilde > 0 else -1.0
    price = mid - r_max * sign * r_tilde * mid
    return v, price


@dataclass(frozen=True)
class RolloutRecord:
    """One (o, a, log pi, r, o') transition of a learning agent.

    ``presquash`` keeps the Gaussian draw before the tanh squash so the
    log-probability can be recomputed without an unstable atanh; ``episode``
    marks trajectory boundaries inside a buffer that spans episodes.
    """
    obs: np.ndarray
    action: np.ndarray
    presquash: np.ndarray
    log_prob: float
    reward: float
    next_obs: np.ndarray
    gamma: float
    episode: int


@dataclass(frozen=True)
class RewardWeights:
    short: float = 0.1
    cash: float = 0.1
    illiquidity: float = 0.005
    fundamental: float = 0.2
    omega_u: float = 6e-5
    omega_l: float = 1.0


@dataclass(frozen=True)
class RewardBreakdown:
    utility: float
    short_penalty: float
    cash_penalty: float
    illiquidity_penalty: float
    fundamental_penalty: float
    total: float


def compute_reward(ctx: ObsContext, alpha: float,
                   devs: "np.ndarray | list[float]", t: int,
                   weights: RewardWeights, depth_cap: float) -> RewardBreakdown:
    """Reward of the acting agent from its pre-action snapshot.

    total = u - b_short*1(w<0) - b_cash*1(c<0) - b_illiq*l - b_fund*Rf
    where u squashes the volatility-penalized wealth through arctan.
    """
    w, mid = ctx.position, ctx.mid
    inner = ctx.wealth + ctx.ret * w * mid - 0.5 * alpha * ctx.vol * abs(w * mid)
    utility = (2.0 / math.pi) * math.atan(weights.omega_u * inner)
    short_pen = weights.short * (1.0 if w < 0 else 0.0)
    cash_pen = weights.cash * (1.0 if ctx.cash < 0 else 0.0)
    illiq_pen = weights.illiquidity * illiquidity(
        ctx.buy_depth, ctx.sell_depth, weights.omega_l, depth_cap)
    fund_pen = weights.fundamental * integrated_fundamental_deviation(devs, t)
    total = utility - short_pen - cash_pen - illiq_pen - fund_pen
    return RewardBreakdown(utility, short_pen, cash_pen, illiq_pen, fund_pen, total)

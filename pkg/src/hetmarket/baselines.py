"""Rule-based agent families: zero-intelligence, FCN, and adaptive FCN.

All three share the market interface of the learning agents (one decision
per selection, unit limit orders); FCN mixes fundamentalist, chartist, and
noise return forecasts, and the adaptive variant reweights the first two
components by their recent predictive accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import AgentState, MarketView, SimConfig


@dataclass(frozen=True)
class BaselineParams:
    lambda_f: float = 10.0        # expected fundamental weight
    lambda_c: float = 1.5         # expected chartist weight (calibrated)
    lambda_n: float = 1.0         # expected noise weight
    sigma_n: float = 1e-4         # noise std (shared with ZI order prices)
    tau_f: int = 200              # mean-reversion time of fundamentalists
    alpha_ref: float = 0.10       # reference risk-aversion level (calibrated)
    tau_ref: float = 100.0        # reference time-window size (calibrated)
    tau_diff: float = 20.0        # time-window heterogeneity (calibrated)
    alpha_diff: float = 1.0       # risk-aversion heterogeneity
    eta: float = 0.01             # adFCN weight-update learning rate
    w_max: float = 20.0           # adFCN weight cap (2 * lambda_f)
    order_price_rel_std: float = 0.01  # limit-price spread around prediction
    w_mean: float = 20.0          # expected initial stock position
    c_mean: float = 15000.0       # expected initial cash

    def validate(self) -> None:
        for name in ("lambda_f", "lambda_c", "lambda_n", "sigma_n",
                     "alpha_ref", "tau_ref", "tau_diff", "alpha_diff",
                     "eta", "w_max", "order_price_rel_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tau_f < 1:
            raise ValueError("tau_f must be >= 1")


@dataclass
class FcnTraits:
    w_f: float
    w_c: float
    w_n: float
    tau_f: int
    alpha_t: float
    tau_t: int
    w0: int
    c0: float


def fcn_alpha_tau(w_f: float, w_c: float, p: BaselineParams) -> tuple[float, int]:
    """Per-agent risk aversion and time window from the component weights."""
    alpha_t = p.alpha_ref * (p.alpha_diff + w_f) / (p.alpha_diff + w_c)
    tau_t = math.ceil(p.tau_ref * (p.tau_diff + w_f) / (p.tau_diff + w_c))
    return alpha_t, max(tau_t, 1)


def zi_decide(mid: float, sigma_n: float,
              rng: np.random.Generator) -> tuple[int, float]:
    """Unit order on a fair coin side at mid * exp(N(0, sigma_n^2))."""
    side = 1 if rng.random() < 0.5 else -1
    price = mid * math.exp(rng.normal(0.0, sigma_n)) if sigma_n > 0 else mid
    return side, price


def fcn_predict(tr: FcnTraits, price: float, fundamental: float,
                mids: list, t: int, sigma_n: float,
                rng: np.random.Generator) -> tuple[float, float]:
    """Weighted fundamentalist/chartist/noise return forecast and its price.

    Early in an episode the chartist lag is truncated to the available
    history, and the prediction horizon shrinks with it: extrapolating a
    one-step move over hundreds of steps would let transient noise explode
    exponentially through the price-feedback loop.
    """
    total_w = tr.w_f + tr.w_c + tr.w_n
    noise = rng.normal(0.0, sigma_n) if sigma_n > 0 else 0.0
    if total_w <= 0:
        return 0.0, price
    lag = min(tr.tau_t, t)
    fundamentalist = (tr.w_f / tr.tau_f) * math.log(fundamental / price)
    chartist = (tr.w_c / lag) * math.log(price / mids[t - lag]) if lag >= 1 else 0.0
    r_hat = (fundamentalist + chartist + tr.w_n * noise) / total_w
    # exponent clamp is a pure overflow guard (e^50 ~ 5e21 price ratio)
    p_hat = price * math.exp(min(max(lag * r_hat, -50.0), 50.0))
    return r_hat, p_hat


def fcn_decide(p_hat: float, rel_std: float,
               rng: np.random.Generator) -> tuple[int, float] | None:
    """Unit order around the predicted price: buy below it, sell above it."""
    if rel_std <= 0:
        return None
    p_star = p_hat + rel_std * p_hat * rng.standard_normal()
    p_star = max(p_star, 1e-12)
    if p_star < p_hat:
        return 1, p_star
    if p_star > p_hat:
        return -1, p_star
    return None


def weight_update(w: float, r_hat: float, r: float, eta: float,
                  w_max: float) -> float:
    """Accuracy-driven weight update; a zero return never rewards a call."""
    if r_hat * r > 0:
        return w + eta * 100.0 * abs(r) * (w_max - w)
    return max(0.0, w - eta * 100.0 * (abs(r) + abs(r_hat)) * w)


def adfcn_update(tr: FcnTraits, mids: list, funds: list, t: int,
                 p: BaselineParams, fixed_horizons: bool) -> None:
    """Re-weight fundamentalist vs chartist by recent predictive accuracy.

    Skipped until the history covers both lookbacks (tau_f and 2*tau_t).
    The renormalization preserves w_f + w_c, leaving the noise ratio alone.
    """
    tau_c = tr.tau_t
    if t < tr.tau_f or t < 2 * tau_c:
        return
    rhat_f = math.log(funds[t - tr.tau_f] / mids[t - tr.tau_f])
    r_f = math.log(mids[t] / mids[t - tr.tau_f])
    rhat_c = math.log(mids[t - tau_c] / mids[t - 2 * tau_c])
    r_c = math.log(mids[t] / mids[t - tau_c])
    new_f = weight_update(tr.w_f, rhat_f, r_f, p.eta, p.w_max)
    new_c = weight_update(tr.w_c, rhat_c, r_c, p.eta, p.w_max)
    if new_f + new_c > 0:
        total = tr.w_f + tr.w_c
        tr.w_f = total * new_f / (new_f + new_c)
        tr.w_c = total * new_c / (new_f + new_c)
    if not fixed_horizons:
        tr.alpha_t, tr.tau_t = fcn_alpha_tau(tr.w_f, tr.w_c, p)


def chartist_ratio(traits: list[FcnTraits]) -> float:
    """Median chartist share w_c / (w_f + w_c) over the population."""
    shares = [tr.w_c / (tr.w_f + tr.w_c) if tr.w_f + tr.w_c > 0 else 0.5
              for tr in traits]
    return float(np.median(shares))


class ZiPopulation:
    kind = "rule"

    def __init__(self, n: int, params: BaselineParams | None = None):
        self.n = n
        self.params = params or BaselineParams()

    def begin_episode(self, cfg: SimConfig, rng: np.random.Generator) -> list[FcnTraits]:
        self.params.validate()
        p = self.params
        traits = []
        for _ in range(self.n):
            c0 = rng.uniform(0.0, 2.0 * p.c_mean)
            w0 = math.ceil(rng.uniform(0.0, 2.0 * p.w_mean))
            traits.append(FcnTraits(0.0, 0.0, 1.0, p.tau_f, p.alpha_ref,
                                    int(p.tau_ref), w0, c0))
        return traits

    def decide(self, j: int, state: AgentState, view: MarketView,
               rng: np.random.Generator) -> tuple[int, float] | None:
        return zi_decide(view.mid, self.params.sigma_n, rng)


class FcnPopulation:
    """FCN agents; set ``adaptive`` for the accuracy-reweighting variant
    and ``fixed_horizons`` to pin alpha_t/tau_t at their reference levels."""

    kind = "rule"

    def __init__(self, n: int, params: BaselineParams | None = None,
                 adaptive: bool = False, fixed_horizons: bool = False):
        self.n = n
        self.params = params or BaselineParams()
        self.adaptive = adaptive
        self.fixed_horizons = fixed_horizons
        self.traits: list[FcnTraits] = []

    def begin_episode(self, cfg: SimConfig, rng: np.random.Generator) -> list[FcnTraits]:
        self.params.validate()
        p = self.params
        self.traits = []
        for _ in range(self.n):
            w_f = rng.exponential(p.lambda_f) if p.lambda_f > 0 else 0.0
            w_c = rng.exponential(p.lambda_c) if p.lambda_c > 0 else 0.0
            w_n = rng.exponential(p.lambda_n) if p.lambda_n > 0 else 0.0
            if self.adaptive:
                w_f = min(w_f, p.w_max)
                w_c = min(w_c, p.w_max)
            if self.fixed_horizons:
                alpha_t, tau_t = p.alpha_ref, max(math.ceil(p.tau_ref), 1)
            else:
                alpha_t, tau_t = fcn_alpha_tau(w_f, w_c, p)
            c0 = rng.uniform(0.0, 2.0 * p.c_mean)
            w0 = math.ceil(rng.uniform(0.0, 2.0 * p.w_mean))
            self.traits.append(FcnTraits(w_f, w_c, w_n, p.tau_f, alpha_t,
                                         tau_t, w0, c0))
        return self.traits

    def decide(self, j: int, state: AgentState, view: MarketView,
               rng: np.random.Generator) -> tuple[int, float] | None:
        tr = self.traits[j]
        if self.adaptive:
            adfcn_update(tr, view.mids, view.fundamentals, view.t,
                         self.params, self.fixed_horizons)
        _, p_hat = fcn_predict(tr, view.mid, view.fundamental, view.mids,
                               view.t, self.params.sigma_n, rng)
        return fcn_decide(p_hat, self.params.order_price_rel_std, rng)

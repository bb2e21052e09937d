import math

import numpy as np
import pytest

from hetmarket.pomdp import (ObsBounds, ObsContext, RewardWeights,
                             action_to_order, build_observation, capped_ratio,
                             compute_reward, illiquidity,
                             integrated_fundamental_deviation,
                             minmax_normalize, window_stats)
from hetmarket.traits import AgentTraits, TraitPriors

WEIGHTS = RewardWeights()


def ctx(mid=300.0, fund=300.0, ret=0.0, vol=0.0, b=10.0, s=10.0, w=0,
        cash=15000.0):
    return ObsContext(mid=mid, fundamental=fund, ret=ret, vol=vol,
                      buy_depth=b, sell_depth=s, position=w, cash=cash)


def traits(sigma=0.0, alpha=2.0, gamma=0.95):
    return AgentTraits(sigma=sigma, alpha=alpha, gamma=gamma, w0=20,
                       c0=15000.0)


# -- window statistics --------------------------------------------------------

def test_window_stats_flat_series():
    mids = [300.0] * 10
    ret, vol = window_stats(mids, 2, 9)
    assert ret == 0.0 and vol == 0.0


def test_window_stats_single_step_example():
    mids = [300.0, 300.0 * math.exp(0.01)]
    ret, vol = window_stats(mids, 0, 1)
    assert ret == pytest.approx(0.01, abs=1e-12)
    assert vol == 0.0


def test_window_stats_hand_computed_two_steps():
    mids = [300.0, 303.0, 300.0]
    logs = [math.log(303 / 300), math.log(300 / 303)]
    mean = sum(logs) / 2
    var = sum((v - mean) ** 2 for v in logs) / 2
    ret, vol = window_stats(mids, 0, 2)
    assert ret == pytest.approx(mean, abs=1e-15)
    assert vol == pytest.approx(var, abs=1e-15)


# -- observation --------------------------------------------------------------

def test_blurred_fundamental_zero_sigma_exact():
    bounds = ObsBounds.from_priors(TraitPriors())
    c = ctx(mid=300.0, fund=306.0)
    obs = build_observation(c, traits(sigma=0.0), np.random.default_rng(0),
                            bounds, v_max=20, depth_cap=1e3)
    lo, hi = bounds.blurred_fund_ret
    raw = math.log(306.0 / 300.0)
    expected = 2 * (raw - lo) / (hi - lo) - 1
    assert obs[7] == pytest.approx(expected, abs=1e-12)


def test_observation_components_hand_checked():
    bounds = ObsBounds(
        asset_ratio=(-2, 2), asset_to_vmax=(-5, 5), inv_buying_power=(0, 1),
        ret=(-0.05, 0.05), vol=(0, 0.0025), pos_to_buy_depth=(0, 10),
        pos_to_sell_depth=(0, 10), blurred_fund_ret=(-0.2, 0.2),
        sigma=(0, 0.04), alpha=(0, 4), gamma=(0.9, 0.999))
    c = ctx(mid=300.0, fund=300.0, ret=0.01, vol=0.001, b=5.0, s=2.0, w=10,
            cash=3000.0)
    tr = traits(sigma=0.02, alpha=2.0, gamma=0.95)
    obs = build_observation(c, tr, np.random.default_rng(0), bounds,
                            v_max=20, depth_cap=1e3)
    x = 3000.0 + 10 * 300.0
    assert obs[0] == pytest.approx(2 * ((10 * 300 / x) + 2) / 4 - 1)
    assert obs[1] == pytest.approx(2 * ((10 / 20) + 5) / 10 - 1)
    assert obs[2] == pytest.approx(2 * (300 / 3000) / 1 - 1)
    assert obs[3] == pytest.approx(2 * (0.01 + 0.05) / 0.1 - 1)
    assert obs[4] == pytest.approx(2 * 0.001 / 0.0025 - 1)
    assert obs[5] == pytest.approx(2 * (10 / 5.0) / 10 - 1)
    assert obs[6] == pytest.approx(2 * (10 / 2.0) / 10 - 1)
    assert obs[8] == pytest.approx(2 * 0.02 / 0.04 - 1)
    assert obs[9] == pytest.approx(2 * 2.0 / 4.0 - 1)
    assert obs[10] == pytest.approx(2 * (0.95 - 0.9) / 0.099 - 1)


def test_observation_in_unit_box_and_clipping():
    bounds = ObsBounds.from_priors(TraitPriors())
    rng = np.random.default_rng(3)
    for _ in range(200):
        c = ctx(mid=float(rng.uniform(1, 600)),
                fund=float(rng.uniform(1, 600)),
                ret=float(rng.normal(0, 0.2)), vol=float(abs(rng.normal(0, 0.01))),
                b=float(abs(rng.normal(0, 5))), s=float(abs(rng.normal(0, 5))),
                w=int(rng.integers(-50, 50)),
                cash=float(rng.normal(0, 20000)))
        obs = build_observation(c, traits(sigma=0.02),
                                rng, bounds, v_max=20, depth_cap=1e3)
        assert np.all(obs >= -1.0) and np.all(obs <= 1.0)


def test_normalize_clipping_idempotent():
    bounds = ObsBounds.from_priors(TraitPriors())
    lo, hi = bounds.arrays()
    raw = np.linspace(-100, 100, 11)
    once = np.clip(raw, lo, hi)
    assert np.array_equal(np.clip(once, lo, hi), once)
    assert np.array_equal(minmax_normalize(raw, bounds),
                          minmax_normalize(once, bounds))


def test_normalize_zero_width_bound_maps_to_zero():
    priors = TraitPriors(lambda_alpha=0.0)
    bounds = ObsBounds.from_priors(priors)
    raw = np.zeros(11)
    raw[9] = priors.mu_alpha
    assert minmax_normalize(raw, bounds)[9] == 0.0


def test_trait_mask_zeroes_slots_only():
    bounds = ObsBounds.from_priors(TraitPriors())
    c = ctx()
    tr = traits(sigma=0.01, alpha=1.0, gamma=0.92)
    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    plain = build_observation(c, tr, rng_a, bounds, 20, 1e3)
    masked = build_observation(c, tr, rng_b, bounds, 20, 1e3,
                               mask={"gamma"})
    assert masked[10] == 0.0
    assert np.array_equal(masked[:10], plain[:10])


# -- action conversion --------------------------------------------------------

def test_action_to_order_buy_example():
    v, price = action_to_order(0.5, 0.5, 300.0, 20, 0.05)
    assert v == 10
    assert price == pytest.approx(292.5, abs=1e-10)


def test_action_to_order_sell_example():
    v, price = action_to_order(-0.5, 0.5, 300.0, 20, 0.05)
    assert v == -10
    assert price == pytest.approx(307.5, abs=1e-10)


def test_action_to_order_zero_volume():
    assert action_to_order(0.0, 0.3, 300.0, 20, 0.05) is None
    # ceil makes tiny negatives a zero volume too
    assert action_to_order(-0.01, 0.3, 300.0, 20, 0.05) is None
    # ...but tiny positives round up to one unit
    v, _ = action_to_order(0.01, 0.3, 300.0, 20, 0.05)
    assert v == 1


def test_action_negative_margin_is_aggressive():
    v, price = action_to_order(1.0, -1.0, 300.0, 20, 0.05)
    assert v == 20 and price == pytest.approx(315.0)


# -- illiquidity and depth ratios ----------------------------------------------

def test_illiquidity_balanced_book():
    assert illiquidity(4.0, 4.0, 1.0, 1e3) == pytest.approx(0.5, abs=1e-12)


def test_illiquidity_imbalance_term():
    # 1/2 + 1/8 + (8/2 - 1) = 3.625
    assert illiquidity(2.0, 8.0, 1.0, 1e3) == pytest.approx(3.625, abs=1e-12)


def test_illiquidity_empty_side_saturates():
    assert illiquidity(0.0, 4.0, 1.0, 1e3) == 1e3 + 0.25 + 1e3
    assert illiquidity(0.0, 0.0, 1.0, 1e3) == 3e3


def test_capped_ratio_cases():
    assert capped_ratio(5.0, 2.0, 1e3) == 2.5
    assert capped_ratio(5.0, 0.0, 1e3) == 1e3
    assert capped_ratio(0.0, 0.0, 1e3) == 0.0
    assert capped_ratio(1e9, 1.0, 1e3) == 1e3


# -- integrated fundamental deviation ------------------------------------------

def test_rf_zero_when_aligned():
    assert integrated_fundamental_deviation([0.0, 0.01, 0.0], 2) == 0.0


def test_rf_flip_one_step_ago():
    devs = [0.0, -0.02, 0.05]
    assert integrated_fundamental_deviation(devs, 2) == pytest.approx(
        0.05, abs=1e-15)


def test_rf_persistent_run_hand_sum():
    devs = [0.0, 0.01, 0.02, 0.03]
    # t=3: terms |0.03|/1 + |0.02|/2 + |0.01|/3
    expected = 0.03 + 0.02 / 2 + 0.01 / 3
    assert integrated_fundamental_deviation(devs, 3) == pytest.approx(
        expected, abs=1e-15)


def test_rf_monotone_in_run_length():
    base = [0.0] + [0.02] * 30
    values = [integrated_fundamental_deviation(base, t)
              for t in range(1, 31)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_rf_whole_history_when_no_flip():
    devs = [0.5, 0.5, 0.5]   # planted: no zero sentinel, no flip
    expected = 0.5 / 1 + 0.5 / 2   # t'=2 and t'=1 only; (tau=0, sum over (0,t])
    assert integrated_fundamental_deviation(devs, 2) == pytest.approx(expected)


# -- reward ---------------------------------------------------------------------

def test_reward_flat_no_position_example():
    c = ctx(mid=300.0, fund=300.0, ret=0.0, vol=0.0, b=4.0, s=4.0, w=0,
            cash=15000.0)
    devs = [0.0, 0.0]
    r = compute_reward(c, alpha=2.0, devs=devs, t=1, weights=WEIGHTS,
                       depth_cap=1e3)
    expected_u = (2 / math.pi) * math.atan(6e-5 * 15000.0)
    assert r.utility == pytest.approx(expected_u, abs=1e-10)
    assert 0 < r.utility < 1
    assert r.short_penalty == 0.0 and r.cash_penalty == 0.0
    assert r.fundamental_penalty == 0.0
    assert r.illiquidity_penalty == pytest.approx(0.005 * (2 / 4.0), abs=1e-12)
    assert r.total == pytest.approx(expected_u - 0.005 * 0.5, abs=1e-10)


def test_reward_short_position_penalty():
    c = ctx(w=-1)
    r = compute_reward(c, 2.0, [0.0, 0.0], 1, WEIGHTS, 1e3)
    assert r.short_penalty == pytest.approx(0.10)


def test_reward_negative_cash_penalty():
    c = ctx(cash=-5.0)
    r = compute_reward(c, 2.0, [0.0, 0.0], 1, WEIGHTS, 1e3)
    assert r.cash_penalty == pytest.approx(0.10)


def test_reward_full_hand_computation():
    c = ctx(mid=300.0, fund=303.0, ret=0.004, vol=0.0008, b=3.0, s=6.0, w=-4,
            cash=-100.0)
    devs = [0.0, -0.01, math.log(303.0 / 300.0)]
    r = compute_reward(c, alpha=1.5, devs=devs, t=2, weights=WEIGHTS,
                       depth_cap=1e3)
    x = -100.0 + (-4) * 300.0
    inner = x + 0.004 * (-4) * 300.0 - 0.75 * 0.0008 * abs(-4 * 300.0)
    u = (2 / math.pi) * math.atan(6e-5 * inner)
    liq = 1 / 3.0 + 1 / 6.0 + (6.0 / 3.0 - 1.0)
    rf = abs(math.log(303.0 / 300.0))
    expected = u - 0.1 - 0.1 - 0.005 * liq - 0.2 * rf
    assert r.total == pytest.approx(expected, abs=1e-10)
    assert r.total == pytest.approx(
        r.utility - r.short_penalty - r.cash_penalty - r.illiquidity_penalty
        - r.fundamental_penalty, abs=0)


def test_utility_monotone_decreasing_in_alpha():
    c = ctx(w=10, vol=0.002, ret=0.0)
    rewards = [compute_reward(c, a, [0.0, 0.0], 1, WEIGHTS, 1e3).utility
               for a in (0.0, 1.0, 2.0, 4.0)]
    assert all(b < a for a, b in zip(rewards, rewards[1:]))


def test_utility_monotone_increasing_in_wealth():
    utilities = [compute_reward(ctx(cash=c), 2.0, [0.0, 0.0], 1, WEIGHTS,
                                1e3).utility
                 for c in (-1e5, 0.0, 1e4, 1e6)]
    assert all(b > a for a, b in zip(utilities, utilities[1:]))
    assert all(-1 < u < 1 for u in utilities)

import math

import numpy as np
import pytest

from hetmarket.baselines import (BaselineParams, FcnPopulation, FcnTraits,
                                 ZiPopulation, adfcn_update, chartist_ratio,
                                 fcn_alpha_tau, fcn_decide, fcn_predict,
                                 weight_update, zi_decide)
from hetmarket.env import SimConfig, episode_rng, run_episode

PARAMS = BaselineParams()


def make_traits(w_f=10.0, w_c=1.5, w_n=1.0, tau_f=200, tau_t=100,
                alpha_t=0.1):
    return FcnTraits(w_f, w_c, w_n, tau_f, alpha_t, tau_t, 20, 15000.0)


# -- zero intelligence ---------------------------------------------------------

def test_zi_zero_noise_price_is_mid():
    rng = np.random.default_rng(0)
    for _ in range(10):
        _, price = zi_decide(300.0, 0.0, rng)
        assert price == 300.0


def test_zi_price_lognormal_moment():
    rng = np.random.default_rng(1)
    sigma = 0.01
    logs = np.array([math.log(zi_decide(300.0, sigma, rng)[1] / 300.0)
                     for _ in range(100_000)])
    assert logs.std(ddof=1) == pytest.approx(sigma, rel=0.02)


def test_zi_fair_coin_sides():
    rng = np.random.default_rng(2)
    n = 100_000
    sides = np.array([zi_decide(300.0, 0.0, rng)[0] for _ in range(n)])
    buys = (sides == 1).sum()
    assert abs(buys - n / 2) < 3 * math.sqrt(n * 0.25)
    assert set(np.unique(sides)) == {-1, 1}
    assert np.all(np.abs(sides) == 1)      # unit volume both ways


# -- FCN prediction -------------------------------------------------------------

def test_fcn_fundamentalist_fixed_point():
    tr = make_traits(w_f=5.0, w_c=0.0, w_n=0.0)
    mids = [300.0] * 11
    r_hat, p_hat = fcn_predict(tr, 300.0, 300.0, mids, 10, 0.0,
                               np.random.default_rng(0))
    assert r_hat == 0.0 and p_hat == 300.0


def test_fcn_chartist_flat_history():
    tr = make_traits(w_f=0.0, w_c=3.0, w_n=0.0, tau_t=5)
    mids = [300.0] * 11
    r_hat, _ = fcn_predict(tr, 300.0, 330.0, mids, 10, 0.0,
                           np.random.default_rng(0))
    assert r_hat == 0.0


def test_fcn_fundamentalist_example():
    tr = make_traits(w_f=1.0, w_c=0.0, w_n=0.0, tau_f=200, tau_t=100)
    mids = [300.0] * 201
    r_hat, p_hat = fcn_predict(tr, 300.0, 330.0, mids, 200, 0.0,
                               np.random.default_rng(0))
    assert r_hat == pytest.approx(math.log(1.1) / 200, abs=1e-12)
    # full history available: the horizon is the agent's own tau_t
    assert p_hat == pytest.approx(300.0 * math.exp(tr.tau_t * r_hat), abs=1e-9)


def test_fcn_prediction_horizon_shrinks_with_history():
    tr = make_traits(w_f=1.0, w_c=0.0, w_n=0.0, tau_f=200, tau_t=100)
    mids = [300.0] * 11
    r_hat, p_hat = fcn_predict(tr, 300.0, 330.0, mids, 10, 0.0,
                               np.random.default_rng(0))
    assert p_hat == pytest.approx(300.0 * math.exp(10 * r_hat), abs=1e-9)


def test_fcn_chartist_lag_truncated_to_history():
    tr = make_traits(w_f=0.0, w_c=2.0, w_n=0.0, tau_t=50)
    mids = [300.0, 303.0, 306.0]
    r_hat, _ = fcn_predict(tr, 306.0, 306.0, mids, 2, 0.0,
                           np.random.default_rng(0))
    # only 2 steps of history: lag 2, per-step return log(306/300)/2
    assert r_hat == pytest.approx(math.log(306.0 / 300.0) / 2, abs=1e-12)


def test_fcn_alpha_tau_symmetric_weights():
    alpha_t, tau_t = fcn_alpha_tau(3.0, 3.0, PARAMS)
    assert alpha_t == pytest.approx(PARAMS.alpha_ref)
    assert tau_t == math.ceil(PARAMS.tau_ref)


def test_fcn_alpha_tau_fundamentalist_heavy():
    a_hi, t_hi = fcn_alpha_tau(10.0, 0.5, PARAMS)
    a_lo, t_lo = fcn_alpha_tau(0.5, 10.0, PARAMS)
    assert a_hi > PARAMS.alpha_ref > a_lo
    assert t_hi > math.ceil(PARAMS.tau_ref) >= t_lo


# -- FCN order rule --------------------------------------------------------------

def test_fcn_decide_directional_monte_carlo():
    rng = np.random.default_rng(3)
    buys = sells = 0
    for _ in range(1000):
        decision = fcn_decide(310.0, 0.01, rng)
        assert decision is not None
        v, price = decision
        if v == 1:
            buys += 1
            assert price < 310.0
        else:
            sells += 1
            assert price > 310.0
    assert buys + sells == 1000
    assert abs(buys - 500) < 3 * math.sqrt(1000 * 0.25)


def test_fcn_decide_zero_spread_no_order():
    assert fcn_decide(310.0, 0.0, np.random.default_rng(0)) is None


def test_fcn_noise_only_orders_serially_uncorrelated():
    tr = make_traits(w_f=0.0, w_c=0.0, w_n=1.0, tau_t=10)
    rng = np.random.default_rng(4)
    mids = [300.0] * 200
    sides = []
    for _ in range(10_000):
        _, p_hat = fcn_predict(tr, 300.0, 300.0, mids, 100, 1e-4, rng)
        decision = fcn_decide(p_hat, 0.01, rng)
        sides.append(decision[0])
    sides = np.array(sides, dtype=float)
    lag1 = np.corrcoef(sides[:-1], sides[1:])[0, 1]
    assert abs(lag1) < 0.05


# -- adaptive weight updates -----------------------------------------------------

def test_weight_update_same_sign_increases_toward_cap():
    w = 5.0
    for _ in range(200):
        w_new = weight_update(w, 0.01, 0.02, eta=0.01, w_max=20.0)
        assert w_new > w
        w = w_new
    assert w <= 20.0


def test_weight_update_opposite_sign_decreases_toward_zero():
    w = 5.0
    for _ in range(200):
        w_new = weight_update(w, 0.01, -0.02, eta=0.01, w_max=20.0)
        assert 0.0 <= w_new < w
        w = w_new
    assert w >= 0.0


def test_weight_update_zero_return_is_mismatch():
    w = 5.0
    # realized return zero: increment would be 0 in the reward branch, but
    # the mismatch branch shrinks by eta*100*|r_hat|*w
    out = weight_update(w, 0.01, 0.0, eta=0.01, w_max=20.0)
    assert out == pytest.approx(w - 0.01 * 100 * 0.01 * w)
    assert out < w


def test_weight_update_maps_range_into_range():
    rng = np.random.default_rng(5)
    for _ in range(2000):
        w = rng.uniform(0, 20.0)
        out = weight_update(w, rng.normal(0, 0.005), rng.normal(0, 0.005),
                            eta=0.01, w_max=20.0)
        assert 0.0 <= out <= 20.0


def test_adfcn_update_preserves_weight_sum():
    tr = make_traits(w_f=8.0, w_c=4.0, tau_f=5, tau_t=3)
    mids = list(300.0 + np.cumsum(np.random.default_rng(6).normal(0, 0.5, 40)))
    funds = list(300.0 + np.cumsum(np.random.default_rng(7).normal(0, 0.5, 40)))
    before = tr.w_f + tr.w_c
    adfcn_update(tr, mids, funds, 30, PARAMS, fixed_horizons=True)
    assert tr.w_f + tr.w_c == pytest.approx(before, abs=1e-12)
    assert tr.w_f >= 0 and tr.w_c >= 0


def test_adfcn_update_skips_short_history():
    tr = make_traits(w_f=8.0, w_c=4.0, tau_f=200, tau_t=100)
    mids = [300.0] * 50
    before = (tr.w_f, tr.w_c)
    adfcn_update(tr, mids, mids, 49, PARAMS, fixed_horizons=False)
    assert (tr.w_f, tr.w_c) == before


def test_adfcn_update_recomputes_horizons_unless_fixed():
    rng = np.random.default_rng(8)
    mids = list(300.0 * np.exp(np.cumsum(rng.normal(0, 0.003, 60))))
    funds = list(300.0 * np.exp(np.cumsum(rng.normal(0, 0.003, 60))))
    tr = make_traits(w_f=8.0, w_c=4.0, tau_f=10, tau_t=5, alpha_t=0.123)
    adfcn_update(tr, mids, funds, 50, PARAMS, fixed_horizons=False)
    expect_alpha, expect_tau = fcn_alpha_tau(tr.w_f, tr.w_c, PARAMS)
    assert tr.alpha_t == pytest.approx(expect_alpha)
    assert tr.tau_t == expect_tau

    tr2 = make_traits(w_f=8.0, w_c=4.0, tau_f=10, tau_t=5, alpha_t=0.123)
    adfcn_update(tr2, mids, funds, 50, PARAMS, fixed_horizons=True)
    assert tr2.alpha_t == 0.123 and tr2.tau_t == 5


def test_chartist_ratio_in_unit_interval():
    rng = np.random.default_rng(9)
    traits = [make_traits(w_f=rng.exponential(10), w_c=rng.exponential(1.5))
              for _ in range(101)]
    ratio = chartist_ratio(traits)
    assert 0.0 <= ratio <= 1.0
    shares = sorted(tr.w_c / (tr.w_f + tr.w_c) for tr in traits)
    assert ratio == pytest.approx(shares[50])


# -- populations end to end -------------------------------------------------------

def test_populations_run_and_trade():
    cfg = SimConfig(n=40, t_sim=400, halt_windows=((1, 40),), tif=200)
    for pop in (ZiPopulation(40), FcnPopulation(40),
                FcnPopulation(40, adaptive=True),
                FcnPopulation(40, adaptive=True, fixed_horizons=True)):
        log = run_episode(cfg, pop, episode_rng(12, 0))
        assert len(log.trades) > 0
        assert log.exec_volume[1:41].sum() == 0


def test_adfcn_weights_drift_during_episode():
    cfg = SimConfig(n=30, t_sim=800, halt_windows=((1, 20),), tif=200)
    pop = FcnPopulation(30, adaptive=True)
    rng = episode_rng(13, 0)
    pop_traits = pop.begin_episode(cfg, rng)
    start = [(tr.w_f, tr.w_c) for tr in pop_traits]
    # rerun episode with same population object (begin_episode resamples)
    log = run_episode(cfg, pop, episode_rng(13, 0))
    end = [(tr.w_f, tr.w_c) for tr in pop.traits]
    assert any(a != b for a, b in zip(start, end))


def test_baseline_params_validation():
    with pytest.raises(ValueError):
        BaselineParams(lambda_f=-1.0).validate()
    with pytest.raises(ValueError):
        BaselineParams(tau_f=0).validate()
    BaselineParams().validate()

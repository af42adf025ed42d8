import numpy as np
import pytest

from oversub.baselines import (BaselineError, GridPolicy,
                               MissingSubscriberHistory, MovingAveragePolicy,
                               PeakPredictorPolicy)
from oversub.env import EnvConfig, OversubEnv

from conftest import make_trace


def test_grid_policy_constant(tiny_env_config):
    env = OversubEnv(tiny_env_config)
    obs = env.reset()
    policy = GridPolicy(0.4)
    assert policy.name == "grid:0.4"
    assert policy.rates(env, obs).tolist() == [0.4, 0.4]


def test_grid_policy_validates_rate():
    with pytest.raises(BaselineError):
        GridPolicy(0.0)
    with pytest.raises(BaselineError):
        GridPolicy(1.5)


def test_moving_average_before_history_defaults_to_full(tiny_env_config):
    env = OversubEnv(tiny_env_config)
    obs = env.reset()
    policy = MovingAveragePolicy(window=24)
    assert policy.name == "ma:24"
    # t=0: the trailing window is empty for everyone
    assert policy.rates(env, obs).tolist() == [1.0, 1.0]


def test_moving_average_oracle(tiny_env_config):
    env = OversubEnv(tiny_env_config)
    obs = env.reset()
    obs = env.step_rates([1.0, 1.0]).observation
    obs = env.step_rates([1.0, 1.0]).observation   # now t=2
    rates = MovingAveragePolicy(window=2).rates(env, obs)
    # sub0 points in [0,2): a0 0.5, 0.6 and a1 0.2; sub1: 0.25, 0.5
    assert rates[0] == pytest.approx((0.5 + 0.6 + 0.2) / 3)
    assert rates[1] == pytest.approx((0.25 + 0.5) / 2)


def test_moving_average_clips_to_action_floor(small_cluster_config):
    trace = make_trace(
        [("v", 0, 0, 4, 8.0, 1.0)],
        [("v", ((0, 0.01), (1, 0.02), (2, 0.01), (3, 0.02)))])
    env = OversubEnv(EnvConfig(cluster=small_cluster_config, trace=trace))
    env.reset()
    obs = env.step_rates([1.0]).observation
    rates = MovingAveragePolicy(window=1).rates(env, obs)
    assert rates[0] == pytest.approx(min(env.config.action_set))   # 0.2 floor


def test_moving_average_validates_window():
    with pytest.raises(BaselineError):
        MovingAveragePolicy(window=0)


def test_peak_predictor_fit_oracle(tiny_trace):
    policy = PeakPredictorPolicy.fit(tiny_trace, margin=1.05, min_rate=0.2)
    # sub0 peak 0.6 -> 0.63; sub1 peak 1.0 -> clipped back to 1.0
    np.testing.assert_allclose(policy.fitted_rates, [0.63, 1.0])
    assert policy.name == "sl"


def test_peak_predictor_applies_min_rate(small_cluster_config):
    trace = make_trace(
        [("v", 0, 0, 2, 8.0, 1.0)],
        [("v", ((0, 0.05), (1, 0.04)))])
    policy = PeakPredictorPolicy.fit(trace, margin=1.05, min_rate=0.2)
    assert policy.fitted_rates.tolist() == [0.2]


def test_peak_predictor_rates_are_static(tiny_trace, tiny_env_config):
    env = OversubEnv(tiny_env_config)
    obs = env.reset()
    policy = PeakPredictorPolicy.fit(tiny_trace)
    first = policy.rates(env, obs)
    obs = env.step_rates(first).observation
    second = policy.rates(env, obs)
    np.testing.assert_array_equal(first, second)


def test_peak_predictor_missing_history():
    trace = make_trace(
        [("v", 0, 0, 2, 8.0, 1.0), ("w", 1, 0, 2, 8.0, 1.0)],
        [("v", ((0, 0.5),))])       # subscriber 1 has no usage points
    with pytest.raises(MissingSubscriberHistory):
        PeakPredictorPolicy.fit(trace)


def test_peak_predictor_subscriber_count_guard(tiny_trace, small_cluster_config):
    one_sub = make_trace([("v", 0, 0, 2, 8.0, 1.0)], [("v", ((0, 0.5),))])
    policy = PeakPredictorPolicy.fit(one_sub)
    env = OversubEnv(EnvConfig(cluster=small_cluster_config, trace=tiny_trace))
    obs = env.reset()
    with pytest.raises(BaselineError):
        policy.rates(env, obs)


def test_peak_predictor_validates_fitted_range():
    with pytest.raises(BaselineError):
        PeakPredictorPolicy(np.array([0.5, 1.2]))
    with pytest.raises(BaselineError):
        PeakPredictorPolicy(np.array([0.0]))

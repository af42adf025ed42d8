"""Reference oversubscription policies: fixed grid, moving average, and a
per-subscriber peak predictor. All emit continuous rates, not indexes into
the learner's action grid."""
from __future__ import annotations

import logging
import math

import numpy as np

from .env import Observation, OversubEnv
from .traces import TraceSet

log = logging.getLogger("oversub.baselines")


class BaselineError(Exception):
    pass


class MissingSubscriberHistory(BaselineError):
    """A subscriber has no usage points to fit on."""


class GridPolicy:
    """The same fixed rate for every subscriber at every hour."""

    def __init__(self, rate: float):
        if not (0.0 < rate <= 1.0):
            raise BaselineError(f"grid rate must be in (0, 1], got {rate!r}")
        self.rate = rate
        self.name = f"grid:{rate}"

    def rates(self, env: OversubEnv, obs: Observation) -> np.ndarray:
        return np.full(env.num_agents, self.rate)


class MovingAveragePolicy:
    """Each subscriber's mean usage over the trailing window of hours.

    Subscribers with no usage points in the window fall back to 1.0 (no
    oversubscription); otherwise the estimate is clipped to
    [min action rate, 1].
    """

    def __init__(self, window: int = 24):
        if window < 1:
            raise BaselineError(f"window must be >= 1, got {window}")
        self.window = window
        self.name = f"ma:{window}"

    def rates(self, env: OversubEnv, obs: Observation) -> np.ndarray:
        t = env.t
        means = env.trace.mean_usage_window(t - self.window, t)
        floor = min(env.config.action_set)
        out = np.clip(means, floor, 1.0)
        return np.where(np.isnan(means), 1.0, out)


class PeakPredictorPolicy:
    """Static per-subscriber rates: observed peak usage times a safety margin.

    Fit once on the training trace; evaluation reuses the fitted rates on
    resampled traces. Rates are clipped to [min_rate, 1].
    """

    def __init__(self, fitted_rates: np.ndarray, name: str = "sl"):
        self.fitted_rates = np.asarray(fitted_rates, dtype=np.float64)
        if np.any(self.fitted_rates <= 0) or np.any(self.fitted_rates > 1):
            raise BaselineError("fitted rates must lie in (0, 1]")
        self.name = name

    @classmethod
    def fit(cls, trace: TraceSet, margin: float = 1.05,
            min_rate: float = 0.2) -> "PeakPredictorPolicy":
        peaks = trace.max_usage_per_subscriber()
        missing = [i for i in range(trace.num_subscribers) if math.isnan(peaks[i])]
        if missing:
            raise MissingSubscriberHistory(
                f"no usage points for subscribers {missing}")
        rates = np.clip(peaks * margin, min_rate, 1.0)
        return cls(rates)

    def rates(self, env: OversubEnv, obs: Observation) -> np.ndarray:
        if self.fitted_rates.shape[0] != env.num_agents:
            raise BaselineError(
                f"fitted for {self.fitted_rates.shape[0]} subscribers, "
                f"environment has {env.num_agents}")
        return self.fitted_rates.copy()

"""Stochastic per-stage delays drawn from truncated exponentials."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np


def sample_hogwild_delays(rng, tau_max: int, stage_means: Sequence[float], size=None) -> np.ndarray:
    """Integer delays in 0..tau_max, one per stage (per row when ``size`` is given).

    A draw is floor(X) where X is exponential with the stage's mean, truncated
    to [0, tau_max + 1) and sampled by inverting its CDF.
    """
    means = np.asarray(stage_means, dtype=float)
    if tau_max < 0:
        raise ValueError("tau_max must be >= 0")
    if np.any(means <= 0):
        raise ValueError("stage means must be > 0")
    shape = means.shape if size is None else (size,) + means.shape
    if tau_max == 0:
        return np.zeros(shape, dtype=int)
    mass = -np.expm1(-(tau_max + 1) / means)
    u = rng.random(shape)
    x = -means * np.log1p(-u * mass)
    return np.minimum(np.floor(x).astype(int), tau_max)


@lru_cache(maxsize=256)
def truncated_delay_mean(tau_max: int, mean: float) -> float:
    """Expected value of one floored truncated-exponential delay."""
    k = np.arange(tau_max + 1)
    cdf = lambda x: -np.expm1(-x / mean)
    pmf = (cdf(k + 1) - cdf(k)) / cdf(tau_max + 1)
    return float(k @ pmf)


@dataclass(frozen=True)
class HogwildDelays:
    tau_max: int
    stage_means: tuple

    @property
    def P(self) -> int:
        return len(self.stage_means)

    def nominal_delays(self) -> list:
        """Delay used for step-size rescaling: the stage's expected delay, at least 1."""
        return [max(1, int(np.ceil(truncated_delay_mean(self.tau_max, m)))) for m in self.stage_means]

"""Learning-rate schedules: base schedules, per-stage delay rescaling, warmup."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class ConstantLR:
    lr: float

    def __call__(self, step: int) -> float:
        return self.lr


@dataclass(frozen=True)
class StepDecayLR:
    """Multiply the rate by ``factor`` every ``every`` steps."""

    lr: float
    every: int
    factor: float = 0.1

    def __call__(self, step: int) -> float:
        return self.lr * self.factor ** (step // self.every)


@dataclass(frozen=True)
class WarmupInverseSqrtLR:
    """Linear warmup from ``init`` to ``peak``, then peak * sqrt(warmup / step)."""

    peak: float
    warmup: int
    init: float = 1e-7

    def __call__(self, step: int) -> float:
        if step < self.warmup:
            return self.init + (self.peak - self.init) * step / self.warmup
        return self.peak * math.sqrt(self.warmup / max(step, 1))


def t1_lr(base: float, tau: int, k: int, K: int) -> float:
    """Delay-rescaled step size base / tau**p with p annealed from 1 to 0 over K steps.

    K = 0 disables the rescaling. Stages with no delay keep the base rate.
    """
    if tau < 1 or K <= 0:
        return base
    p = 1.0 - min(k / K, 1.0)
    return base / tau ** p


@dataclass(frozen=True)
class TrainSchedule:
    """Base schedule plus the asynchronous-training knobs.

    ``K`` is the annealing horizon for delay rescaling (0 turns it off),
    ``warmup_epochs * steps_per_epoch`` leading steps run without delay at the
    base rate, and ``correction_decay`` (None turns it off) sets the
    discrepancy-correction decay D. The annealing step count restarts when
    warmup ends.
    """

    base: object
    K: int = 0
    warmup_epochs: int = 0
    steps_per_epoch: int = 1
    correction_decay: Optional[float] = None

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.correction_decay is not None and not 0 < self.correction_decay < 1:
            raise ValueError("correction_decay must be in (0, 1)")

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    def in_warmup(self, step: int) -> bool:
        return step < self.warmup_steps

    def stage_lr(self, step: int, tau: int) -> float:
        base = self.base(step)
        if self.in_warmup(step):
            return base
        return t1_lr(base, tau, step - self.warmup_steps, self.K)

from .delays import HogwildDelays, sample_hogwild_delays, truncated_delay_mean
from .engine import (DIVERGENCE_CAP, SimState, Trajectory, init_state, run_experiment, step,
                     sweep_delayed_gd)
from .objectives import MLP, LeastSquares, Quadratic, partition_units
from .optim import SGD, AdamW, MomentumSGD, make_optimizer
from .schedule import ConstantLR, StepDecayLR, TrainSchedule, WarmupInverseSqrtLR, t1_lr

__all__ = [
    "HogwildDelays", "sample_hogwild_delays", "truncated_delay_mean",
    "DIVERGENCE_CAP", "SimState", "Trajectory", "init_state", "run_experiment", "step",
    "sweep_delayed_gd",
    "MLP", "LeastSquares", "Quadratic", "partition_units",
    "SGD", "AdamW", "MomentumSGD", "make_optimizer",
    "ConstantLR", "StepDecayLR", "TrainSchedule", "WarmupInverseSqrtLR", "t1_lr",
]

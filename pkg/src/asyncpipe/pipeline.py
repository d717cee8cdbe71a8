"""Pipeline partitioning, per-stage delays and the hardware cost model.

Stages are indexed 1..P. All delays are measured in optimizer steps
(minibatch boundaries). Memory is reported in abstract weight units, one unit
being one weight-sized scalar; activation memory is reported in units of the
microbatch activation size M.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union


class Mode(str, enum.Enum):
    GPIPE = "gpipe"
    PIPEDREAM = "pipedream"
    PIPEMARE = "pipemare"


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    MOMENTUM = "momentum"
    ADAMW = "adamw"


# weight + gradient (+ momentum) (+ second moment)
OPTIMIZER_COPIES = {Optimizer.SGD: 2, Optimizer.MOMENTUM: 3, Optimizer.ADAMW: 4}


@dataclass(frozen=True)
class PipelineSpec:
    """Shape of one pipeline-parallel training setup.

    ``N`` may be omitted when ``B`` is given; it is then ``ceil(B / M)``.
    ``stage_weight_sizes`` defaults to one weight unit per stage.
    """

    P: int
    mode: Mode = Mode.PIPEMARE
    N: Optional[int] = None
    M: float = 1
    B: Optional[float] = None
    L: Optional[int] = None
    stage_weight_sizes: Optional[Sequence[int]] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.P < 1:
            raise ValueError(f"P must be >= 1, got {self.P}")
        if self.M <= 0:
            raise ValueError(f"M must be > 0, got {self.M}")
        N = self.N
        if N is None:
            if self.B is None:
                N = 1
            else:
                N = math.ceil(self.B / self.M)
        if N < 1:
            raise ValueError(f"N must be >= 1, got {N}")
        object.__setattr__(self, "N", int(N))
        if self.B is not None and self.M * N < self.B:
            raise ValueError(f"M*N = {self.M * N} does not cover B = {self.B}")
        if self.L is None:
            object.__setattr__(self, "L", self.P)
        elif self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        sizes = self.stage_weight_sizes
        if sizes is None:
            sizes = (1,) * self.P
        sizes = tuple(sizes)
        if len(sizes) != self.P:
            raise ValueError(f"stage_weight_sizes has {len(sizes)} entries, expected P = {self.P}")
        if any(s < 0 for s in sizes) or not any(s > 0 for s in sizes):
            raise ValueError("stage weight sizes must be >= 0 with at least one > 0")
        object.__setattr__(self, "stage_weight_sizes", sizes)

    @property
    def W(self) -> int:
        """Size of one copy of all weights."""
        return sum(self.stage_weight_sizes)


@dataclass(frozen=True)
class DelayProfile:
    tau_fwd: tuple
    tau_bkwd: tuple
    tau_recomp: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "tau_fwd", tuple(int(t) for t in self.tau_fwd))
        object.__setattr__(self, "tau_bkwd", tuple(int(t) for t in self.tau_bkwd))
        if self.tau_recomp is not None:
            object.__setattr__(self, "tau_recomp", tuple(int(t) for t in self.tau_recomp))
        n = len(self.tau_fwd)
        if n == 0 or len(self.tau_bkwd) != n:
            raise ValueError("tau_fwd and tau_bkwd must be non-empty and of equal length")
        if self.tau_recomp is not None and len(self.tau_recomp) != n:
            raise ValueError("tau_recomp length must match tau_fwd")
        for i in range(n):
            f, b = self.tau_fwd[i], self.tau_bkwd[i]
            if b < 0 or f < 0:
                raise ValueError(f"negative delay at stage {i + 1}")
            if b > f:
                raise ValueError(f"stage {i + 1}: tau_bkwd={b} exceeds tau_fwd={f}")
            if self.tau_recomp is not None and not b <= self.tau_recomp[i] <= f:
                raise ValueError(f"stage {i + 1}: tau_recomp must lie in [tau_bkwd, tau_fwd]")
            if i and f > self.tau_fwd[i - 1]:
                raise ValueError(f"stage {i + 1}: forward delay grows along the pipeline")

    @property
    def P(self) -> int:
        return len(self.tau_fwd)

    @property
    def max_delay(self) -> int:
        return max(self.tau_fwd)

    @classmethod
    def uniform(cls, tau_fwd: int, tau_bkwd: int = 0, tau_recomp: Optional[int] = None, P: int = 1):
        recomp = None if tau_recomp is None else (tau_recomp,) * P
        return cls((tau_fwd,) * P, (tau_bkwd,) * P, recomp)


@dataclass(frozen=True)
class CostReport:
    utilization: float
    weight_opt_memory_units: Fraction
    weight_opt_multiplier: Fraction
    activation_memory_units: float
    extra: dict = field(default_factory=dict)


def forward_delay(P: int, N: int, i: int) -> int:
    """ceil((2(P - i) + 1) / N) for stage i in 1..P."""
    return -(-(2 * (P - i) + 1) // N)


def _segment_lengths(P: int, S: int) -> list:
    if S < 1:
        raise ValueError(f"segment size must be >= 1, got {S}")
    S = min(S, P)
    full, rest = divmod(P, S)
    return [S] * full + ([rest] if rest else [])


def compute_delay_profile(spec: PipelineSpec, recompute_segment: Optional[int] = None) -> DelayProfile:
    """Per-stage forward/backward delays for the pipeline's mode.

    With ``recompute_segment=S`` the profile also carries recompute delays:
    a stage at depth d inside its segment reads weights
    ``ceil(2 (S - 1 - d) / N)`` steps earlier than its backward pass,
    clamped to ``[tau_bkwd, tau_fwd]``.
    """
    P, N = spec.P, spec.N
    if spec.mode is Mode.GPIPE:
        fwd = [0] * P
        bkwd = [0] * P
    else:
        fwd = [forward_delay(P, N, i) for i in range(1, P + 1)]
        bkwd = list(fwd) if spec.mode is Mode.PIPEDREAM else [0] * P
    recomp = None
    if recompute_segment is not None:
        S = min(recompute_segment, P)
        if S < 1:
            raise ValueError(f"segment size must be >= 1, got {recompute_segment}")
        recomp = []
        for idx in range(P):
            d = idx % S
            lead = -(-2 * (S - 1 - d) // N)
            recomp.append(min(max(bkwd[idx] + lead, bkwd[idx]), fwd[idx]))
    return DelayProfile(fwd, bkwd, recomp)


def pipeline_utilization(spec: PipelineSpec) -> float:
    if spec.mode is Mode.GPIPE:
        return spec.N / (spec.N + spec.P - 1)
    return 1.0


def amortized_utilization(total_epochs: float, warmup_epochs: float, sync_util: float) -> float:
    """Utilization averaged over a run whose first epochs run synchronously.

    Each synchronous epoch costs ``1 / sync_util`` time units and each
    asynchronous epoch one unit.
    """
    if not 0 < sync_util <= 1:
        raise ValueError(f"sync_util must be in (0, 1], got {sync_util}")
    if not 0 <= warmup_epochs <= total_epochs or total_epochs <= 0:
        raise ValueError("need 0 <= warmup_epochs <= total_epochs and total_epochs > 0")
    return total_epochs / (warmup_epochs / sync_util + (total_epochs - warmup_epochs))


def weight_optimizer_memory(spec: PipelineSpec, optimizer: Union[Optimizer, str],
                            with_correction: bool = False) -> tuple:
    """Return ``(units, multiplier)`` for weights plus optimizer state.

    The multiplier is relative to GPipe's ``copies * W`` and is exact.
    """
    optimizer = Optimizer(optimizer)
    copies = OPTIMIZER_COPIES[optimizer]
    W = spec.W
    base = copies * W
    if with_correction and spec.mode is not Mode.PIPEMARE:
        raise ValueError(f"discrepancy correction is only defined for pipemare, not {spec.mode.value}")
    if spec.mode is Mode.PIPEDREAM:
        taus = compute_delay_profile(spec).tau_fwd
        units = base + sum(w * t for w, t in zip(spec.stage_weight_sizes, taus))
    elif with_correction:
        units = base + W
    else:
        units = base
    return Fraction(units), Fraction(units, base)


def _segmented_memory(spec: PipelineSpec, S: int) -> float:
    head = spec.N if spec.mode is Mode.GPIPE else spec.P
    return spec.M * sum(head + s * s for s in _segment_lengths(spec.P, S))


def activation_memory(spec: PipelineSpec, recompute: Union[None, int, str] = None) -> float:
    """Activation memory in units of M.

    ``recompute`` is None, a segment size S, or ``"optimal"``.
    """
    if recompute is None:
        if spec.mode is Mode.GPIPE:
            return spec.M * spec.N * spec.L
        per_stage_layers = spec.L / spec.P
        return spec.M * per_stage_layers * sum(2 * (spec.P - i) + 1 for i in range(1, spec.P + 1))
    if recompute == "optimal":
        recompute = optimal_segment(spec)
    if isinstance(recompute, str) or recompute < 1:
        raise ValueError(f"invalid recompute setting {recompute!r}")
    return _segmented_memory(spec, int(recompute))


def optimal_segment(spec: PipelineSpec) -> int:
    """Segment size minimizing segmented-recompute activation memory.

    The continuous optimum sits at sqrt(P) (sqrt(N) for GPipe); the exact
    integer cost is only checked in a window around it. Ties go to the
    smaller S.
    """
    P = spec.P
    center = math.sqrt(spec.N if spec.mode is Mode.GPIPE else P)
    lo = max(1, int(center / 2) - 1)
    hi = min(P, int(2 * center) + 2)
    lo = min(lo, hi)
    best, best_cost = None, math.inf
    for S in range(lo, hi + 1):
        cost = _segmented_memory(spec, S)
        if cost < best_cost:
            best, best_cost = S, cost
    return best


def asymptotic_savings_ratio(spec: PipelineSpec) -> float:
    """Leading-order activation-memory ratio with/without segmented recompute.

    MP^{3/2} / MP^2 for the asynchronous modes and MPN^{1/2} / MPN for GPipe.
    """
    if spec.mode is Mode.GPIPE:
        return spec.N ** -0.5
    return spec.P ** -0.5


def normalized_time(epochs: float, utilization: float) -> float:
    if utilization <= 0:
        raise ValueError(f"utilization must be > 0, got {utilization}")
    return epochs / utilization


def cost_report(spec: PipelineSpec, optimizer: Union[Optimizer, str] = Optimizer.SGD,
                with_correction: bool = False, recompute: Union[None, int, str] = None) -> CostReport:
    units, mult = weight_optimizer_memory(spec, optimizer, with_correction)
    return CostReport(
        utilization=pipeline_utilization(spec),
        weight_opt_memory_units=units,
        weight_opt_multiplier=mult,
        activation_memory_units=activation_memory(spec, recompute),
    )

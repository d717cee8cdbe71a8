"""Discrete-time simulation of asynchronous pipeline-parallel training.

Time ``t`` counts optimizer steps. Stage i computes its gradient from the
weights it held ``tau_fwd[i]`` steps ago (forward pass) and ``tau_bkwd[i]``
steps ago (backward pass). Reads before step 0 return the initial weights.

With discrepancy correction the backward weights are extrapolated with a
per-stage velocity accumulator. The accumulator value used is the one held
at the time of the backward read, ``tau_bkwd`` steps ago (likewise for
recompute reads), so the noise-free quadratic recursion has exactly the
characteristic polynomial built in ``asyncpipe.stability``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..pipeline import DelayProfile
from ..stability import gamma_for_decay
from .delays import HogwildDelays, sample_hogwild_delays
from .objectives import partition_units
from .schedule import TrainSchedule

DIVERGENCE_CAP = 1e12


@dataclass
class SimState:
    t: int
    w: np.ndarray
    w0: np.ndarray
    stages: list
    history: deque
    delta: np.ndarray
    delta_history: deque
    opt_state: dict
    rng: np.random.Generator
    diverged: bool = False

    def read(self, tau: int) -> np.ndarray:
        """Weights as they were ``tau`` steps ago."""
        if tau + 1 > len(self.history):
            return self.w0
        return self.history[-1 - tau]

    def read_delta(self, tau: int) -> np.ndarray:
        # the accumulator is zero before step 0
        if tau + 1 > len(self.delta_history):
            return np.zeros_like(self.w)
        return self.delta_history[-1 - tau]


def init_state(objective, optimizer, P: int, depth: int, seed: int, w0=None) -> SimState:
    rng = np.random.default_rng(seed)
    w = objective.init_weights(rng) if w0 is None else objective.init_weights(rng, w0)
    stages = partition_units(objective.unit_sizes, P)
    delta = np.zeros_like(w)
    return SimState(
        t=0, w=w, w0=w.copy(), stages=stages,
        history=deque([w], maxlen=depth + 1),
        delta=delta, delta_history=deque([delta], maxlen=depth + 1),
        opt_state=optimizer.init_state(w), rng=rng,
    )


def _assemble(state: SimState, taus) -> np.ndarray:
    out = np.empty_like(state.w)
    for s, tau in zip(state.stages, taus):
        out[s] = state.read(tau)[s]
    return out


def stage_gammas(profile: DelayProfile, D: Optional[float]) -> list:
    """Per-stage correction decay; None where a stage has nothing to correct."""
    if D is None:
        return [None] * profile.P
    return [gamma_for_decay(D, f, b) if f > b else None
            for f, b in zip(profile.tau_fwd, profile.tau_bkwd)]


def step(state: SimState, objective, schedule: TrainSchedule, profile: Optional[DelayProfile],
         optimizer, hogwild: Optional[HogwildDelays] = None,
         gammas: Optional[list] = None, observer: Optional[Callable] = None) -> SimState:
    """Advance the state by one optimizer step (in place) and return it."""
    P = len(state.stages)
    warm = schedule.in_warmup(state.t)
    if hogwild is not None:
        drawn = sample_hogwild_delays(state.rng, hogwild.tau_max, hogwild.stage_means)
        tf = tb = [int(d) for d in drawn]
        tr = None
        nominal = hogwild.nominal_delays()
    else:
        tf, tb, tr = profile.tau_fwd, profile.tau_bkwd, profile.tau_recomp
        nominal = tf
    if warm:
        tf = tb = [0] * P
        tr = None if tr is None else [0] * P

    u_fwd = _assemble(state, tf)
    u_bkwd = _assemble(state, tb)
    u_recomp = None if tr is None else _assemble(state, tr)

    correcting = gammas is not None and hogwild is None and not warm
    if correcting:
        for i, s in enumerate(state.stages):
            if gammas[i] is None:
                continue
            u_bkwd[s] -= (tf[i] - tb[i]) * state.read_delta(tb[i])[s]
            if u_recomp is not None and tf[i] > tr[i]:
                u_recomp[s] -= (tf[i] - tr[i]) * state.read_delta(tr[i])[s]

    if observer is not None:
        observer(state.t, u_fwd, u_bkwd)

    grad = objective.grad(u_fwd, u_bkwd, state.rng, u_recomp)
    lr = np.empty_like(state.w)
    for s, tau in zip(state.stages, nominal):
        lr[s] = schedule.stage_lr(state.t, tau)
    w_new = optimizer.update(state.w, grad, lr, state.opt_state)

    if gammas is not None:
        delta = state.delta.copy()
        for i, s in enumerate(state.stages):
            if gammas[i] is not None:
                g = gammas[i]
                delta[s] = g * state.delta[s] + (1 - g) * (w_new[s] - state.w[s])
        state.delta = delta
        state.delta_history.append(delta)

    state.w = w_new
    state.history.append(w_new)
    state.t += 1
    if not np.all(np.isfinite(w_new)) or np.max(np.abs(w_new)) > DIVERGENCE_CAP:
        state.diverged = True
    return state


@dataclass
class Trajectory:
    t: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    wnorm: list = field(default_factory=list)
    diverged_at: list = field(default_factory=list)
    diverged: bool = False
    final_loss: float = float("nan")
    final_w: Optional[np.ndarray] = None
    steps_run: int = 0

    def rows(self):
        for t, lr, loss, wn, dv in zip(self.t, self.lr, self.loss, self.wnorm, self.diverged_at):
            yield {"t": t, "lr": lr[0], "loss": loss, "wnorm": wn, "diverged": int(dv)}


def run_experiment(objective, schedule: TrainSchedule, optimizer, steps: int, seed: int,
                   profile: Optional[DelayProfile] = None, hogwild: Optional[HogwildDelays] = None,
                   record_every: int = 1, w0=None, observer: Optional[Callable] = None) -> Trajectory:
    """Run ``steps`` optimizer steps and return the recorded trajectory.

    Exactly one of ``profile`` (fixed delays) and ``hogwild`` (stochastic
    delays) must be given. Divergence stops the run early and is reported in
    the trajectory rather than raised.
    """
    if (profile is None) == (hogwild is None):
        raise ValueError("give exactly one of profile and hogwild")
    if hogwild is not None and schedule.correction_decay is not None:
        raise ValueError("discrepancy correction is undefined for stochastic delays "
                         "(forward and backward reads share one delay)")
    P = profile.P if profile is not None else hogwild.P
    depth = profile.max_delay if profile is not None else hogwild.tau_max
    gammas = None
    if profile is not None and schedule.correction_decay is not None:
        gammas = stage_gammas(profile, schedule.correction_decay)
    state = init_state(objective, optimizer, P, depth, seed, w0)
    traj = Trajectory()
    for _ in range(steps):
        step(state, objective, schedule, profile, optimizer, hogwild, gammas, observer)
        if state.diverged or state.t % record_every == 0 or state.t == steps:
            nominal = hogwild.nominal_delays() if hogwild is not None else profile.tau_fwd
            traj.t.append(state.t)
            traj.lr.append(tuple(schedule.stage_lr(state.t - 1, tau) for tau in nominal))
            loss = objective.loss(state.w) if not state.diverged else float("inf")
            traj.loss.append(loss)
            traj.wnorm.append(float(np.linalg.norm(state.w)))
            traj.diverged_at.append(state.diverged)
        if state.diverged:
            break
    traj.diverged = state.diverged
    traj.final_loss = traj.loss[-1] if traj.loss else objective.loss(state.w)
    traj.final_w = state.w
    traj.steps_run = state.t
    return traj


def sweep_delayed_gd(gram, moment, alphas, tau: int, steps: int, w0=None,
                     cap: float = DIVERGENCE_CAP, check_every: int = 64):
    """Full-batch delayed gradient descent on a least-squares problem for many step sizes at once.

    Equivalent to ``run_experiment`` with a single stage, ``tau_fwd = tau``,
    plain SGD and a constant rate, vectorized over ``alphas``. Returns
    ``(final_w, diverged)`` with one row per step size.
    """
    G = np.asarray(gram, dtype=float)
    m = np.asarray(moment, dtype=float)
    a = np.array(alphas, dtype=float)[:, None]
    d = G.shape[0]
    W = np.zeros((len(a), d)) if w0 is None else np.tile(np.asarray(w0, dtype=float), (len(a), 1))
    ring = np.repeat(W[None], tau + 1, axis=0)
    diverged = np.zeros(len(a), dtype=bool)
    head = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            delayed = ring[(head - tau) % (tau + 1)]
            W = W - a * (delayed @ G - m)
            head = (head + 1) % (tau + 1)
            ring[head] = W
            if (t + 1) % check_every == 0 or t + 1 == steps:
                bad = ~np.all(np.isfinite(W), axis=1) | (np.max(np.abs(W), axis=1) > cap)
                if np.any(bad):
                    diverged |= bad
                    W[bad] = 0.0
                    ring[:, bad] = 0.0
                    a[bad] = 0.0
    return W, diverged

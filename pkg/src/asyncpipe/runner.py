"""Experiment commands: config in, named tables (records + column order) out.

Commands never touch the filesystem except to read a dataset; writing is the
CLI's job. Grid cells are evaluated through ``pmap`` so serial and parallel
runs produce identical tables in grid order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dataio import ConfigError, Dataset, ExperimentConfig, load_libsvm
from .pipeline import (DelayProfile, Mode, PipelineSpec, activation_memory, amortized_utilization,
                       asymptotic_savings_ratio, compute_delay_profile, optimal_segment,
                       pipeline_utilization, weight_optimizer_memory)
from .sim import (MLP, ConstantLR, HogwildDelays, LeastSquares, Quadratic, StepDecayLR,
                  TrainSchedule, WarmupInverseSqrtLR, make_optimizer, run_experiment,
                  sweep_delayed_gd)
from .stability import (StabilityError, StabilityProblem, gamma_for_decay, largest_curvature,
                        lemma1_threshold, lemma2_bound, lemma3_bound, max_stable_alpha, radius_at)

DIVERGED = "DIVERGED"


@dataclass
class Table:
    name: str
    columns: list
    records: list = field(default_factory=list)


@dataclass
class Check:
    name: str
    passed: bool
    value: object = ""
    expected: object = ""
    detail: str = ""


@dataclass
class Outcome:
    tables: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


def pmap(fn: Callable, items: list, jobs: int = 1) -> list:
    """Map in input order; ``jobs > 1`` fans out to worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def default_jobs() -> int:
    return os.cpu_count() or 1


def alpha_grid(cfg: ExperimentConfig) -> np.ndarray:
    return np.geomspace(cfg.alpha_min, cfg.alpha_max, cfg.alpha_points)


# ---------------------------------------------------------------------------
# builders


def build_spec(cfg: ExperimentConfig, mode: Optional[str] = None) -> PipelineSpec:
    return PipelineSpec(P=cfg.P, mode=Mode(mode or cfg.mode), N=cfg.N, M=cfg.M, B=cfg.B)


def build_base_lr(cfg: ExperimentConfig):
    if cfg.lr_schedule == "step":
        return StepDecayLR(cfg.lr, cfg.lr_every, cfg.lr_factor)
    if cfg.lr_schedule == "inverse_sqrt":
        return WarmupInverseSqrtLR(cfg.lr, cfg.lr_warmup)
    return ConstantLR(cfg.lr)


def build_schedule(cfg: ExperimentConfig) -> TrainSchedule:
    return TrainSchedule(build_base_lr(cfg), K=cfg.K, warmup_epochs=cfg.warmup_epochs,
                         steps_per_epoch=cfg.steps_per_epoch,
                         correction_decay=cfg.D if cfg.correction else None)


def build_optimizer(cfg: ExperimentConfig):
    return make_optimizer(cfg.optimizer, cfg.beta, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)


def synthetic_regression(n: int, d: int, seed: int = 0) -> Dataset:
    """Regression data with column scales spread over two decades and mild noise."""
    rng = np.random.default_rng(seed)
    scales = np.geomspace(1.0, 0.01, d)
    X = rng.standard_normal((n, d)) * scales + 0.1 * rng.standard_normal((n, 1))
    w_true = rng.standard_normal(d)
    y = X @ w_true + 0.1 * rng.standard_normal(n)
    return Dataset(X, y)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset:
        return load_libsvm(cfg.dataset, scale=cfg.scale)
    return synthetic_regression(cfg.synthetic_n, cfg.synthetic_d)


def build_objective(cfg: ExperimentConfig):
    if cfg.objective == "quadratic":
        return Quadratic(cfg.lam, cfg.sigma, cfg.delta, cfg.phi, cfg.noise)
    data = load_dataset(cfg)
    if cfg.objective == "least_squares":
        return LeastSquares(data.X, data.y, cfg.batch_size)
    return MLP([data.d, *cfg.hidden, 1], data.X, data.y, cfg.activation, cfg.batch_size)


def build_delays(cfg: ExperimentConfig, n_units: int):
    """A fixed DelayProfile or a HogwildDelays, as configured."""
    if cfg.hogwild_tau_max is not None:
        means = cfg.hogwild_means or [1.0]
        if len(means) > n_units:
            raise ConfigError("hogwild_means", f"{len(means)} stages but only {n_units} model weights")
        return HogwildDelays(cfg.hogwild_tau_max, tuple(means))
    if cfg.tau_fwd is not None:
        return DelayProfile.uniform(cfg.tau_fwd, cfg.tau_bkwd or 0, cfg.tau_recomp, P=1)
    profile = compute_delay_profile(build_spec(cfg), cfg.recompute_segment)
    if n_units == 1:
        # a scalar model lives in the first, most delayed stage
        recomp = profile.tau_recomp[0] if profile.tau_recomp else None
        return DelayProfile.uniform(profile.tau_fwd[0], profile.tau_bkwd[0], recomp)
    if cfg.P > n_units:
        raise ConfigError("P", f"{cfg.P} stages but only {n_units} model weights")
    return profile


# ---------------------------------------------------------------------------
# analyze-stability


def _stability_cell(args):
    cfg, lam, delta, beta, tf, tb = args
    gamma = gamma_for_decay(cfg.D, tf, tb) if cfg.correction and tf > tb else 0.0
    if beta is not None:
        prob = StabilityProblem(lam=lam, tau_fwd=tf, beta=beta, momentum=True)
        bound, kind = lemma3_bound(lam, tf), "lemma3"
    else:
        prob = StabilityProblem(lam=lam, tau_fwd=tf, tau_bkwd=tb, delta=delta,
                                discrepancy=delta != 0, gamma=gamma, correction=gamma > 0)
        if delta > 0 and tf > tb:
            bound, kind = lemma2_bound(lam, delta, tf, tb), "lemma2"
        elif delta == 0:
            bound, kind = lemma1_threshold(lam, tf), "lemma1"
        else:
            bound, kind = float("nan"), "none"
    try:
        alpha_star = max_stable_alpha(prob).alpha_star
    except StabilityError:
        alpha_star = float("nan")
    row = dict(lam=lam, delta=delta, beta=beta if beta is not None else float("nan"),
               tau_fwd=tf, tau_bkwd=tb, gamma=gamma, bound_kind=kind, bound=bound,
               alpha_star=alpha_star, probe_alpha=cfg.probe_alpha,
               radius_at_probe=radius_at(prob, cfg.probe_alpha))
    sweep = []
    if beta is None:
        plain = StabilityProblem(lam=lam, tau_fwd=tf, tau_bkwd=tb)
        raw = StabilityProblem(lam=lam, tau_fwd=tf, tau_bkwd=tb, delta=delta, discrepancy=True)
        fixed = raw if tf == tb else StabilityProblem(
            lam=lam, tau_fwd=tf, tau_bkwd=tb, delta=delta, discrepancy=True,
            correction=True, gamma=gamma_for_decay(cfg.D, tf, tb))
        for a in alpha_grid(cfg):
            sweep.append(dict(lam=lam, delta=delta, tau_fwd=tf, tau_bkwd=tb, alpha=a,
                              radius_no_correction=radius_at(raw, a),
                              radius_correction=radius_at(fixed, a),
                              radius_no_discrepancy=radius_at(plain, a)))
    return row, sweep


def cmd_analyze_stability(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    betas = cfg.betas or [None]
    if cfg.betas and (any(d != 0 for d in cfg.deltas) or cfg.correction or cfg.tau_bkwd_list):
        raise ConfigError("betas", "momentum is only analyzed for the plain delayed update")
    tbs = cfg.tau_bkwd_list or [0]
    cells = []
    for lam in cfg.lams:
        for delta in cfg.deltas:
            for beta in betas:
                for tf in cfg.taus:
                    for tb in tbs:
                        if tb > tf:
                            raise ConfigError("tau_bkwd_list", f"tau_bkwd={tb} exceeds tau_fwd={tf}")
                        cells.append((cfg, lam, delta, beta, tf, tb))
    results = pmap(_stability_cell, cells, jobs)
    thresholds = Table("thresholds", ["lam", "delta", "beta", "tau_fwd", "tau_bkwd", "gamma",
                                      "bound_kind", "bound", "alpha_star", "probe_alpha",
                                      "radius_at_probe"], [r for r, _ in results])
    sweep = Table("radius_sweep", ["lam", "delta", "tau_fwd", "tau_bkwd", "alpha",
                                   "radius_no_correction", "radius_correction",
                                   "radius_no_discrepancy"], [s for _, ss in results for s in ss])
    return Outcome([thresholds, sweep] if sweep.records else [thresholds])


# ---------------------------------------------------------------------------
# heatmap


def _heatmap_column(args):
    gram, moment, y_sq, alphas, tau, steps = args
    W, diverged = sweep_delayed_gd(gram, moment, alphas, tau, steps)
    losses = 0.5 * (np.einsum("ai,ij,aj->a", W, gram, W) - 2 * W @ moment + y_sq)
    return np.maximum(losses, 0.0), diverged


def heatmap_grid(data: Dataset, alphas, taus, steps: int, jobs: int = 1):
    """Final loss (or None when diverged) for every (tau, alpha) cell, tau-major."""
    obj = LeastSquares(data.X, data.y)
    cols = pmap(_heatmap_column, [(obj.gram, obj.moment, obj.y_sq, alphas, t, steps) for t in taus],
                jobs)
    return [[None if dv else float(l) for l, dv in zip(losses, div)] for losses, div in cols]


def cmd_heatmap(cfg: ExperimentConfig, jobs: int = 1, data: Optional[Dataset] = None) -> Outcome:
    data = data if data is not None else load_dataset(cfg)
    lam_max = largest_curvature(data.X)
    alphas = alpha_grid(cfg)
    grid = heatmap_grid(data, alphas, cfg.taus, cfg.steps, jobs)
    table = Table("heatmap", ["tau", "alpha", "final_loss", "boundary_alpha", "lam_max"])
    for tau, row in zip(cfg.taus, grid):
        bound = lemma1_threshold(lam_max, tau)
        for a, loss in zip(alphas, row):
            table.records.append(dict(tau=tau, alpha=a, final_loss=DIVERGED if loss is None else loss,
                                      boundary_alpha=bound, lam_max=lam_max))
    return Outcome([table])


def boundary_offsets(alphas, taus, grid, lam_max) -> list:
    """Grid-cell offset of the first diverged step size from the first step size past the bound.

    Returns one ``(tau, empirical_index, predicted_index)`` per delay; an index
    equal to ``len(alphas)`` means nothing on the grid qualified.
    """
    out = []
    for tau, row in zip(taus, grid):
        bound = lemma1_threshold(lam_max, tau)
        emp = next((k for k, loss in enumerate(row) if loss is None), len(alphas))
        pred = next((k for k, a in enumerate(alphas) if a > bound), len(alphas))
        out.append((tau, emp, pred))
    return out


# ---------------------------------------------------------------------------
# simulate


def _simulate_seed(args):
    cfg, seed = args
    obj = build_objective(cfg)
    delays = build_delays(cfg, len(obj.unit_sizes))
    kw = dict(hogwild=delays) if isinstance(delays, HogwildDelays) else dict(profile=delays)
    w0 = cfg.w0 if cfg.objective != "mlp" else None
    traj = run_experiment(obj, build_schedule(cfg), build_optimizer(cfg), cfg.steps, seed,
                          record_every=cfg.record_every, w0=w0, **kw)
    return seed, traj


def cmd_simulate(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    results = pmap(_simulate_seed, [(cfg, s) for s in cfg.seeds], jobs)
    out = Outcome()
    summary = Table("summary", ["seed", "steps_run", "diverged", "final_loss", "final_wnorm"])
    for seed, traj in results:
        t = Table(f"trajectory_seed{seed}", ["t", "lr", "loss", "wnorm", "diverged"], list(traj.rows()))
        out.tables.append(t)
        summary.records.append(dict(seed=seed, steps_run=traj.steps_run, diverged=traj.diverged,
                                    final_loss=traj.final_loss, final_wnorm=traj.wnorm[-1]))
    out.tables.insert(0, summary)
    return out


# ---------------------------------------------------------------------------
# cost-model


def cost_rows(P: int, N: int, M: int = 1, optimizer: str = "sgd", total_epochs: float = 100,
              warmup_epochs: float = 0, bytes_per_scalar: int = 4, segment: Optional[int] = None):
    rows = []
    gpipe_util = pipeline_utilization(PipelineSpec(P=P, mode=Mode.GPIPE, N=N, M=M))
    for mode in Mode:
        spec = PipelineSpec(P=P, mode=mode, N=N, M=M)
        units, mult = weight_optimizer_memory(spec, optimizer)
        if mode is Mode.PIPEMARE:
            _, corr_mult = weight_optimizer_memory(spec, optimizer, with_correction=True)
        else:
            corr_mult = float("nan")
        none = activation_memory(spec)
        seg_S = segment or optimal_segment(spec)
        seg = activation_memory(spec, seg_S) if mode is not Mode.PIPEDREAM else float("nan")
        best = activation_memory(spec, "optimal") if mode is not Mode.PIPEDREAM else float("nan")
        ratio = asymptotic_savings_ratio(spec) if mode is not Mode.PIPEDREAM else float("nan")
        rows.append(dict(
            mode=mode.value, P=P, N=N, M=M, optimizer=optimizer,
            utilization=pipeline_utilization(spec),
            amortized_utilization=(amortized_utilization(total_epochs, warmup_epochs, gpipe_util)
                                   if mode is Mode.PIPEMARE else float("nan")),
            weight_opt_units=float(units), weight_opt_multiplier=float(mult),
            weight_opt_bytes_per_weight=float(units) * bytes_per_scalar / spec.W,
            corrected_multiplier=float(corr_mult),
            activation_none=none, segment=seg_S, activation_segmented=seg,
            optimal_segment=optimal_segment(spec) if mode is not Mode.PIPEDREAM else 0,
            activation_optimal=best,
            exact_savings_ratio=best / none if mode is not Mode.PIPEDREAM else float("nan"),
            asymptotic_savings_ratio=ratio))
    return rows


COST_COLUMNS = ["mode", "P", "N", "M", "optimizer", "utilization", "amortized_utilization",
                "weight_opt_units", "weight_opt_multiplier", "weight_opt_bytes_per_weight",
                "corrected_multiplier", "activation_none", "segment", "activation_segmented",
                "optimal_segment", "activation_optimal", "exact_savings_ratio",
                "asymptotic_savings_ratio"]


def cmd_cost_model(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    spec = build_spec(cfg)
    rows = cost_rows(cfg.P, spec.N, cfg.M, cfg.optimizer, cfg.total_epochs, cfg.warmup_epochs,
                     cfg.bytes_per_scalar, cfg.recompute_segment)
    return Outcome([Table("cost_model", COST_COLUMNS, rows)])


# ---------------------------------------------------------------------------
# schedule-preview


def cmd_schedule_preview(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    sched = build_schedule(cfg)
    profile = compute_delay_profile(build_spec(cfg))
    table = Table("schedule", ["step", "stage", "tau_fwd", "warmup", "lr"])
    for t in range(cfg.steps):
        warm = sched.in_warmup(t)
        for i, tau in enumerate(profile.tau_fwd, start=1):
            table.records.append(dict(step=t, stage=i, tau_fwd=tau, warmup=warm,
                                      lr=sched.stage_lr(t, tau)))
    return Outcome([table])


COMMANDS = {
    "analyze-stability": cmd_analyze_stability,
    "heatmap": cmd_heatmap,
    "simulate": cmd_simulate,
    "cost-model": cmd_cost_model,
    "schedule-preview": cmd_schedule_preview,
}

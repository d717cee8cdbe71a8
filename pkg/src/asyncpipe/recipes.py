"""Bundled reproduction recipes; each returns tables plus pass/fail checks."""

from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .dataio import Dataset, load_libsvm
from .pipeline import (DelayProfile, Mode, Optimizer, PipelineSpec, _segmented_memory,
                       activation_memory, amortized_utilization, asymptotic_savings_ratio,
                       optimal_segment, pipeline_utilization, weight_optimizer_memory)
from .runner import Check, Outcome, Table, boundary_offsets, heatmap_grid, pmap
from .sim import (ConstantLR, HogwildDelays, LeastSquares, Quadratic, TrainSchedule, SGD,
                  run_experiment, sample_hogwild_delays, truncated_delay_mean)
from .stability import (StabilityProblem, gamma_for_decay, largest_curvature, lemma1_threshold,
                        max_stable_alpha, radius_at)

DATASET_ENV = "ASYNCPIPE_CPUSMALL"


class RecipeError(RuntimeError):
    pass


def cpusmall_path(explicit: Optional[str] = None) -> Path:
    """Where the cpusmall libsvm file is expected: argument, env var, then ./data/cpusmall."""
    if explicit:
        return Path(explicit)
    if os.environ.get(DATASET_ENV):
        return Path(os.environ[DATASET_ENV])
    return Path("data") / "cpusmall"


# ---------------------------------------------------------------------------
# divergence of the delayed quadratic


def _quadratic_run(args):
    lam, sigma, delta, alpha, tf, tb, steps, seed, D = args
    sched = TrainSchedule(ConstantLR(alpha), correction_decay=D)
    traj = run_experiment(Quadratic(lam, sigma, delta), sched, SGD(), steps, seed,
                          profile=DelayProfile.uniform(tf, tb), record_every=max(1, steps // 500))
    return traj


def fig2a(seeds=(0, 1, 2), steps: int = 10_000, jobs: int = 1, **_) -> Outcome:
    taus = (1, 3, 10)
    expected = {1: False, 3: False, 10: True}
    cells = [(1.0, 1.0, 0.0, 0.2, tau, tau, steps, s, None) for tau in taus for s in seeds]
    trajs = pmap(_quadratic_run, cells, jobs)
    summary = Table("fig2a_summary", ["tau", "seed", "diverged", "steps_run", "final_loss"])
    traces = Table("fig2a_trajectories", ["tau", "seed", "t", "w_abs"])
    ok = True
    for cell, traj in zip(cells, trajs):
        tau, seed = cell[4], cell[7]
        summary.records.append(dict(tau=tau, seed=seed, diverged=traj.diverged,
                                    steps_run=traj.steps_run, final_loss=traj.final_loss))
        for t, wn in zip(traj.t, traj.wnorm):
            traces.records.append(dict(tau=tau, seed=seed, t=t, w_abs=wn))
        ok &= traj.diverged == expected[tau]
    pattern = ",".join(str(int(r["diverged"])) for r in summary.records)
    return Outcome([summary, traces], [Check("fig2a_divergence_pattern", ok, pattern,
                                             "tau 1,3 bounded; tau 10 diverged for every seed")])


FIG3_TAU_FWD, FIG3_TAU_BKWD, FIG3_DELTA, FIG3_D = 10, 6, 5.0, 0.1
FIG3A_ALPHA = 0.1


def fig3a(seeds=(0, 1, 2), steps: int = 10_000, jobs: int = 1, **_) -> Outcome:
    runs = [("no_discrepancy", 0.0, None), ("discrepancy", FIG3_DELTA, None),
            ("discrepancy_corrected", FIG3_DELTA, FIG3_D)]
    cells = [(1.0, 1.0, d, FIG3A_ALPHA, FIG3_TAU_FWD, FIG3_TAU_BKWD, steps, s, D)
             for _, d, D in runs for s in seeds]
    trajs = pmap(_quadratic_run, cells, jobs)
    summary = Table("fig3a_summary", ["variant", "delta", "seed", "diverged", "steps_run", "final_loss"])
    traces = Table("fig3a_trajectories", ["variant", "seed", "t", "w_abs"])
    verdict = {}
    for k, traj in enumerate(trajs):
        name, d, _ = runs[k // len(seeds)]
        seed = seeds[k % len(seeds)]
        summary.records.append(dict(variant=name, delta=d, seed=seed, diverged=traj.diverged,
                                    steps_run=traj.steps_run, final_loss=traj.final_loss))
        for t, wn in zip(traj.t, traj.wnorm):
            traces.records.append(dict(variant=name, seed=seed, t=t, w_abs=wn))
        verdict.setdefault(name, []).append(traj.diverged)
    ok = not any(verdict["no_discrepancy"]) and all(verdict["discrepancy"])
    return Outcome([summary, traces], [Check(
        "fig3a_discrepancy_diverges", ok,
        f"delta=0 diverged {sum(verdict['no_discrepancy'])}/{len(seeds)}, "
        f"delta={FIG3_DELTA:g} diverged {sum(verdict['discrepancy'])}/{len(seeds)}",
        f"alpha={FIG3A_ALPHA}: stable without discrepancy, diverged with it")])


def fig3_problems(lam: float = 1.0):
    gamma = gamma_for_decay(FIG3_D, FIG3_TAU_FWD, FIG3_TAU_BKWD)
    base = dict(lam=lam, tau_fwd=FIG3_TAU_FWD, tau_bkwd=FIG3_TAU_BKWD)
    return {
        "no_correction": StabilityProblem(**base, delta=FIG3_DELTA, discrepancy=True),
        "correction": StabilityProblem(**base, delta=FIG3_DELTA, discrepancy=True,
                                       correction=True, gamma=gamma),
        "no_discrepancy": StabilityProblem(**base),
    }


def fig3b(alpha_min: float = 0.04, alpha_max: float = 0.3, points: int = 60, **_) -> Outcome:
    probs = fig3_problems()
    sweep = Table("fig3b_radius", ["alpha", "radius_no_correction", "radius_correction",
                                   "radius_no_discrepancy"])
    ordered = True
    for a in np.linspace(alpha_min, alpha_max, points):
        r = {k: radius_at(p, a) for k, p in probs.items()}
        sweep.records.append(dict(alpha=a, **{f"radius_{k}": v for k, v in r.items()}))
        ordered &= r["no_discrepancy"] <= r["correction"] + 1e-12
        ordered &= r["correction"] <= r["no_correction"] + 1e-12
    stars = {k: max_stable_alpha(p).alpha_star for k, p in probs.items()}
    thresholds = Table("fig3b_thresholds", ["variant", "alpha_star"],
                       [dict(variant=k, alpha_star=v) for k, v in stars.items()])
    checks = [
        Check("fig3b_correction_raises_threshold", stars["correction"] >= stars["no_correction"],
              f"{stars['correction']:.6g}", f">= {stars['no_correction']:.6g}"),
        Check("fig3b_radius_ordering", ordered, "",
              f"no_discrepancy <= correction <= no_correction for alpha in [{alpha_min}, {alpha_max}]"),
    ]
    return Outcome([sweep, thresholds], checks)


# ---------------------------------------------------------------------------
# regression heatmap


FIG2B_TAUS = (1, 4, 16, 64)


def fig2b(dataset: Optional[str] = None, steps: int = 100_000, full_scale: bool = False,
          jobs: int = 1, data: Optional[Dataset] = None, alpha_points: int = 32, **_) -> Outcome:
    if data is None:
        path = cpusmall_path(dataset)
        if not path.exists():
            raise RecipeError(
                f"cpusmall dataset not found at {path}. Download the libsvm-format file "
                f"'cpusmall' and pass --dataset PATH or set {DATASET_ENV}.")
        data = load_libsvm(path)
    if full_scale:
        steps = 1_000_000
    lam_max = largest_curvature(data.X)
    alphas = np.geomspace(1e-3, 4.0, alpha_points) / lam_max
    grid = heatmap_grid(data, alphas, FIG2B_TAUS, steps, jobs)
    table = Table("fig2b_heatmap", ["tau", "alpha", "final_loss", "boundary_alpha", "lam_max"])
    for tau, row in zip(FIG2B_TAUS, grid):
        for a, loss in zip(alphas, row):
            table.records.append(dict(tau=tau, alpha=a, final_loss="DIVERGED" if loss is None else loss,
                                      boundary_alpha=lemma1_threshold(lam_max, tau), lam_max=lam_max))
    checks = []
    for tau, emp, pred in boundary_offsets(alphas, FIG2B_TAUS, grid, lam_max):
        checks.append(Check(f"fig2b_boundary_tau{tau}", abs(emp - pred) <= 1,
                            f"first diverged cell {emp}", f"cell {pred} +- 1"))
    return Outcome([table], checks)


# ---------------------------------------------------------------------------
# cost model tables


# (name, P, N, total epochs, warmup epochs, expected GPipe %, expected amortized %)
UTIL_ROWS = (
    ("imagenet", 107, 16, 100, 30, 13, 33),
    ("iwslt14", 93, 19, 60, 10, 17, 55),
    ("wmt17", 91, 116, 80, 4, 56, 96),
)


def table1_util(**_) -> Outcome:
    table = Table("utilization", ["workload", "P", "N", "gpipe_utilization", "total_epochs",
                                  "warmup_epochs", "amortized_utilization"])
    checks = []
    for name, P, N, E, Ew, want_sync, want_amort in UTIL_ROWS:
        sync = pipeline_utilization(PipelineSpec(P=P, mode=Mode.GPIPE, N=N))
        amort = amortized_utilization(E, Ew, sync)
        table.records.append(dict(workload=name, P=P, N=N, gpipe_utilization=sync,
                                  total_epochs=E, warmup_epochs=Ew, amortized_utilization=amort))
        checks.append(Check(f"util_gpipe_{name}", round(100 * sync) == want_sync,
                            f"{100 * sync:.2f}%", f"{want_sync}%"))
        checks.append(Check(f"util_amortized_{name}", abs(100 * amort - want_amort) <= 1,
                            f"{100 * amort:.2f}%", f"{want_amort}% +- 1"))
    mem = Table("memory_multipliers", ["mode", "optimizer", "with_correction", "multiplier",
                                       "numerator", "denominator"])
    spec = PipelineSpec(P=4, mode=Mode.PIPEMARE)
    for opt, want in ((Optimizer.MOMENTUM, (4, 3)), (Optimizer.ADAMW, (5, 4))):
        _, mult = weight_optimizer_memory(spec, opt, with_correction=True)
        mem.records.append(dict(mode="pipemare", optimizer=opt.value, with_correction=True,
                                multiplier=float(mult), numerator=mult.numerator,
                                denominator=mult.denominator))
        checks.append(Check(f"memory_multiplier_{opt.value}",
                            (mult.numerator, mult.denominator) == want,
                            f"{mult}", f"{want[0]}/{want[1]}"))
    return Outcome([table, mem], checks)


RATIO_ROWS = (("cifar10", 107, 0.097), ("iwslt14", 93, 0.104), ("wmt17", 91, 0.105))


def brute_force_segment(spec: PipelineSpec) -> int:
    costs = [_segmented_memory(spec, S) for S in range(1, spec.P + 1)]
    return 1 + int(np.argmin(costs))


def appa_ratios(max_P: int = 512, **_) -> Outcome:
    table = Table("recompute_ratios", ["workload", "P", "asymptotic_ratio", "optimal_segment",
                                       "exact_ratio"])
    checks = []
    for name, P, want in RATIO_ROWS:
        spec = PipelineSpec(P=P, mode=Mode.PIPEMARE)
        ratio = asymptotic_savings_ratio(spec)
        exact = activation_memory(spec, "optimal") / activation_memory(spec)
        table.records.append(dict(workload=name, P=P, asymptotic_ratio=ratio,
                                  optimal_segment=optimal_segment(spec), exact_ratio=exact))
        checks.append(Check(f"recompute_ratio_{name}", abs(ratio - want) <= 1e-3,
                            f"{ratio:.4f}", f"{want} +- 0.001"))
    mismatches = []
    for mode in (Mode.PIPEMARE, Mode.GPIPE):
        for P in range(1, max_P + 1):
            spec = PipelineSpec(P=P, mode=mode, N=P)
            if optimal_segment(spec) != brute_force_segment(spec):
                mismatches.append(f"{mode.value}:P={P}")
    checks.append(Check("optimal_segment_brute_force", not mismatches,
                        ";".join(mismatches[:5]) or "all match", f"P in 1..{max_P}"))
    return Outcome([table], checks)


# ---------------------------------------------------------------------------
# stochastic delays


def hogwild(draws: int = 100_000, steps: int = 5_000, seed: int = 0, **_) -> Outcome:
    tau_max, mean = 20, 5.0
    rng = np.random.default_rng(seed)
    sample = sample_hogwild_delays(rng, tau_max, [mean], size=draws)[:, 0]
    analytic = truncated_delay_mean(tau_max, mean)
    emp = float(sample.mean())
    hist = Table("hogwild_histogram", ["delay", "count", "expected_count"])
    cdf = lambda x: -math.expm1(-x / mean)
    for k in range(tau_max + 1):
        p = (cdf(k + 1) - cdf(k)) / cdf(tau_max + 1)
        hist.records.append(dict(delay=k, count=int(np.sum(sample == k)), expected_count=draws * p))
    checks = [
        Check("hogwild_truncation", int(sample.max()) <= tau_max and int(sample.min()) >= 0,
              f"range [{sample.min()}, {sample.max()}]", f"[0, {tau_max}]"),
        Check("hogwild_mean", abs(emp - analytic) <= 0.02 * analytic,
              f"{emp:.5f}", f"{analytic:.5f} +- 2%"),
    ]
    # training under stochastic delays, with and without per-stage rescaling
    data_rng = np.random.default_rng(seed)
    X = data_rng.standard_normal((512, 8))
    y = X @ data_rng.standard_normal(8)
    obj = LeastSquares(X, y)
    delays = HogwildDelays(tau_max, (8.0, 6.0, 4.0, 2.0))
    runs = Table("hogwild_runs", ["rescaled", "diverged", "steps_run", "final_loss"])
    lr = 0.9 / largest_curvature(X)
    for K in (0, steps // 4):
        traj = run_experiment(obj, TrainSchedule(ConstantLR(lr), K=K), SGD(), steps, seed,
                              hogwild=delays, w0=0.0, record_every=steps)
        runs.records.append(dict(rescaled=K > 0, diverged=traj.diverged, steps_run=traj.steps_run,
                                 final_loss=traj.final_loss))
    return Outcome([hist, runs], checks)


RECIPES = {
    "fig2a": fig2a,
    "fig2b": fig2b,
    "fig3a": fig3a,
    "fig3b": fig3b,
    "table1-util": table1_util,
    "appA-ratios": appa_ratios,
    "hogwild": hogwild,
}

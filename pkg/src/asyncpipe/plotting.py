"""PNG figures for the ``repro`` report, drawn from the same tables written as CSV."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .runner import Outcome  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _traces(table, key: str, title: str, out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    seen = set()
    for rec in table.records:
        if rec["seed"] != table.records[0]["seed"]:
            continue
        seen.add(rec[key])
    for value in sorted(seen):
        rows = [r for r in table.records if r[key] == value and r["seed"] == table.records[0]["seed"]]
        ax.semilogy([r["t"] for r in rows], [max(r["w_abs"], 1e-12) for r in rows], label=f"{key}={value}")
    ax.set_xlabel("step")
    ax.set_ylabel("|w|")
    ax.set_title(title)
    ax.legend()
    return _save(fig, out)


def plot_fig2a(outcome: Outcome, outdir: Path) -> list:
    return [_traces(outcome.table("fig2a_trajectories"), "tau", "delayed quadratic, alpha=0.2",
                    outdir / "fig2a.png")]


def plot_fig3a(outcome: Outcome, outdir: Path) -> list:
    return [_traces(outcome.table("fig3a_trajectories"), "variant", "discrepancy, alpha=0.1",
                    outdir / "fig3a.png")]


def plot_fig3b(outcome: Outcome, outdir: Path) -> list:
    recs = outcome.table("fig3b_radius").records
    alpha = [r["alpha"] for r in recs]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for col, label in (("radius_no_correction", "no correction"), ("radius_correction", "correction"),
                       ("radius_no_discrepancy", "no discrepancy")):
        ax.plot(alpha, [r[col] for r in recs], label=label)
    ax.axhline(1.0, color="k", lw=0.8, ls=":")
    ax.set_xlabel("alpha")
    ax.set_ylabel("spectral radius")
    ax.legend()
    return [_save(fig, outdir / "fig3b.png")]


def plot_fig2b(outcome: Outcome, outdir: Path) -> list:
    recs = outcome.table("fig2b_heatmap").records
    taus = sorted({r["tau"] for r in recs})
    alphas = sorted({r["alpha"] for r in recs})
    grid = np.full((len(taus), len(alphas)), np.nan)
    for r in recs:
        if r["final_loss"] != "DIVERGED":
            grid[taus.index(r["tau"]), alphas.index(r["alpha"])] = np.log10(max(r["final_loss"], 1e-300))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("red")
    mesh = ax.pcolormesh(np.arange(len(alphas) + 1), np.arange(len(taus) + 1),
                         np.ma.masked_invalid(grid), cmap=cmap)
    fig.colorbar(mesh, ax=ax, label="log10 final loss")
    bounds = [next(r["boundary_alpha"] for r in recs if r["tau"] == t) for t in taus]
    ax.plot(np.interp(np.log(bounds), np.log(alphas), np.arange(len(alphas))) + 0.5,
            np.arange(len(taus)) + 0.5, "w--", label="stability bound")
    ax.set_yticks(np.arange(len(taus)) + 0.5, [str(t) for t in taus])
    step = max(1, len(alphas) // 6)
    ax.set_xticks(np.arange(0, len(alphas), step) + 0.5, [f"{a:.2g}" for a in alphas[::step]])
    ax.set_xlabel("alpha")
    ax.set_ylabel("tau")
    ax.legend(loc="upper right")
    return [_save(fig, outdir / "fig2b.png")]


def plot_hogwild(outcome: Outcome, outdir: Path) -> list:
    recs = outcome.table("hogwild_histogram").records
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([r["delay"] for r in recs], [r["count"] for r in recs], label="sampled")
    ax.plot([r["delay"] for r in recs], [r["expected_count"] for r in recs], "k.-", label="expected")
    ax.set_xlabel("delay")
    ax.set_ylabel("count")
    ax.legend()
    return [_save(fig, outdir / "hogwild.png")]


PLOTTERS = {
    "fig2a": plot_fig2a,
    "fig2b": plot_fig2b,
    "fig3a": plot_fig3a,
    "fig3b": plot_fig3b,
    "hogwild": plot_hogwild,
}


def render(name: str, outcome: Outcome, outdir) -> list:
    """Write the figures for one recipe; recipes without a figure return an empty list."""
    plotter = PLOTTERS.get(name)
    return plotter(outcome, Path(outdir)) if plotter else []

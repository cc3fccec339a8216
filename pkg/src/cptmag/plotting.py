"""Static figures for the CLI report path. Library code never imports this."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scenarios import ScenarioResult  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _trace_figure(result: ScenarioResult, out: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for log in result.runlogs[:20]:
        it = log.column("iteration")
        ax1.plot(it, log.column("B_est_nT"), lw=0.8, alpha=0.7)
        ax2.semilogy(it, log.column("delta_B_nT"), lw=0.8, alpha=0.7)
    if result.runlogs:
        ax1.plot(result.runlogs[0].column("iteration"), result.runlogs[0].b_true, "k--", lw=1, label="true B")
        ax1.legend()
    ax1.set_ylabel("B estimate (nT)")
    ax2.set_ylabel("ΔB (nT)")
    ax2.set_xlabel("cycle")
    return _save(fig, out)


def _scaling_figure(result: ScenarioResult, out: Path) -> Path:
    t = result.tables["ensemble"]
    T = t.column("T_total_s")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.5))
    ax1.fill_between(T, t.column("delta_B_lo_nT"), t.column("delta_B_hi_nT"), alpha=0.3, label="68.3% band")
    ax1.loglog(T, t.column("delta_B_median_nT"), label="Bayesian median")
    ax1.loglog(T, t.column("info_bound_nT"), "k:", label="C/√(Σ N T²)")
    ax1.loglog(T, t.column("sql_T1_nT"), "b--", label="lock SQL, T_1")
    ax1.loglog(T, t.column("sql_Tmax_nT"), "g--", label="lock SQL, T_max")
    ax1.set_xlabel("total interrogation time T (s)")
    ax1.set_ylabel("ΔB (nT)")
    ax1.legend(fontsize=8)
    ax2.fill_between(T, t.column("eta_T_lo_pT_sqrtHz"), t.column("eta_T_hi_pT_sqrtHz"), alpha=0.3)
    ax2.loglog(T, t.column("eta_T_median_pT_sqrtHz"))
    ax2.set_xlabel("total interrogation time T (s)")
    ax2.set_ylabel("η = ΔB√T (pT/√Hz)")
    return _save(fig, out)


def _compare_figure(result: ScenarioResult, out: Path) -> Path:
    sweep, pts = result.tables["sweep"], result.tables["bayes_points"]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(sweep.column("B_max_nT"), sweep.column("eta_closed_pT_sqrtHz"), label="lock, closed form")
    ax.errorbar(pts.column("B_max_nT"), pts.column("eta_mc_median_pT_sqrtHz"),
                yerr=[pts.column("eta_mc_median_pT_sqrtHz") - pts.column("eta_mc_lo_pT_sqrtHz"),
                      pts.column("eta_mc_hi_pT_sqrtHz") - pts.column("eta_mc_median_pT_sqrtHz")],
                fmt="o", label="Bayesian, Monte Carlo")
    ax.set_xlabel("dynamic range B_max (nT)")
    ax.set_ylabel("η̄ (pT/√Hz)")
    ax.legend()
    return _save(fig, out)


def _track_figure(result: ScenarioResult, out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    log = result.runlogs[0]
    t = np.asarray(log.wall_time)
    ax.plot(t, log.b_true, "k--", lw=1, label="true B")
    ax.plot(t, log.column("B_est_nT"), lw=1, label="Bayesian")
    comp = result.meta.get("comparator")
    if comp is not None:
        ax.plot(comp.wall_time, comp.column("B_est_nT"), lw=1, label="lock at T_max")
    ax.set_ylim(min(log.b_true) - 30, max(log.b_true) + 30)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("B (nT)")
    ax.legend()
    return _save(fig, out)


def _coherence_figure(result: ScenarioResult, out: Path) -> Path:
    t = result.tables["fringe"]
    fig, ax = plt.subplots(figsize=(7, 4))
    T = t.column("T_R_s") * 1e3
    ax.plot(T, t.column("signal"), ".", ms=3, label="sampled")
    ax.plot(T, t.column("signal_noiseless"), lw=1, label="noiseless")
    ax.set_xlabel("T_R (ms)")
    ax.set_ylabel("transmitted signal")
    ax.legend()
    return _save(fig, out)


FIGURES = {
    "bayesian": _trace_figure,
    "frequentist": _trace_figure,
    "scaling": _scaling_figure,
    "compare": _compare_figure,
    "track": _track_figure,
    "coherence": _coherence_figure,
}


def render(result: ScenarioResult, out_dir: Path) -> list[Path]:
    name = result.config.scenario
    return [FIGURES[name](result, out_dir / f"{name}.png")]

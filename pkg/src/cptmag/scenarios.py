"""Experiment orchestration: one function per scenario, returning plain tables."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .config import ScenarioConfig
from .errors import DegeneratePosteriorError, InvalidConfigurationError
from .estimator import Estimate, bayes_update, moments, recentre, uniform_prior
from .frequentist import (LockState, alias_order, fmm_sensitivity_avg, fmm_uncertainty, lock_step,
                          single_measurement_uncertainty)
from .physics import (FieldProfile, PhysicsParams, RamseyConfig, alpha_factor, effective_atoms, rabi_at_fall,
                      readout_atoms, sample_measurement, transmitted_signal)
from .policy import Schedule, interrogation_time, optimal_phase

RUNLOG_COLUMNS = ("iteration", "T_i_s", "phi_c_rad", "p_e", "n_eff", "B_est_nT", "delta_B_nT",
                  "T_total_s", "tau_s", "eta_T_pT_sqrtHz", "eta_tau_pT_sqrtHz")


@dataclass
class RunLog:
    """Per-cycle rows of one run plus bookkeeping that stays out of the CSV.

    ``wall_time`` and ``b_true`` parallel the rows; ``meta`` carries flags such
    as aliasing that the sidecar reports.
    """

    run_index: int
    rows: list[tuple] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    b_true: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        k = RUNLOG_COLUMNS.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: list[tuple]

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    runlogs: list[RunLog] = field(default_factory=list)
    tables: dict[str, Table] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def run_rng(cfg: ScenarioConfig, run_index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one ensemble member, derived from (seed, run, stream)."""
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, run_index, stream]))


def _row(iteration, T_i, phi, p_e, n_eff, b_est, delta_b, T_total, tau):
    pt = 1e3  # nT -> pT
    return (iteration, T_i, phi, p_e, n_eff, b_est, delta_b, T_total, tau,
            delta_b * math.sqrt(T_total) * pt, delta_b * math.sqrt(tau) * pt)


# Bayesian estimation --------------------------------------------------------

def bayesian_estimate(cfg: ScenarioConfig, profile: FieldProfile, rng: np.random.Generator,
                      center: float, first_cycle: int, log: RunLog,
                      schedule: Schedule | None = None) -> Estimate:
    """One full adaptive estimate of M_b cycles, appending a row per cycle.

    Starts from a flat prior one fringe period (at T_1) wide about ``center``
    and replaces the posterior by a re-centred Gaussian before every cycle
    after the first.
    """
    P, sched = cfg.physics, schedule or cfg.schedule
    post = uniform_prior(center, sched.T_1, P, cfg.estimator.n_points)
    b0 = profile.value_at(first_cycle * P.T_c)
    if not post.b_lo < b0 < post.b_hi:
        raise InvalidConfigurationError(
            f"true field {b0} nT lies outside the initial interval [{post.b_lo:.4f}, {post.b_hi:.4f}] nT")
    est = None
    T_total = 0.0
    for i in range(1, sched.M_b + 1):
        T_i = interrogation_time(sched, i)
        n_i = P.D**2 * effective_atoms(P, T_i)
        if i > 1:
            post = recentre(post, est, T_i, P, max_points=cfg.estimator.n_points)
        phi = optimal_phase(post, T_i, n_i, cfg.phase_search, P)
        rc = RamseyConfig(T_i, phi)
        cycle = first_cycle + i - 1
        out = sample_measurement(P, rc, profile, cycle * P.T_c, rng, cycle)
        try:
            post = bayes_update(post, out, rc, P)
        except DegeneratePosteriorError:
            # Reject the shot: keep the prior and note the cycle.
            log.meta.setdefault("degenerate_cycles", []).append(cycle + 1)
        est = moments(post)
        T_total += T_i
        log.rows.append(_row(cycle + 1, T_i, rc.phi_c, out.p_e, out.n_eff,
                             est.b_est, est.delta_b, T_total, i * P.T_c))
        log.wall_time.append(out.wall_time)
        log.b_true.append(out.b_true)
    return est


def _static_field_for_run(cfg: ScenarioConfig, rng: np.random.Generator) -> FieldProfile:
    spread = cfg.estimator.field_spread
    if spread <= 0:
        return cfg.field
    half = cfg.physics.dynamic_range(cfg.schedule.T_1)
    return FieldProfile.static(cfg.estimator.prior_center + rng.uniform(-spread, spread) * half)


def _bayesian_runs(cfg: ScenarioConfig, schedule: Schedule | None = None, stream: int = 0) -> list[RunLog]:
    logs = []
    for r in range(cfg.runs):
        rng = run_rng(cfg, r, stream)
        profile = _static_field_for_run(cfg, rng)
        log = RunLog(r)
        est = bayesian_estimate(cfg, profile, rng, cfg.estimator.prior_center, 0, log, schedule)
        truth = log.b_true[-1]
        sched = schedule or cfg.schedule
        period = cfg.physics.period_in_field(interrogation_time(sched, sched.M_b))
        log.meta.update(B_true_nT=truth, B_est_nT=est.b_est, delta_B_nT=est.delta_b,
                        covered=abs(est.b_est - truth) < 3.0 * est.delta_b,
                        aliased=abs(est.b_est - truth) > 0.5 * period)
        logs.append(log)
    return logs


def _coverage_table(logs: list[RunLog]) -> Table:
    cols = ("run", "B_true_nT", "B_est_nT", "delta_B_nT", "covered", "aliased")
    return Table(cols, [(lg.run_index, lg.meta["B_true_nT"], lg.meta["B_est_nT"], lg.meta["delta_B_nT"],
                         int(lg.meta["covered"]), int(lg.meta["aliased"])) for lg in logs])


def run_bayesian(cfg: ScenarioConfig) -> ScenarioResult:
    logs = _bayesian_runs(cfg)
    res = ScenarioResult(cfg, runlogs=logs)
    res.tables["runs"] = _coverage_table(logs)
    res.meta["coverage"] = float(np.mean([lg.meta["covered"] for lg in logs]))
    res.meta["aliasing_failures"] = int(sum(lg.meta["aliased"] for lg in logs))
    res.meta["median_final_eta_tau_pT_sqrtHz"] = float(np.median([lg.rows[-1][10] for lg in logs]))
    return res


# Ensemble scaling ------------------------------------------------------------

def _ensemble_table(cfg: ScenarioConfig, logs: list[RunLog]) -> Table:
    P, sched = cfg.physics, cfg.schedule
    dB = np.array([lg.column("delta_B_nT") for lg in logs])
    etaT = np.array([lg.column("eta_T_pT_sqrtHz") for lg in logs])
    etatau = np.array([lg.column("eta_tau_pT_sqrtHz") for lg in logs])
    T = logs[0].column("T_total_s")
    tau = logs[0].column("tau_s")
    bound = analysis.information_bound(sched, P)
    stats = [analysis.ensemble_band(x) for x in (dB, etaT, etatau)]
    rows = []
    for k in range(T.size):
        sql = []
        for T_R in (sched.T_1, sched.T_max):
            sql.append(fmm_uncertainty(T_R, T[k], P) if T[k] >= 2 * T_R else math.nan)
        rows.append((k + 1, T[k], tau[k], *(s[m][k] for s in stats for m in range(3)), bound[k], *sql))
    cols = ("iteration", "T_total_s", "tau_s",
            "delta_B_median_nT", "delta_B_lo_nT", "delta_B_hi_nT",
            "eta_T_median_pT_sqrtHz", "eta_T_lo_pT_sqrtHz", "eta_T_hi_pT_sqrtHz",
            "eta_tau_median_pT_sqrtHz", "eta_tau_lo_pT_sqrtHz", "eta_tau_hi_pT_sqrtHz",
            "info_bound_nT", "sql_T1_nT", "sql_Tmax_nT")
    return Table(cols, rows)


def scaling_windows(sched: Schedule) -> dict[str, tuple[int, int]]:
    """Fit windows: the ramp 2..j and the plateau 3j..M_b."""
    return {"ramp": (2, sched.j), "plateau": (3 * sched.j, sched.M_b)}


def fit_ensemble(table: Table, sched: Schedule, T_c: float) -> Table:
    """Scaling exponents of the ensemble medians over the ramp and plateau windows."""
    records = analysis.trace_from_run(np.diff(table.column("T_total_s"), prepend=0.0),
                                      table.column("delta_B_median_nT"), T_c)
    eta = table.column("eta_T_median_pT_sqrtHz") * 1e-3
    records = [dataclasses.replace(r, eta_T=float(e)) for r, e in zip(records, eta)]
    rows = []
    for name, (lo, hi) in scaling_windows(sched).items():
        if hi - lo < 4:
            continue
        for quantity in ("delta_b", "eta_T"):
            fit = analysis.fit_scaling(records, lo, hi, quantity)
            rows.append((name, quantity, lo, hi, fit.exponent, fit.exponent_err, fit.prefactor))
    return Table(("window", "quantity", "i_lo", "i_hi", "exponent", "exponent_err", "prefactor"), rows)


def run_scaling(cfg: ScenarioConfig) -> ScenarioResult:
    logs = _bayesian_runs(cfg)
    res = ScenarioResult(cfg, runlogs=logs)
    table = _ensemble_table(cfg, logs)
    res.tables["ensemble"] = table
    res.tables["fits"] = fit_ensemble(table, cfg.schedule, cfg.physics.T_c)
    lim = analysis.bayes_asymptotics(cfg.schedule, cfg.physics)
    res.meta["eta_avg_limit_pT_sqrtHz"] = lim.eta_avg_limit * 1e3
    res.meta["median_final_eta_tau_pT_sqrtHz"] = float(table.rows[-1][9])
    return res


# Frequentist lock -------------------------------------------------------------

def lock_run(cfg: ScenarioConfig, profile: FieldProfile, rng: np.random.Generator, T_R: float,
             measurements: int, run_index: int = 0) -> RunLog:
    """Lock started on the true central fringe; two rows per f_p determination.

    B_est is the servo's estimate after each cycle pair. delta_B is the
    shot-noise spread of the average of the estimates so far.
    """
    P = cfg.physics
    state = LockState.at_field(profile.value_at(0.0), P, cfg.frequentist.loop_gain)
    sigma1 = single_measurement_uncertainty(T_R, P)
    log = RunLog(run_index)
    estimates = []
    for m in range(1, measurements + 1):
        b_prev = state.field(P)
        wall = state.cycle_count * P.T_c
        state, b_est, sample = lock_step(state, T_R, profile, wall, P, rng)
        estimates.append(b_est)
        delta = sigma1 / math.sqrt(m)
        for half, (p, phi, b) in enumerate(((sample.p_minus, -0.5 * math.pi, b_prev),
                                           (sample.p_plus, 0.5 * math.pi, b_est))):
            cycle = 2 * (m - 1) + half
            log.rows.append(_row(cycle + 1, T_R, phi % (2 * math.pi), p, sample.n_eff, b, delta,
                                 (cycle + 1) * T_R, (cycle + 1) * P.T_c))
            log.wall_time.append(wall + half * P.T_c)
            log.b_true.append(sample.b_true)
    truth = log.b_true[-1]
    order = alias_order(state.field(P), truth, T_R, P)
    log.meta.update(B_true_nT=truth, B_est_nT=state.field(P), alias_order=order, aliased=order != 0,
                    lock_lost=state.lock_lost, estimates=estimates)
    return log


def lock_uncertainty_table(cfg: ScenarioConfig, logs: list[RunLog], T_R: float) -> Table:
    """Monte Carlo spread of the averaged lock estimate versus the closed forms.

    At each checkpoint the averaged estimate of every run is formed from its
    first m determinations (T = 2 m T_R); the spread is taken across runs.
    """
    P = cfg.physics
    est = np.array([lg.meta["estimates"] for lg in logs])
    m_all = est.shape[1]
    checkpoints = sorted({m for m in np.unique(np.geomspace(1, m_all, 24).round().astype(int)) if m >= 1})
    rows = []
    for m in checkpoints:
        T = 2 * m * T_R
        spread = float(np.std(est[:, :m].mean(axis=1), ddof=1)) if len(logs) > 1 else math.nan
        model = single_measurement_uncertainty(T_R, P) / math.sqrt(m)
        rows.append((m, T, 2 * m * P.T_c, spread, model, fmm_uncertainty(T_R, T, P)))
    return Table(("measurements", "T_total_s", "tau_s", "mc_delta_B_nT", "shot_model_delta_B_nT",
                  "closed_form_delta_B_nT"), rows)


def run_frequentist(cfg: ScenarioConfig) -> ScenarioResult:
    lock = cfg.frequentist
    logs = [lock_run(cfg, cfg.field, run_rng(cfg, r), lock.T_R, lock.measurements, r) for r in range(cfg.runs)]
    res = ScenarioResult(cfg, runlogs=logs)
    res.tables["runs"] = Table(
        ("run", "B_true_nT", "B_est_nT", "alias_order", "aliased", "lock_lost"),
        [(lg.run_index, lg.meta["B_true_nT"], lg.meta["B_est_nT"], lg.meta["alias_order"],
          int(lg.meta["aliased"]), int(lg.meta["lock_lost"])) for lg in logs])
    res.tables["uncertainty"] = lock_uncertainty_table(cfg, logs, lock.T_R)
    res.meta["aliased_runs"] = int(sum(lg.meta["aliased"] for lg in logs))
    res.meta["lock_lost_runs"] = int(sum(lg.meta["lock_lost"] for lg in logs))
    return res


# Tracking ---------------------------------------------------------------------

def track_blocks(cfg: ScenarioConfig) -> int:
    """Full estimates needed to cover every field segment."""
    span = cfg.schedule.M_b * cfg.physics.T_c
    return int(math.floor(cfg.field.start_times[-1] / span + 1e-9)) + 1


def run_track(cfg: ScenarioConfig) -> ScenarioResult:
    """Back-to-back adaptive estimates against a time-varying field.

    Each estimate restarts from a flat prior centred on the previous result.
    T_total/tau (and the sensitivities) restart with every estimate while the
    iteration counter keeps running. A frequentist lock at T_max over the same
    span serves as comparator.
    """
    M = cfg.schedule.M_b
    blocks = track_blocks(cfg)
    res = ScenarioResult(cfg)
    rows = []
    for r in range(cfg.runs):
        rng = run_rng(cfg, r)
        log = RunLog(r)
        center = cfg.estimator.prior_center
        for b in range(blocks):
            est = bayesian_estimate(cfg, cfg.field, rng, center, b * M, log)
            center = est.b_est
        res.runlogs.append(log)
        rows.extend(_step_rows(cfg, log, r))
    res.tables["steps"] = Table(("run", "block", "B_true_nT", "converged_after", "final_B_est_nT",
                                 "final_delta_B_nT"), rows)
    comparator = lock_run(cfg, cfg.field, run_rng(cfg, 0, stream=1), cfg.schedule.T_max, blocks * M // 2)
    res.meta["comparator"] = comparator
    changes = [t for t in cfg.field.start_times[1:]]
    res.tables["comparator"] = Table(
        ("step_time_s", "B_true_nT", "B_est_nT", "alias_order"),
        [_comparator_at(cfg, comparator, t) for t in changes + [math.inf]])
    res.meta["comparator_aliased"] = any(row[3] != 0 for row in res.tables["comparator"].rows)
    return res


def convergence_iteration(b_est, delta_b, truth, start: int = 0):
    """First index ≥ start after which the estimate stays within 3·ΔB of truth."""
    b_est, delta_b = np.asarray(b_est), np.asarray(delta_b)
    inside = np.abs(b_est - truth) < 3.0 * delta_b
    bad = np.nonzero(~inside[start:])[0]
    if bad.size == 0:
        return start
    last_bad = start + int(bad[-1])
    return last_bad + 1 if last_bad + 1 < b_est.size else None


def _step_rows(cfg: ScenarioConfig, log: RunLog, run_index: int) -> list[tuple]:
    M = cfg.schedule.M_b
    b_est, delta_b = log.column("B_est_nT"), log.column("delta_B_nT")
    rows = []
    for blk in range(len(log.rows) // M):
        sl = slice(blk * M, (blk + 1) * M)
        truth = log.b_true[blk * M]
        it = convergence_iteration(b_est[sl], delta_b[sl], truth)
        rows.append((run_index, blk, truth, -1 if it is None else it + 1, b_est[sl][-1], delta_b[sl][-1]))
    return rows


def _comparator_at(cfg: ScenarioConfig, log: RunLog, t_change: float) -> tuple:
    """Lock state just before the next change (or at the end of the run)."""
    walls = np.asarray(log.wall_time)
    idx = int(np.searchsorted(walls, t_change - 1e-9)) - 1
    idx = max(idx - (idx % 2 == 0), 1)  # last completed cycle pair
    truth = log.b_true[idx]
    b = log.rows[idx][5]
    T_R = log.rows[idx][1]
    return (t_change if math.isfinite(t_change) else walls[-1], truth, b,
            alias_order(b, truth, T_R, cfg.physics))


# Comparison -------------------------------------------------------------------

def _lock_sensitivity(cfg: ScenarioConfig, T_R: float, stream: int) -> tuple[float, float]:
    """Monte Carlo averaged-time sensitivity of a lock at T_R, with a bootstrap-free band."""
    measurements = cfg.frequentist.measurements
    logs = [lock_run(cfg, cfg.field, run_rng(cfg, r, stream), T_R, measurements, r) for r in range(cfg.runs)]
    if len(logs) < 2:
        return math.nan, math.nan
    means = np.array([np.mean(lg.meta["estimates"]) for lg in logs])
    tau = 2 * measurements * cfg.physics.T_c
    spread = float(np.std(means, ddof=1))
    rel = 1.0 / math.sqrt(2 * (len(logs) - 1))
    return spread * math.sqrt(tau), spread * math.sqrt(tau) * rel


def run_compare(cfg: ScenarioConfig) -> ScenarioResult:
    P, sched = cfg.physics, cfg.schedule
    res = ScenarioResult(cfg)
    lim = analysis.bayes_asymptotics(sched, P)
    pt = 1e3
    rows = []
    for k, (label, T_R) in enumerate((("frequentist_T1", sched.T_min), ("frequentist_Tmax", sched.T_max))):
        mc, err = _lock_sensitivity(cfg, T_R, stream=10 + k)
        rows.append((label, T_R, P.dynamic_range(T_R), fmm_sensitivity_avg(T_R, P) * pt, mc * pt, err * pt))
    points = []
    for k, T_1 in enumerate(cfg.compare.t1_values):
        s = dataclasses.replace(sched, T_min=T_1)
        sub = dataclasses.replace(cfg, estimator=dataclasses.replace(cfg.estimator, field_spread=0.0))
        logs = _bayesian_runs(sub, s, stream=20 + k)
        eta = np.array([lg.rows[-1][10] for lg in logs])
        med, lo, hi = analysis.ensemble_band(eta)
        points.append((s.T_1, P.dynamic_range(s.T_1), analysis.bayes_asymptotics(s, P).eta_avg_limit * pt,
                       float(med), float(lo), float(hi)))
        if k == 0:
            rows.append(("bayesian", s.T_1, P.dynamic_range(s.T_1), lim.eta_avg_limit * pt, float(med),
                         float(0.5 * (hi - lo))))
    res.tables["table"] = Table(("protocol", "T_first_s", "B_max_nT", "eta_closed_pT_sqrtHz",
                                 "eta_mc_pT_sqrtHz", "eta_mc_err_pT_sqrtHz"), rows)
    res.tables["bayes_points"] = Table(("T_1_s", "B_max_nT", "eta_closed_pT_sqrtHz", "eta_mc_median_pT_sqrtHz",
                                        "eta_mc_lo_pT_sqrtHz", "eta_mc_hi_pT_sqrtHz"), points)
    grid = np.geomspace(sched.T_min, 2.0 * sched.T_max, cfg.compare.sweep_points)
    res.tables["sweep"] = Table(("T_R_s", "B_max_nT", "eta_closed_pT_sqrtHz"),
                                [(float(t), P.dynamic_range(t), fmm_sensitivity_avg(t, P) * pt) for t in grid])
    return res


# Coherence --------------------------------------------------------------------

def coherence_fringe(cfg: ScenarioConfig, rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Time-domain fringe swept over T_R; noisy when ``rng`` is given.

    Shot noise enters through the fringe term: the excited fraction is drawn
    binomially over round(D² N_eff(T_R)) atoms and mapped back to the signal.
    """
    P, c = cfg.physics, cfg.coherence
    B = cfg.field.value_at(0.0)
    delta_f = P.larmor_frequency(B) + c.beat_hz
    T = np.linspace(c.t_min, c.t_max, c.n_samples)
    rc = RamseyConfig(c.t_max, 0.0, delta_f)
    ideal = transmitted_signal(P, rc, B, T_R=T)
    if rng is None:
        return T, ideal, ideal, delta_f
    cosine = np.cos(2 * np.pi * c.beat_hz * T)
    n = np.array([max(readout_atoms(P, t), 1) for t in T])
    p_hat = rng.binomial(n, 0.5 * (1.0 - cosine)) / n
    # The signal is affine in the fringe cosine; swap in 1 − 2p̂ for it.
    noisy = ideal + _fringe_slope(P, T, delta_f) * ((1.0 - 2.0 * p_hat) - cosine)
    return T, noisy, ideal, delta_f


def _fringe_slope(P: PhysicsParams, T: np.ndarray, delta_f: float) -> np.ndarray:
    """d(signal)/d(cos phase) at each T_R."""
    a = alpha_factor(P, rabi_at_fall(P, T), delta_f)
    decay = a * P.Gamma
    prep = 1.0 - np.exp(-decay * P.tau_p)
    return a * np.exp(-decay * P.tau_d) * prep * np.exp(-((T / P.T_chi) ** 2))


def run_coherence(cfg: ScenarioConfig) -> ScenarioResult:
    res = ScenarioResult(cfg)
    fits, fringe_rows = [], []
    for r in range(cfg.runs):
        rng = run_rng(cfg, r) if cfg.coherence.shot_noise else None
        T, signal, ideal, delta_f = coherence_fringe(cfg, rng)
        fit = analysis.fit_coherence(zip(T, signal), cfg.physics, delta_f)
        fits.append((r, fit.T_chi, fit.decay_rate, fit.decay_rate_err, fit.frequency, fit.contrast,
                     fit.residual_rms))
        if r == 0:
            fringe_rows = [(float(t), float(s), float(i)) for t, s, i in zip(T, signal, ideal)]
    res.tables["fringe"] = Table(("T_R_s", "signal", "signal_noiseless"), fringe_rows)
    res.tables["fit"] = Table(("run", "T_chi_s", "decay_rate_per_s2", "decay_rate_err_per_s2",
                               "beat_frequency_Hz", "contrast", "residual_rms"), fits)
    res.meta["median_T_chi_s"] = float(np.median([f[1] for f in fits]))
    return res


RUNNERS = {
    "bayesian": run_bayesian,
    "scaling": run_scaling,
    "frequentist": run_frequentist,
    "track": run_track,
    "compare": run_compare,
    "coherence": run_coherence,
}


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    return RUNNERS[cfg.scenario](cfg)

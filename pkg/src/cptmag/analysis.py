"""Figures of merit from run traces: sensitivities, scaling fits, limits, gains."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .errors import FitError, InvalidConfigurationError
from .physics import PhysicsParams, alpha_factor, effective_atoms, rabi_at_fall
from .policy import Schedule, interrogation_time

# Central 68.3% of an ensemble, as (lower, upper) percentiles.
BAND_PERCENTILES = (15.85, 84.15)


@dataclass(frozen=True)
class SensitivityRecord:
    iteration: int
    T: float
    tau: float
    delta_b: float
    eta_T: float
    eta_tau: float

    def __post_init__(self):
        if not (self.T > 0 and self.tau > 0 and self.delta_b > 0):
            raise InvalidConfigurationError("T, tau and delta_b must be positive")
        if self.T > self.tau * (1 + 1e-12):
            raise InvalidConfigurationError(f"T = {self.T} exceeds tau = {self.tau}")


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    exponent_err: float
    prefactor: float


def trace_from_run(T_i: Sequence[float], delta_b: Sequence[float], T_c: float,
                   cycles_per_row: int = 1) -> list[SensitivityRecord]:
    """Cumulative T and τ for each logged row, in row order.

    ``cycles_per_row`` is 1 for Bayesian iterations and 2 for a frequentist f_p
    determination; ``T_i`` is the interrogation time summed over one row.
    """
    T_i = np.asarray(T_i, dtype=float)
    delta_b = np.asarray(delta_b, dtype=float)
    if T_i.size == 0:
        raise InvalidConfigurationError("empty run log")
    if T_i.shape != delta_b.shape:
        raise InvalidConfigurationError("T_i and delta_b lengths differ")
    T = np.cumsum(T_i)
    out = []
    for k in range(T_i.size):
        tau = (k + 1) * cycles_per_row * T_c
        d = float(delta_b[k])
        out.append(SensitivityRecord(k + 1, float(T[k]), tau, d, d * math.sqrt(T[k]), d * math.sqrt(tau)))
    return out


def fit_power_law(x, y) -> ScalingFit:
    """Unweighted least-squares line through (log x, log y)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 3 or np.ptp(np.log(x)) == 0:
        raise InvalidConfigurationError("need at least 3 distinct abscissae for a power-law fit")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidConfigurationError("power-law fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    if x.size == 3:
        coef = np.polyfit(lx, ly, 1)
        cov = np.zeros((2, 2))
    else:
        coef, cov = np.polyfit(lx, ly, 1, cov=True)
    return ScalingFit(float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0))), float(math.exp(coef[1])))


def fit_scaling(records: Sequence[SensitivityRecord], i_lo: int, i_hi: int,
                quantity: str = "delta_b") -> ScalingFit:
    """Power-law exponent of ``quantity`` versus T over iterations i_lo..i_hi inclusive."""
    if i_hi - i_lo < 4:
        raise InvalidConfigurationError(f"window {i_lo}..{i_hi} has fewer than 5 iterations")
    if quantity not in ("delta_b", "eta_T", "eta_tau"):
        raise InvalidConfigurationError(f"unknown quantity {quantity!r}")
    sel = [r for r in records if i_lo <= r.iteration <= i_hi]
    if len(sel) != i_hi - i_lo + 1:
        raise InvalidConfigurationError(f"records do not cover iterations {i_lo}..{i_hi}")
    return fit_power_law([r.T for r in sel], [getattr(r, quantity) for r in sel])


@dataclass(frozen=True)
class BayesLimits:
    C: float
    N_j: float
    eta_limit: float
    eta_avg_limit: float
    T_max: float

    def delta_b_limit(self, T):
        """Plateau uncertainty C/√(N_j T_max T)."""
        return self.C / np.sqrt(self.N_j * self.T_max * np.asarray(T, dtype=float))


def bayes_asymptotics(sched: Schedule, params: PhysicsParams) -> BayesLimits:
    C = 1.0 / (2.0 * math.pi * abs(params.zeeman_coefficient))
    n_j = effective_atoms(params, sched.T_max)
    return BayesLimits(
        C=C,
        N_j=n_j,
        eta_limit=C / math.sqrt(n_j * sched.T_max),
        eta_avg_limit=C * math.sqrt(params.T_c) / (math.sqrt(n_j) * sched.T_max),
        T_max=sched.T_max,
    )


def information_bound(sched: Schedule, params: PhysicsParams) -> np.ndarray:
    """C/√(Σ_{k≤i} D² N_k T_k²) for every iteration i of the schedule."""
    C = 1.0 / (2.0 * math.pi * abs(params.zeeman_coefficient))
    T = sched.times()
    info = np.cumsum(params.D**2 * effective_atoms(params, T) * T**2)
    return C / np.sqrt(info)


def gain_q(T_R: float, n_eff: float, sched: Schedule, params: PhysicsParams) -> float:
    """Sensitivity ratio Q = 2 T_max √N_j / (T_R √N_eff) of a lock at T_R over the Bayesian limit."""
    n_j = effective_atoms(params, sched.T_max)
    return 2.0 * sched.T_max * math.sqrt(n_j) / (T_R * math.sqrt(n_eff))


def gain_db(eta_ref: float, eta_new: float) -> float:
    """10·log10(eta_ref/eta_new).

    Sensitivities are amplitude-like, yet the gains quoted for this sensor
    (Q ≈ 35 as 15.4 dB, Q = 2 as 3 dB) use 10·log10 of the ratio, so this
    does too.
    """
    if not (eta_ref > 0 and eta_new > 0):
        raise InvalidConfigurationError("sensitivities must be positive")
    return 10.0 * math.log10(eta_ref / eta_new)


def ensemble_band(values) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Median and 68.3% percentile band over axis 0 (runs)."""
    v = np.asarray(values, dtype=float)
    lo, hi = np.percentile(v, BAND_PERCENTILES, axis=0)
    return np.median(v, axis=0), lo, hi


@dataclass(frozen=True)
class CoherenceFit:
    T_chi: float
    decay_rate: float  # 1/T_chi², s⁻²
    decay_rate_err: float
    frequency: float  # |Δf − f_B|, Hz
    contrast: float
    residual_rms: float


def _fringe_model(params: PhysicsParams, delta_f: float):
    def model(T, rate, freq, contrast):
        a = alpha_factor(params, rabi_at_fall(params, T), delta_f)
        decay = a * params.Gamma
        prep = 1.0 - np.exp(-decay * params.tau_p)
        env = np.exp(-rate * T**2)
        return 1.0 - a * np.exp(-decay * params.tau_d) * (1.0 - contrast * prep * env * np.cos(2 * np.pi * freq * T))

    return model


def fit_coherence(samples: Iterable[tuple[float, float]], params: PhysicsParams,
                  delta_f: float = 0.0, sigma=None) -> CoherenceFit:
    """Fit the decaying time-domain fringe and return the coherence time.

    The fringe's optical prefactors come from ``params``; the fit varies the
    Gaussian decay rate 1/T_χ², the beat frequency and a contrast scale. A
    non-positive rate means no resolvable decay and yields T_χ = inf.
    """
    data = np.asarray(list(samples), dtype=float)
    if data.ndim != 2 or data.shape[0] < 20:
        raise InvalidConfigurationError("need at least 20 (T_R, signal) samples")
    order = np.argsort(data[:, 0])
    T, S = data[order, 0], data[order, 1]
    model = _fringe_model(params, delta_f)

    # Beat-frequency guess from the spectrum of the fringe about its baseline.
    base = model(T, 0.0, 0.0, 0.0)
    resid = S - base
    grid = np.linspace(T[0], T[-1], 4 * T.size)
    spectrum = np.abs(np.fft.rfft(np.interp(grid, T, resid) - np.mean(resid)))
    freqs = np.fft.rfftfreq(grid.size, grid[1] - grid[0])
    f0 = float(freqs[1 + np.argmax(spectrum[1:])])
    span = T[-1] - T[0]
    best, last = None, ""
    for guess in (f0, -f0):
        try:
            # Trial steps can overflow the envelope; such points are simply rejected.
            with np.errstate(over="ignore", invalid="ignore"):
                popt, pcov = curve_fit(model, T, S, p0=(1.0 / (0.5 * span) ** 2, guess, 1.0),
                                       sigma=sigma, absolute_sigma=sigma is not None, maxfev=20000)
        except (RuntimeError, ValueError) as exc:
            last = str(exc)
            continue
        with np.errstate(over="ignore", invalid="ignore"):
            rms = float(np.sqrt(np.mean((model(T, *popt) - S) ** 2)))
        if not math.isfinite(rms):
            continue
        if best is None or rms < best[2]:
            best = (popt, pcov, rms)
    if best is None or not np.all(np.isfinite(best[1])):
        rms = float(np.sqrt(np.mean(resid**2)))
        raise FitError(f"coherence fit did not converge: {last if best is None else 'singular covariance'}", rms)
    popt, pcov, rms = best
    if rms >= np.std(S):
        raise FitError("coherence fit explains no more of the signal than its mean", rms)
    rate, freq, contrast = (float(v) for v in popt)
    t_chi = 1.0 / math.sqrt(rate) if rate > 0 else math.inf
    return CoherenceFit(t_chi, rate, float(math.sqrt(pcov[0, 0])), abs(freq), contrast, rms)


def schedule_totals(sched: Schedule, params: PhysicsParams) -> tuple[float, float]:
    """Total interrogation time and averaging time of one full Bayesian run."""
    T = sum(interrogation_time(sched, i) for i in range(1, sched.M_b + 1))
    return T, sched.M_b * params.T_c

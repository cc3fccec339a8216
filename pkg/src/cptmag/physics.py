"""CPT-Ramsey signal model and the shot-noise measurement channel.

Units throughout: field in nT, frequencies in Hz, times in s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidCalibrationError, InvalidConfigurationError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhysicsParams:
    """Constants of the cold-atom 87Rb CPT sensor.

    ``Gamma`` is not quoted alongside the other constants; the default is the
    D1 natural linewidth (5.75 MHz) and it only enters the raw transmitted
    signal, never the normalized estimation path.
    """

    gamma: float = 7.0  # Hz/nT
    delta_mF: int = -2
    Gamma: float = 5.75e6  # Hz
    Omega0: float = 0.18e6  # Hz
    sigma_c: float = 1.83e-3  # m
    g: float = 9.81  # m/s^2
    T_chi: float = 10.0e-3  # s
    A: float = 10755.0
    D: float = 1.0
    T_c: float = 73e-3  # s
    tau_p: float = 300e-6  # s
    tau_d: float = 50e-6  # s

    def __post_init__(self):
        checks = {
            "gamma > 0": self.gamma > 0,
            "delta_mF != 0": self.delta_mF != 0,
            "Gamma > 0": self.Gamma > 0,
            "T_chi > 0": self.T_chi > 0,
            "A > 0": self.A > 0,
            "0 < D <= 1": 0 < self.D <= 1,
            "T_c > 0": self.T_c > 0,
            "sigma_c > 0": self.sigma_c > 0,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise InvalidConfigurationError("PhysicsParams violates " + ", ".join(bad))

    @property
    def zeeman_coefficient(self) -> float:
        """Larmor shift per unit field, Δm_F·γ in Hz/nT (signed)."""
        return self.delta_mF * self.gamma

    def larmor_frequency(self, B):
        return self.zeeman_coefficient * B

    def period_in_field(self, T_R: float) -> float:
        """Field span (nT) over which the fringe repeats at interrogation time T_R."""
        return 1.0 / (abs(self.zeeman_coefficient) * T_R)

    def dynamic_range(self, T_R: float) -> float:
        return 0.5 * self.period_in_field(T_R)


@dataclass(frozen=True)
class FieldProfile:
    """Piecewise-constant true field: each ``(start_time, B)`` holds until the next."""

    segments: tuple[tuple[float, float], ...] = ((0.0, 0.0),)

    def __post_init__(self):
        segs = tuple((float(t), float(b)) for t, b in self.segments)
        if not segs:
            raise InvalidConfigurationError("FieldProfile needs at least one segment")
        if segs[0][0] != 0.0:
            raise InvalidConfigurationError("first FieldProfile segment must start at t = 0")
        starts = [t for t, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidConfigurationError("FieldProfile start times must be strictly increasing")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def static(cls, B: float) -> "FieldProfile":
        return cls(((0.0, B),))

    # Cycle start times are built as index * T_c; the slack keeps a step that is
    # scheduled exactly on a cycle boundary from being missed by rounding.
    _EDGE_SLACK = 1e-9

    def value_at(self, t: float) -> float:
        starts = [s for s, _ in self.segments]
        idx = int(np.searchsorted(starts, t + self._EDGE_SLACK, side="right")) - 1
        return self.segments[max(idx, 0)][1]

    @property
    def start_times(self) -> list[float]:
        return [s for s, _ in self.segments]


@dataclass(frozen=True)
class RamseyConfig:
    T_R: float
    phi_c: float = 0.0
    delta_f: float = 0.0

    def __post_init__(self):
        if not self.T_R > 0:
            raise InvalidConfigurationError(f"T_R must be positive, got {self.T_R}")
        object.__setattr__(self, "phi_c", float(self.phi_c) % TWO_PI)


@dataclass(frozen=True)
class MeasurementOutcome:
    p_e: float
    n_eff: float
    cycle_index: int = 0
    wall_time: float = 0.0
    b_true: float = math.nan  # simulator bookkeeping, never seen by estimators

    def __post_init__(self):
        if not 0.0 <= self.p_e <= 1.0:
            raise InvalidConfigurationError(f"p_e outside [0, 1]: {self.p_e}")
        if not self.n_eff > 0:
            raise InvalidConfigurationError(f"n_eff must be positive: {self.n_eff}")


def fall_distance(params: PhysicsParams, t_fall):
    return 0.5 * params.g * np.asarray(t_fall, dtype=float) ** 2


def rabi_at_fall(params: PhysicsParams, t_fall):
    """Average Rabi frequency after the cloud has fallen for ``t_fall`` seconds.

    The beam intensity is taken as parabolic about the release point, so
    Ω = Ω₀(1 − z²/(2σ_c²)), floored at zero once the cloud leaves the beam.
    """
    z = fall_distance(params, t_fall)
    k = 1.0 / (2.0 * params.sigma_c**2)
    omega = params.Omega0 * (1.0 - k * z**2)
    omega = np.maximum(omega, 0.0)
    return float(omega) if np.ndim(omega) == 0 else omega


def alpha_factor(params: PhysicsParams, omega, delta_f):
    omega = np.asarray(omega, dtype=float)
    out = omega**2 / (params.Gamma**2 + 3.0 * omega**2 + 4.0 * np.asarray(delta_f, dtype=float) ** 2)
    return float(out) if np.ndim(out) == 0 else out


def transmitted_signal(params: PhysicsParams, cfg: RamseyConfig | None, B, *, T_R=None,
                       delta_f=None, phi_ls: float = 0.0):
    """Time-domain CPT-Ramsey transmitted signal (proportionality constant 1).

    ``T_R`` and ``delta_f`` override the values in ``cfg`` and may be arrays,
    which is how a time-domain fringe sweep is produced. ``phi_ls`` is the
    light-shift phase; it vanishes when the preparation pulse fully pumps the
    dark state.
    """
    T_R = np.asarray(cfg.T_R if T_R is None else T_R, dtype=float)
    delta_f = cfg.delta_f if delta_f is None else delta_f
    if np.any(T_R < 0):
        raise InvalidConfigurationError("T_R must be non-negative")
    omega = rabi_at_fall(params, T_R)
    a = alpha_factor(params, omega, delta_f)
    decay = a * params.Gamma
    prep = 1.0 - np.exp(-decay * params.tau_p)
    envelope = np.exp(-((T_R / params.T_chi) ** 2))
    phase = TWO_PI * (delta_f - params.larmor_frequency(B)) * T_R
    fringe = abs(1.0 / math.cos(phi_ls)) * np.cos(phase - phi_ls)
    out = 1.0 - a * np.exp(-decay * params.tau_d) * (1.0 - prep * envelope * fringe)
    return float(out) if np.ndim(out) == 0 else out


def fringe_phase(params: PhysicsParams, cfg: RamseyConfig, B):
    """Total Ramsey phase 2π(Δf − f_B)T_R + φ_c."""
    return TWO_PI * (cfg.delta_f - params.larmor_frequency(np.asarray(B, dtype=float))) * cfg.T_R + cfg.phi_c


def ideal_probability(params: PhysicsParams, cfg: RamseyConfig, B):
    """Normalized phase-domain population, ½{1 − cos[2π(Δf − f_B)T_R + φ_c]}."""
    p = 0.5 * (1.0 - np.cos(fringe_phase(params, cfg, B)))
    return float(p) if np.ndim(p) == 0 else p


def effective_atoms(params: PhysicsParams, T_R):
    """SNR-equivalent atom number A·exp(−2(T_R/T_χ)²)."""
    T_R = np.asarray(T_R, dtype=float)
    if np.any(T_R < 0):
        raise InvalidConfigurationError("T_R must be non-negative")
    n = params.A * np.exp(-2.0 * (T_R / params.T_chi) ** 2)
    return float(n) if np.ndim(n) == 0 else n


def readout_atoms(params: PhysicsParams, T_R: float) -> int:
    """Integer binomial trial count used by the shot-noise channel."""
    return int(round(params.D**2 * effective_atoms(params, T_R)))


def sample_measurement(params: PhysicsParams, cfg: RamseyConfig, profile: FieldProfile,
                       wall_time: float, rng: np.random.Generator,
                       cycle_index: int = 0) -> MeasurementOutcome:
    """Run one simulated cycle and return the normalized excited fraction.

    Shot noise is binomial over ``round(D² N_eff)`` atoms; the estimator's
    Gaussian likelihood is only an approximation to this channel.
    """
    if wall_time < 0:
        raise InvalidConfigurationError("wall_time must be non-negative")
    n = readout_atoms(params, cfg.T_R)
    if n < 1:
        raise InvalidConfigurationError(
            f"no effective atoms left at T_R = {cfg.T_R:g} s (N_eff = {effective_atoms(params, cfg.T_R):.3g})")
    B = profile.value_at(wall_time)
    p_true = min(max(ideal_probability(params, cfg, B), 0.0), 1.0)
    k = rng.binomial(n, p_true)
    return MeasurementOutcome(p_e=k / n, n_eff=float(n), cycle_index=cycle_index,
                              wall_time=wall_time, b_true=B)


def normalize_raw(raw, s_min: float, s_max: float):
    """Map a raw fringe reading to [0, 1] using pre-measured extremes."""
    if not s_max > s_min:
        raise InvalidCalibrationError(f"s_max ({s_max}) must exceed s_min ({s_min})")
    p = np.clip((np.asarray(raw, dtype=float) - s_min) / (s_max - s_min), 0.0, 1.0)
    return float(p) if np.ndim(p) == 0 else p

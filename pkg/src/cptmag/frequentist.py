"""Two-point slope lock to the central fringe and its closed-form noise limits."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidConfigurationError
from .physics import (FieldProfile, PhysicsParams, RamseyConfig, effective_atoms,
                      sample_measurement)

# |e| at or above this counts as a saturated error signal.
SATURATION_LEVEL = 0.95
# Consecutive saturated steps after which the lock is declared lost.
LOCK_LOSS_STEPS = 10


@dataclass(frozen=True)
class LockState:
    """Servo state. ``f_p_est`` estimates the Larmor offset f_B in Hz."""

    f_p_est: float = 0.0
    loop_gain: float = 1.0
    cycle_count: int = 0
    saturated_steps: int = 0
    lock_lost: bool = False

    def __post_init__(self):
        if not 0 < self.loop_gain <= 2:
            raise InvalidConfigurationError(f"loop_gain must lie in (0, 2], got {self.loop_gain}")
        if self.cycle_count < 0:
            raise InvalidConfigurationError("cycle_count must be non-negative")

    def field(self, params: PhysicsParams) -> float:
        return self.f_p_est / params.zeeman_coefficient

    @classmethod
    def at_field(cls, B: float, params: PhysicsParams, loop_gain: float = 1.0) -> "LockState":
        return cls(f_p_est=params.larmor_frequency(B), loop_gain=loop_gain)


@dataclass(frozen=True)
class LockSample:
    """Both half-fringe readings of one f_p determination."""

    p_minus: float
    p_plus: float
    n_eff: float
    b_true: float

    @property
    def error(self) -> float:
        return self.p_plus - self.p_minus


def lock_step(state: LockState, T_R: float, profile: FieldProfile, wall_time: float,
              params: PhysicsParams, rng: np.random.Generator) -> tuple[LockState, float, LockSample]:
    """One f_p determination: two cycles at f_p ∓ 1/(4T_R), then a servo update.

    With δ = f_p − f_B the two readings are ½(1 ∓ sin 2πδT_R), so the error
    signal e = p₊ − p₋ ≈ 2πδT_R and the correction f_p ← f_p − g·e/(2πT_R)
    removes the offset in one step at g = 1. The second cycle starts one
    cycle period after ``wall_time``.
    """
    if not T_R > 0:
        raise InvalidConfigurationError("T_R must be positive")
    quarter = 1.0 / (4.0 * T_R)
    minus = sample_measurement(params, RamseyConfig(T_R, 0.0, state.f_p_est - quarter), profile,
                               wall_time, rng, state.cycle_count)
    plus = sample_measurement(params, RamseyConfig(T_R, 0.0, state.f_p_est + quarter), profile,
                              wall_time + params.T_c, rng, state.cycle_count + 1)
    sample = LockSample(minus.p_e, plus.p_e, plus.n_eff, plus.b_true)
    e = sample.error
    saturated = state.saturated_steps + 1 if abs(e) >= SATURATION_LEVEL else 0
    new = replace(
        state,
        f_p_est=state.f_p_est - state.loop_gain * e / (2.0 * math.pi * T_R),
        cycle_count=state.cycle_count + 2,
        saturated_steps=saturated,
        lock_lost=state.lock_lost or saturated >= LOCK_LOSS_STEPS,
    )
    return new, new.field(params), sample


def single_measurement_uncertainty(T_R: float, params: PhysicsParams) -> float:
    """Shot-noise spread (nT) of one f_p determination under the binomial channel.

    Each reading has variance 1/(4 D² N_eff) at the fringe side, so
    var(e) = 1/(2 D² N_eff) and the slope de/dδ is 2πT_R.
    """
    n = params.D**2 * effective_atoms(params, T_R)
    return 1.0 / (2.0 * math.pi * abs(params.zeeman_coefficient) * T_R * math.sqrt(2.0 * n))


def fmm_sensitivity_avg(T_R: float, params: PhysicsParams) -> float:
    """Averaging-time sensitivity √T_c/(π|Δm_F γ| T_R √N_eff), nT/√Hz."""
    if not T_R > 0:
        raise InvalidConfigurationError("T_R must be positive")
    n = effective_atoms(params, T_R)
    return math.sqrt(params.T_c) / (math.pi * abs(params.zeeman_coefficient) * T_R * math.sqrt(n))


def fmm_sensitivity_T(T_R: float, params: PhysicsParams) -> float:
    """Dead-time-free sensitivity 1/(π|Δm_F γ| √T_R √N_eff), nT/√Hz."""
    if not T_R > 0:
        raise InvalidConfigurationError("T_R must be positive")
    n = effective_atoms(params, T_R)
    return 1.0 / (math.pi * abs(params.zeeman_coefficient) * math.sqrt(T_R * n))


def fmm_uncertainty(T_R: float, T: float, params: PhysicsParams) -> float:
    """Uncertainty 1/(π|Δm_F γ| √N_eff √(T_R T)) after total interrogation time T."""
    if not T_R > 0:
        raise InvalidConfigurationError("T_R must be positive")
    if T < 2.0 * T_R * (1.0 - 1e-12):
        raise InvalidConfigurationError(f"T = {T} is shorter than one f_p determination (2 T_R)")
    n = effective_atoms(params, T_R)
    return 1.0 / (math.pi * abs(params.zeeman_coefficient) * math.sqrt(n * T_R * T))


def alias_order(b_est: float, b_true: float, T_R: float, params: PhysicsParams) -> int:
    """Number of whole fringe periods separating an estimate from the truth."""
    return int(round((b_est - b_true) / params.period_in_field(T_R)))

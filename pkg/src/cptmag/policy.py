"""Adaptive control: interrogation-time ramp and information-optimal phase."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidConfigurationError
from .estimator import Posterior
from .physics import TWO_PI, PhysicsParams

# p_e nodes far enough from the model probability that the likelihood
# exponent is below -_EXP_CUTOFF are skipped in the utility sums.
_EXP_CUTOFF = 50.0


@dataclass(frozen=True)
class Schedule:
    """Exponential ramp T_i = T_max / a^(j-i) followed by a T_max plateau.

    The ramp length j = log_a(T_max/T_min) + 1 is rounded to an integer and the
    first interrogation time is recomputed from it, so ``T_1`` can differ
    slightly from ``T_min``.
    """

    a: float = 1.4
    T_min: float = 0.245e-3
    T_max: float = 7.1e-3
    M_b: int = 247

    def __post_init__(self):
        if not self.a > 1:
            raise InvalidConfigurationError("growth factor a must exceed 1")
        if not 0 < self.T_min <= self.T_max:
            raise InvalidConfigurationError("need 0 < T_min <= T_max")
        if self.M_b < self.j:
            raise InvalidConfigurationError(f"M_b = {self.M_b} is shorter than the ramp (j = {self.j})")

    @property
    def j(self) -> int:
        return int(round(math.log(self.T_max / self.T_min) / math.log(self.a))) + 1

    @property
    def T_1(self) -> float:
        return self.T_max / self.a ** (self.j - 1)

    def times(self) -> np.ndarray:
        return np.array([interrogation_time(self, i) for i in range(1, self.M_b + 1)])


@dataclass(frozen=True)
class PhaseSearchConfig:
    """Phase grid and p_e quadrature for the utility search.

    ``min_count`` excludes operating points whose prior-expected number of
    atoms in the less populated state is below it: there the Gaussian
    likelihood with variance p_e(1 − p_e)/n no longer resembles the binomial
    readout and spuriously promises information.
    """

    n_phases: int = 64
    n_pe: int = 256
    min_count: float = 10.0

    def __post_init__(self):
        if self.n_phases < 8:
            raise InvalidConfigurationError("n_phases must be at least 8")
        if self.n_pe < 11:
            raise InvalidConfigurationError("n_pe must be at least 11")
        if self.min_count < 0:
            raise InvalidConfigurationError("min_count must be non-negative")

    def phases(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_phases) / self.n_phases

    def pe_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and weights over p_e in [0, 1].

        Midpoint rule in u = arcsin(sqrt(p_e)), where the binomial readout
        spread is close to 1/(2 sqrt(N)) regardless of the operating point.
        """
        h = 0.5 * math.pi / self.n_pe
        u = (np.arange(self.n_pe) + 0.5) * h
        return np.sin(u) ** 2, h * np.sin(2.0 * u)


def interrogation_time(sched: Schedule, i: int) -> float:
    if not 1 <= i <= sched.M_b:
        raise InvalidConfigurationError(f"iteration {i} outside 1..{sched.M_b}")
    if i < sched.j:
        return sched.T_max / sched.a ** (sched.j - i)
    return sched.T_max


@numba.njit(cache=True)
def _utility_kernel(cos_t, sin_t, wp, phases, u_step, pe, pe_w, inv2var, lognorm):
    n_pe = pe.size
    out = np.empty(phases.size)
    m = np.empty(n_pe)
    a_term = np.empty(n_pe)
    for j in range(phases.size):
        cp, sp = math.cos(phases[j]), math.sin(phases[j])
        m[:] = 0.0
        a_term[:] = 0.0
        for b in range(cos_t.size):
            p = 0.5 * (1.0 - (cos_t[b] * cp - sin_t[b] * sp))
            u = math.asin(math.sqrt(min(max(p, 0.0), 1.0)))
            k0 = min(int(u / u_step), n_pe - 1)
            wpb = wp[b]
            # The exponent falls monotonically away from the model probability,
            # so each direction stops at its first negligible node.
            for direction in (-1, 1):
                k = k0 if direction < 0 else k0 + 1
                while 0 <= k < n_pe:
                    d = pe[k] - p
                    e = -d * d * inv2var[k]
                    if e < -_EXP_CUTOFF:
                        break
                    log_l = e + lognorm[k]
                    lik = math.exp(log_l)
                    m[k] += wpb * lik
                    a_term[k] += wpb * lik * log_l
                    k += direction
        # m_k KL(q_k || prior) = sum_B w p L ln(L / m_k).
        total = 0.0
        for k in range(n_pe):
            if m[k] > 0.0:
                total += pe_w[k] * (a_term[k] - m[k] * math.log(m[k]))
        out[j] = total
    return out


def utility_curve(phases, prior: Posterior, T_i: float, n_i: float, cfg: PhaseSearchConfig,
                  params: PhysicsParams, delta_f: float = 0.0) -> np.ndarray:
    """Expected Shannon-information gain (nats) for each auxiliary phase.

    For every phase this is Σ_k Δp m_k KL(q_k ‖ prior), q_k being the posterior
    after a hypothetical outcome p_k and m_k its prior-predictive density. When
    the readout model is normalized over p_e this equals the expected entropy
    drop ∫q ln q − ∫p ln p; unlike that form it stays non-negative at the
    fringe rails, where the Gaussian readout model loses normalization. The
    p_e integral uses the midpoint rule in arcsin(sqrt(p_e)), the B integral
    the prior's own trapezoid weights, and q_k is normalized as in
    :func:`bayes_update`.
    """
    if not (T_i > 0 and n_i > 0):
        raise InvalidConfigurationError("T_i and n_i must be positive")
    phases = np.mod(np.atleast_1d(np.asarray(phases, dtype=float)), TWO_PI)
    pe, pe_w = cfg.pe_nodes()
    eps = 1.0 / (2.0 * n_i)
    pc = np.clip(pe, eps, 1.0 - eps)
    var = pc * (1.0 - pc) / n_i
    inv2var = 0.5 / var
    lognorm = -0.5 * np.log(2.0 * math.pi * var)

    wp = prior.weights * prior.density
    theta = TWO_PI * (delta_f - params.larmor_frequency(prior.grid)) * T_i
    return _utility_kernel(np.cos(theta), np.sin(theta), wp, phases, 0.5 * math.pi / cfg.n_pe,
                           pe, pe_w, inv2var, lognorm)


def utility(phi_c: float, prior: Posterior, T_i: float, n_i: float, cfg: PhaseSearchConfig,
            params: PhysicsParams, delta_f: float = 0.0) -> float:
    return float(utility_curve([phi_c], prior, T_i, n_i, cfg, params, delta_f)[0])


def minority_counts(phases, prior: Posterior, T_i: float, n_i: float, params: PhysicsParams,
                    delta_f: float = 0.0) -> np.ndarray:
    """Prior-expected atom count in the less populated state, n·E[min(p, 1 − p)], per phase."""
    theta = TWO_PI * (delta_f - params.larmor_frequency(prior.grid)) * T_i
    wp = prior.weights * prior.density
    c = np.abs(np.cos(theta[None, :] + np.asarray(phases, dtype=float)[:, None]))
    return 0.5 * n_i * (1.0 - c @ wp)


def optimal_phase(prior: Posterior, T_i: float, n_i: float, cfg: PhaseSearchConfig,
                  params: PhysicsParams, delta_f: float = 0.0) -> float:
    """Grid phase maximizing the utility; ties go to the smallest phase.

    Phases failing the ``cfg.min_count`` readout-validity test are skipped
    unless every phase fails it.
    """
    phases = cfg.phases()
    u = utility_curve(phases, prior, T_i, n_i, cfg, params, delta_f)
    valid = minority_counts(phases, prior, T_i, n_i, params, delta_f) >= cfg.min_count
    if valid.any():
        u = np.where(valid, u, -np.inf)
    return float(phases[int(np.argmax(u))])

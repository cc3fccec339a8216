"""Grid-discretized Bayesian posterior over the field B."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePosteriorError, InvalidConfigurationError, RecenteringError
from .physics import (MeasurementOutcome, PhysicsParams, RamseyConfig, effective_atoms,
                      ideal_probability)

DEFAULT_POINTS = 2048
MIN_POINTS = 64
# Grid nodes per standard deviation of the narrowest feature a re-centred grid
# must resolve; trapezoid moments of a Gaussian sampled this finely are exact
# to far below the normalization tolerance.
NODES_PER_SIGMA = 2.0
# Half-width, in standard deviations, of the grid window laid over a Gaussian
# prior; the density beyond it is below exp(-50) of the peak.
GAUSSIAN_WINDOW = 10.0
NORM_TOL = 1e-9
# Smallest Gaussian reset width, as a fraction of the single-shot width at the
# upcoming interrogation time. It only binds after the data contradicted the
# prior (e.g. a field step inside one estimate), where the posterior would
# otherwise shrink below floating-point resolution.
MIN_WIDTH_FRACTION = 1e-6
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    h = grid[1] - grid[0]
    w = np.full(grid.shape, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Posterior:
    """Probability density sampled on a uniform grid.

    ``b_lo``/``b_hi`` are the admissible field interval. The grid spans either
    the whole interval or, for a narrow Gaussian, a window of it; the density
    is zero on the rest of the interval.
    """

    b_lo: float
    b_hi: float
    grid: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        grid, dens = _frozen(self.grid), _frozen(self.density)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "density", dens)
        if not self.b_lo < self.b_hi:
            raise InvalidConfigurationError(f"empty interval [{self.b_lo}, {self.b_hi}]")
        if grid.ndim != 1 or grid.shape != dens.shape or grid.size < 2:
            raise InvalidConfigurationError("grid and density must be matching 1-D arrays")
        span = self.b_hi - self.b_lo
        if grid[0] < self.b_lo - 1e-9 * span or grid[-1] > self.b_hi + 1e-9 * span:
            raise InvalidConfigurationError("grid extends outside the interval")
        steps = np.diff(grid)
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0) or steps[0] <= 0:
            raise InvalidConfigurationError("grid must be uniformly increasing")
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise InvalidConfigurationError("density must be finite and non-negative")
        total = float(np.dot(trapezoid_weights(grid), dens))
        if abs(total - 1.0) > NORM_TOL:
            raise InvalidConfigurationError(f"density integrates to {total!r}, not 1")

    @property
    def n_points(self) -> int:
        return self.grid.size

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.grid)

    @classmethod
    def from_unnormalized(cls, b_lo, b_hi, grid, values) -> "Posterior":
        values = np.asarray(values, dtype=float)
        z = float(np.dot(trapezoid_weights(np.asarray(grid, dtype=float)), values))
        if not (z > 0 and math.isfinite(z)):
            raise DegeneratePosteriorError(f"cannot normalize density with integral {z!r}")
        return cls(b_lo, b_hi, grid, values / z)


@dataclass(frozen=True)
class Estimate:
    b_est: float
    delta_b: float

    def __post_init__(self):
        if not self.delta_b > 0:
            raise InvalidConfigurationError(f"delta_b must be positive, got {self.delta_b}")


def uniform_prior(center: float, T_1: float, params: PhysicsParams,
                  n_points: int = DEFAULT_POINTS) -> Posterior:
    """Flat prior over one fringe period of the first interrogation time."""
    if n_points < 16:
        raise InvalidConfigurationError("n_points must be at least 16")
    if not T_1 > 0:
        raise InvalidConfigurationError("T_1 must be positive")
    half = 0.5 * params.period_in_field(T_1)
    lo, hi = center - half, center + half
    grid = np.linspace(lo, hi, n_points)
    return Posterior(lo, hi, grid, np.full(n_points, 1.0 / (hi - lo)))


def gaussian_prior(est: Estimate, b_lo: float, b_hi: float,
                   n_points: int = DEFAULT_POINTS, window: float = GAUSSIAN_WINDOW) -> Posterior:
    """Gaussian N(b_est, delta_b²) truncated to [b_lo, b_hi] and renormalized."""
    if n_points < 16:
        raise InvalidConfigurationError("n_points must be at least 16")
    if not b_lo < est.b_est < b_hi:
        raise RecenteringError(f"estimate {est.b_est} outside [{b_lo}, {b_hi}]")
    lo = max(b_lo, est.b_est - window * est.delta_b)
    hi = min(b_hi, est.b_est + window * est.delta_b)
    grid = np.linspace(lo, hi, n_points)
    values = np.exp(-0.5 * ((grid - est.b_est) / est.delta_b) ** 2)
    return Posterior.from_unnormalized(b_lo, b_hi, grid, values)


def _clamped_sigma(p_e, n_eff):
    eps = 1.0 / (2.0 * n_eff)
    p = np.clip(p_e, eps, 1.0 - eps)
    return np.sqrt(p * (1.0 - p) / n_eff)


def log_likelihood(p_e: float, B, cfg: RamseyConfig, n_eff: float, params: PhysicsParams):
    """Log of the Gaussian approximation to the binomial readout.

    The variance p_e(1 − p_e)/n_eff is evaluated at the observed fraction,
    clamped into [ε, 1 − ε] with ε = 1/(2 n_eff) so it never vanishes.
    """
    if not 0.0 <= p_e <= 1.0:
        raise InvalidConfigurationError(f"p_e outside [0, 1]: {p_e}")
    if not n_eff > 0:
        raise InvalidConfigurationError("n_eff must be positive")
    sigma = _clamped_sigma(p_e, n_eff)
    resid = p_e - ideal_probability(params, cfg, B)
    return -0.5 * (resid / sigma) ** 2 - math.log(sigma) - _LOG_SQRT_2PI


def likelihood(p_e: float, B, cfg: RamseyConfig, n_eff: float, params: PhysicsParams):
    return np.exp(log_likelihood(p_e, B, cfg, n_eff, params))


def bayes_update(prior: Posterior, outcome: MeasurementOutcome, cfg: RamseyConfig,
                 params: PhysicsParams) -> Posterior:
    """Multiply by the likelihood of ``outcome`` and renormalize on the same grid.

    Products are formed in the log domain, so an update only degenerates when
    the prior has no support where the likelihood is finite.
    """
    with np.errstate(divide="ignore"):
        log_post = np.log(prior.density)
    log_post = log_post + log_likelihood(outcome.p_e, prior.grid, cfg, outcome.n_eff, params)
    peak = np.max(log_post)
    if not np.isfinite(peak):
        raise DegeneratePosteriorError("prior and likelihood have disjoint support")
    return Posterior.from_unnormalized(prior.b_lo, prior.b_hi, prior.grid, np.exp(log_post - peak))


def moments(post: Posterior) -> Estimate:
    w = post.weights * post.density
    mean = float(np.dot(w, post.grid))
    var = float(np.dot(w, (post.grid - mean) ** 2))
    if not var > 0:
        # A single occupied grid node; report its half-spacing as the spread.
        var = (0.5 * (post.grid[1] - post.grid[0])) ** 2
    return Estimate(mean, math.sqrt(var))


def likelihood_width(params: PhysicsParams, T_i: float) -> float:
    """Single-shot field resolution on the fringe at T_i, in nT.

    The binomial readout carries the same Fisher information at every fringe
    position, so this is 1/(2π|Δm_F γ| T_i sqrt(D² N_eff)).
    """
    n = params.D**2 * effective_atoms(params, T_i)
    return 1.0 / (2.0 * math.pi * abs(params.zeeman_coefficient) * T_i * math.sqrt(n))


def resolved_points(width: float, feature: float, max_points: int = DEFAULT_POINTS) -> int:
    """Grid size giving NODES_PER_SIGMA nodes across ``feature`` over ``width``."""
    needed = math.ceil(width * NODES_PER_SIGMA / feature) + 1
    return int(min(max_points, max(MIN_POINTS, needed)))


def recentre(post: Posterior, est: Estimate, T_i: float, params: PhysicsParams,
             n_points: int | None = None, max_points: int = DEFAULT_POINTS) -> Posterior:
    """Gaussian reset on one fringe period of ``T_i`` centred at ``est.b_est``.

    The previous density is not interpolated; the fitted Gaussian replaces it.
    Without an explicit ``n_points`` the grid is sized to resolve both that
    Gaussian and the likelihood fringe at ``T_i``, capped at ``max_points``.
    """
    if not T_i > 0:
        raise InvalidConfigurationError("T_i must be positive")
    half = 0.5 * params.period_in_field(T_i)
    floor = MIN_WIDTH_FRACTION * likelihood_width(params, T_i)
    if est.delta_b < floor:
        est = Estimate(est.b_est, floor)
    if n_points is None:
        width = min(2.0 * half, 2.0 * GAUSSIAN_WINDOW * est.delta_b)
        feature = min(est.delta_b, likelihood_width(params, T_i))
        n_points = resolved_points(width, feature, max_points)
    return gaussian_prior(est, est.b_est - half, est.b_est + half, n_points)

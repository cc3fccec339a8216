import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from cptmag.errors import DegeneratePosteriorError, InvalidConfigurationError, RecenteringError
from cptmag.estimator import (DEFAULT_POINTS, Estimate, Posterior, bayes_update, gaussian_prior,
                              likelihood, likelihood_width, moments, recentre, resolved_points,
                              uniform_prior)
from cptmag.physics import MeasurementOutcome, PhysicsParams, RamseyConfig, ideal_probability

P = PhysicsParams()
T1 = 0.245e-3


def integral(post):
    return float(np.dot(post.weights, post.density))


def test_uniform_prior_width_sets_dynamic_range():
    post = uniform_prior(0.0, T1, P)
    assert post.b_hi - post.b_lo == pytest.approx(1 / (14 * T1), rel=1e-12)
    assert post.b_hi == pytest.approx(145.77, abs=0.01)
    assert post.n_points == DEFAULT_POINTS
    assert integral(post) == pytest.approx(1.0, abs=1e-12)


def test_uniform_prior_moments():
    post = uniform_prior(0.0, T1, P)
    est = moments(post)
    W = post.b_hi - post.b_lo
    assert est.b_est == pytest.approx(0.0, abs=1e-9)
    assert est.delta_b == pytest.approx(W / math.sqrt(12), rel=1e-6)


def test_moments_uniform_unit_interval():
    grid = np.linspace(-1.0, 1.0, 4001)
    est = moments(Posterior(-1.0, 1.0, grid, np.full(grid.size, 0.5)))
    assert est.b_est == pytest.approx(0.0, abs=1e-6)
    assert est.delta_b == pytest.approx(1 / math.sqrt(3), abs=1e-6)


def test_moments_symmetric_two_peaks():
    grid = np.linspace(-10, 10, 2001)
    vals = np.exp(-0.5 * ((grid - 4) / 0.7) ** 2) + np.exp(-0.5 * ((grid + 4) / 0.7) ** 2)
    est = moments(Posterior.from_unnormalized(-10, 10, grid, vals))
    assert est.b_est == pytest.approx(0.0, abs=1e-9)


def test_moments_of_gaussian_grid():
    est = moments(gaussian_prior(Estimate(3.0, 0.5), -20.0, 20.0))
    assert est.b_est == pytest.approx(3.0, rel=1e-3)
    assert est.delta_b == pytest.approx(0.5, rel=1e-3)


def test_gaussian_prior_broad_limit_is_uniform():
    post = gaussian_prior(Estimate(0.0, 1e5), -1.0, 1.0)
    assert np.max(np.abs(post.density - 0.5)) < 1e-3


def test_gaussian_prior_outside_interval():
    with pytest.raises(RecenteringError):
        gaussian_prior(Estimate(5.0, 1.0), -1.0, 1.0)


def test_likelihood_peak_density():
    n = 3924
    cfg = RamseyConfig(2e-3, 0.7)
    B = 3.3
    p = float(ideal_probability(P, cfg, B))
    sigma = math.sqrt(p * (1 - p) / n)
    assert likelihood(p, B, cfg, n, P) == pytest.approx(1 / (math.sqrt(2 * math.pi) * sigma), rel=1e-12)
    grid = np.linspace(B - 0.5, B + 0.5, 1001)
    assert likelihood(p, B, cfg, n, P) >= likelihood(p, grid, cfg, n, P).max() * (1 - 1e-12)


def test_likelihood_sigma_at_half():
    n = 3924
    cfg = RamseyConfig(1e-3, math.pi / 2)
    B = 0.0  # p = ½ exactly at this phase
    sigma = 1 / (math.sqrt(2 * math.pi) * likelihood(0.5, B, cfg, n, P))
    assert sigma == pytest.approx(7.98e-3, rel=1e-3)


def test_likelihood_rail_is_finite():
    val = likelihood(0.0, np.linspace(-5, 5, 11), RamseyConfig(1e-3), 100, P)
    assert np.all(np.isfinite(val)) and np.all(val > 0)


@pytest.mark.parametrize("p_e,n", [(-0.1, 10), (1.1, 10), (0.5, 0)])
def test_likelihood_rejects_bad_inputs(p_e, n):
    with pytest.raises(InvalidConfigurationError):
        likelihood(p_e, 0.0, RamseyConfig(1e-3), n, P)


def test_update_with_flat_likelihood_returns_prior():
    prior = gaussian_prior(Estimate(2.0, 3.0), -50, 50)
    post = bayes_update(prior, MeasurementOutcome(0.4, 3924), RamseyConfig(1e-18, 0.3), P)
    assert np.max(np.abs(post.density - prior.density)) < 1e-12


def test_single_update_on_uniform_is_proportional_to_likelihood():
    prior = uniform_prior(10.0, T1, P)
    cfg = RamseyConfig(T1, 1.1)
    out = MeasurementOutcome(0.37, 50)
    post = bayes_update(prior, out, cfg, P)
    ratio = post.density / likelihood(out.p_e, prior.grid, cfg, out.n_eff, P)
    assert np.ptp(ratio) / ratio.mean() < 1e-10


def test_degenerate_update_raises():
    grid = np.linspace(0, 1, 64)
    dens = np.zeros(64)
    dens[0] = 2.0 / (grid[1] - grid[0])
    prior = Posterior(0.0, 1.0, grid, dens)
    # Move all the mass to −inf log-density.
    zero = Posterior.__new__(Posterior)
    object.__setattr__(zero, "b_lo", 0.0)
    object.__setattr__(zero, "b_hi", 1.0)
    object.__setattr__(zero, "grid", grid)
    object.__setattr__(zero, "density", np.zeros(64))
    with pytest.raises(DegeneratePosteriorError):
        bayes_update(zero, MeasurementOutcome(0.5, 100), RamseyConfig(1e-3), P)
    assert integral(bayes_update(prior, MeasurementOutcome(0.5, 100), RamseyConfig(1e-3), P)) == pytest.approx(1)


@pytest.mark.parametrize("kw", [
    dict(b_lo=1.0, b_hi=0.0, grid=[0.0, 1.0], density=[1.0, 1.0]),
    dict(b_lo=0.0, b_hi=1.0, grid=[0.0, 0.2, 1.0], density=[1.0, 1.0, 1.0]),
    dict(b_lo=0.0, b_hi=1.0, grid=[0.0, 1.0], density=[2.0, 2.0]),
    dict(b_lo=0.0, b_hi=1.0, grid=[0.0, 1.0], density=[-1.0, 3.0]),
    dict(b_lo=0.0, b_hi=1.0, grid=[-1.0, 1.0], density=[0.5, 0.5]),
])
def test_posterior_invariants(kw):
    with pytest.raises(InvalidConfigurationError):
        Posterior(**kw)


def test_posterior_is_immutable():
    post = uniform_prior(0.0, T1, P, 64)
    with pytest.raises(ValueError):
        post.density[0] = 1.0


def test_recentre_width_at_long_time():
    post = recentre(None, Estimate(30.0, 0.5), 7.1e-3, P)
    assert post.b_hi - post.b_lo == pytest.approx(10.06, abs=0.01)
    assert post.b_lo == pytest.approx(30 - 5.03, abs=0.005)


def test_recentre_doubling_time_halves_interval():
    est = Estimate(1.0, 0.3)
    a = recentre(None, est, 1e-3, P)
    b = recentre(None, est, 2e-3, P)
    assert (b.b_hi - b.b_lo) == pytest.approx(0.5 * (a.b_hi - a.b_lo), rel=1e-12)


def test_recentre_same_inputs_same_support():
    est = Estimate(-4.0, 0.2)
    a = recentre(None, est, 3e-3, P)
    b = recentre(a, est, 3e-3, P)
    assert (a.b_lo, a.b_hi) == (b.b_lo, b.b_hi)
    np.testing.assert_array_equal(a.grid, b.grid)


def test_recentre_resolves_narrow_features():
    est = Estimate(30.0, 0.004)
    post = recentre(None, est, 7.1e-3, P)
    assert post.grid[1] - post.grid[0] <= est.delta_b / 2 + 1e-15
    assert moments(post).delta_b == pytest.approx(0.004, rel=1e-3)


@pytest.mark.parametrize("width,feature,expected", [(10.0, 1.0, 64), (10.0, 0.01, 2001), (10.0, 1e-4, 2048)])
def test_resolved_points(width, feature, expected):
    assert resolved_points(width, feature) == expected


def test_likelihood_width_matches_single_shot_resolution():
    n = 3924.23
    assert likelihood_width(P, 7.1e-3) == pytest.approx(1 / (2 * math.pi * 14 * 7.1e-3 * math.sqrt(n)), rel=1e-5)


# Oracle comparisons. Priors are chosen so the trapezoid rule is spectrally
# accurate on both grids: either a Gaussian that vanishes at the grid ends or a
# uniform prior over whole fringe periods of every update.

def random_update_case(rng):
    n = float(rng.integers(500, 10_000))
    phi = rng.uniform(0, 2 * math.pi)
    if rng.random() < 0.5:
        center = rng.uniform(-100, 100)
        prior = uniform_prior(center, T1, P)
        T = T1 * int(rng.integers(1, 4))
        b_true = rng.uniform(prior.b_lo, prior.b_hi)

        def prior_fn(b):
            return np.ones_like(b)
    else:
        mu, s = rng.uniform(-100, 100), rng.uniform(0.3, 3.0)
        prior = gaussian_prior(Estimate(mu, s), mu - 50, mu + 50)
        T = rng.uniform(0.3e-3, 2e-3)
        b_true = rng.normal(mu, s)

        def prior_fn(b):
            return np.exp(-0.5 * ((b - mu) / s) ** 2)
    p_e = float(np.clip(rng.binomial(int(n), ideal_probability(P, RamseyConfig(T, phi), b_true)) / n, 0, 1))
    return prior, prior_fn, (p_e, T, phi, n)


def test_single_update_matches_refined_product_oracle():
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(50):
        prior, prior_fn, upd = random_update_case(rng)
        p_e, T, phi, n = upd
        post = bayes_update(prior, MeasurementOutcome(p_e, n), RamseyConfig(T, phi), P)
        ref = oracles.product_posterior(prior_fn, [upd], prior.grid)
        worst = max(worst, np.max(np.abs(post.density - ref)))
    assert worst < 1e-8


def test_five_update_composition_matches_product_oracle():
    rng = np.random.default_rng(7)
    mu, s = 12.0, 1.5
    prior = gaussian_prior(Estimate(mu, s), mu - 40, mu + 40)
    b_true = 12.4
    updates = []
    for T in (0.3e-3, 0.5e-3, 0.8e-3, 1.1e-3, 1.5e-3):
        phi = rng.uniform(0, 2 * math.pi)
        n = 8000.0
        p = ideal_probability(P, RamseyConfig(T, phi), b_true)
        updates.append((rng.binomial(int(n), p) / n, T, phi, n))
    post = prior
    for p_e, T, phi, n in updates:
        post = bayes_update(post, MeasurementOutcome(p_e, n), RamseyConfig(T, phi), P)
    ref = oracles.product_posterior(lambda b: np.exp(-0.5 * ((b - mu) / s) ** 2), updates, prior.grid)
    assert np.max(np.abs(post.density - ref)) < 1e-8


def test_update_order_invariance():
    rng = np.random.default_rng(11)
    prior = uniform_prior(0.0, T1, P)
    ups = []
    for T in (T1, 2 * T1, 3 * T1, 4 * T1):
        cfg = RamseyConfig(T, rng.uniform(0, 2 * math.pi))
        ups.append((MeasurementOutcome(float(ideal_probability(P, cfg, 20.0)) * 0.98 + 0.01, 5000.0), cfg))
    finals = []
    for order in ([0, 1, 2, 3], [3, 1, 0, 2], [2, 3, 1, 0]):
        post = prior
        for k in order:
            post = bayes_update(post, *ups[k], P)
        finals.append(post.density)
    for d in finals[1:]:
        assert np.max(np.abs(d - finals[0])) < 1e-8


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(1e-4, 7e-3), st.floats(0, 2 * math.pi), st.floats(10, 1e4))
def test_every_update_is_normalized(p_e, T, phi, n):
    prior = gaussian_prior(Estimate(0.0, 2.0), -30, 30, 512)
    post = bayes_update(prior, MeasurementOutcome(p_e, n), RamseyConfig(T, phi), P)
    assert abs(integral(post) - 1.0) < 1e-9


def test_slope_updates_do_not_widen():
    # Prior inside a single fringe; operate at the prior mean's slope.
    rng = np.random.default_rng(5)
    T = 2e-3
    est = Estimate(8.0, 2.0)
    prior = recentre(None, est, T, P)
    s0 = moments(prior).delta_b
    phi = (math.pi / 2 - 2 * math.pi * 14 * est.b_est * T) % (2 * math.pi)
    cfg = RamseyConfig(T, phi)
    n = 7000
    ratios = []
    for _ in range(1000):
        b = rng.normal(est.b_est, est.delta_b)
        p_e = rng.binomial(n, ideal_probability(P, cfg, b)) / n
        ratios.append(moments(bayes_update(prior, MeasurementOutcome(p_e, n), cfg, P)).delta_b / s0)
    assert max(ratios) <= 1.05


def _replay(log_rows, center, n_points, max_points=DEFAULT_POINTS):
    post = uniform_prior(center, T1, P, DEFAULT_POINTS if n_points is None else n_points)
    est = None
    for k, row in enumerate(log_rows):
        _, T_i, phi, p_e, n_eff = row[:5]
        if k > 0:
            post = recentre(post, est, T_i, P, n_points=n_points, max_points=max_points)
        post = bayes_update(post, MeasurementOutcome(p_e, n_eff), RamseyConfig(T_i, phi), P)
        est = moments(post)
    return est


@pytest.fixture(scope="module")
def recorded_run():
    from cptmag.config import parse_config
    from cptmag.scenarios import RunLog, bayesian_estimate, run_rng
    from cptmag.physics import FieldProfile
    cfg = parse_config("", "bayesian")
    log = RunLog(0)
    bayesian_estimate(cfg, FieldProfile.static(30.0), run_rng(cfg, 0), 0.0, 0, log)
    return log


@pytest.mark.parametrize("stop", [11, 33, 247])
def test_doubling_grid_changes_moments_below_tenth_percent(recorded_run, stop):
    rows = recorded_run.rows[:stop]
    adaptive = _replay(rows, 0.0, None)
    assert adaptive.b_est == pytest.approx(rows[-1][5], abs=1e-12)
    for base in (2048,):
        a = _replay(rows, 0.0, base)
        b = _replay(rows, 0.0, 2 * base)
        assert abs(a.b_est - b.b_est) < 1e-3 * a.delta_b
        assert a.delta_b == pytest.approx(b.delta_b, rel=1e-3)
    assert abs(adaptive.b_est - b.b_est) < 1e-3 * b.delta_b
    assert adaptive.delta_b == pytest.approx(b.delta_b, rel=1e-3)


def test_recentre_floors_collapsed_width():
    T = 7.1e-3
    post = recentre(None, Estimate(10.1, 1e-14), T, P)
    assert moments(post).delta_b == pytest.approx(1e-6 * likelihood_width(P, T), rel=1e-3)

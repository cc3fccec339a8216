import math

import numpy as np
import pytest

import oracles
from cptmag import scenarios
from cptmag.config import parse_config
from cptmag.errors import DegeneratePosteriorError, InvalidConfigurationError
from cptmag.physics import FieldProfile
from cptmag.scenarios import (RUNLOG_COLUMNS, RunLog, bayesian_estimate, convergence_iteration,
                              run_rng, run_scenario)

SHORT = "[schedule]\nM_b = 30\n"


def test_single_iteration_equals_one_update_on_flat_prior():
    cfg = parse_config("[schedule]\nT_min = 0.0071\nM_b = 1\n[scenario]\nseed = 3\n[field]\nsegments = 0:2.2\n",
                       "bayesian")
    res = run_scenario(cfg)
    (row,) = res.runlogs[0].rows
    _, T, phi, p_e, n, b_est, delta_b = row[:7]
    half = 0.5 * cfg.physics.period_in_field(T)
    grid = np.linspace(-half, half, cfg.estimator.n_points)
    dens = oracles.product_posterior(np.ones_like, [(p_e, T, phi, n)], grid)
    w = np.full(grid.size, grid[1] - grid[0])
    w[0] = w[-1] = 0.5 * w[0]
    mean = float(np.sum(w * dens * grid))
    std = math.sqrt(float(np.sum(w * dens * (grid - mean) ** 2)))
    assert b_est == pytest.approx(mean, abs=1e-6 * std)
    assert delta_b == pytest.approx(std, rel=1e-6)


def test_true_field_outside_initial_interval():
    cfg = parse_config("[field]\nsegments = 0:200\n", "bayesian")
    with pytest.raises(InvalidConfigurationError, match="outside the initial interval"):
        run_scenario(cfg)


@pytest.mark.parametrize("name", ["bayesian", "frequentist", "coherence"])
def test_identical_config_identical_rows(name):
    cfg = parse_config(SHORT + "[scenario]\nruns = 2\nseed = 11\n", name)
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert [lg.rows for lg in a.runlogs] == [lg.rows for lg in b.runlogs]
    assert {k: t.rows for k, t in a.tables.items()} == {k: t.rows for k, t in b.tables.items()}


def test_seed_changes_outcomes():
    a = run_scenario(parse_config(SHORT + "[scenario]\nseed = 1\n"))
    b = run_scenario(parse_config(SHORT + "[scenario]\nseed = 2\n"))
    assert a.runlogs[0].rows != b.runlogs[0].rows


def test_bayesian_rows():
    cfg = parse_config(SHORT + "[scenario]\nruns = 3\n")
    res = run_scenario(cfg)
    for log in res.runlogs:
        assert len(log.rows) == 30
        assert [r[0] for r in log.rows] == list(range(1, 31))
        for r in log.rows:
            assert len(r) == len(RUNLOG_COLUMNS)
            assert 0.0 <= r[3] <= 1.0 and r[6] > 0
            assert r[9] == pytest.approx(r[6] * math.sqrt(r[7]) * 1e3)
            assert r[10] == pytest.approx(r[6] * math.sqrt(r[8]) * 1e3)
        assert log.rows[-1][8] == pytest.approx(30 * cfg.physics.T_c)
        assert log.meta["covered"]
    assert res.meta["coverage"] == 1.0


def test_field_spread_draws_inside_range():
    cfg = parse_config(SHORT + "[scenario]\nruns = 8\n[estimator]\nfield_spread = 0.45\n")
    res = run_scenario(cfg)
    limit = 0.45 * cfg.physics.dynamic_range(cfg.schedule.T_1)
    truths = res.tables["runs"].column("B_true_nT")
    assert np.all(np.abs(truths) <= limit)
    assert np.unique(truths).size == 8


def test_degenerate_update_keeps_prior_and_flags_cycle(monkeypatch):
    real = scenarios.bayes_update
    calls = {"n": 0}

    def flaky(prior, out, rc, P):
        calls["n"] += 1
        if calls["n"] == 5:
            raise DegeneratePosteriorError("forced")
        return real(prior, out, rc, P)

    monkeypatch.setattr(scenarios, "bayes_update", flaky)
    cfg = parse_config(SHORT)
    log = RunLog(0)
    bayesian_estimate(cfg, cfg.field, run_rng(cfg, 0), 0.0, 0, log)
    assert log.meta["degenerate_cycles"] == [5]
    assert len(log.rows) == 30


def test_static_track_matches_bayesian():
    text = SHORT + "[scenario]\nruns = 2\n[field]\nsegments = 0:30\n"
    track = run_scenario(parse_config(text, "track"))
    bayes = run_scenario(parse_config(text, "bayesian"))
    assert [lg.rows for lg in track.runlogs] == [lg.rows for lg in bayes.runlogs]


def test_track_follows_small_steps():
    M = 30
    span = M * 0.073
    text = f"[schedule]\nM_b = {M}\n[field]\nsegments = 0:30, {span!r}:33, {2 * span!r}:30\n"
    res = run_scenario(parse_config(text, "track"))
    steps = res.tables["steps"]
    assert len(steps.rows) == 3
    np.testing.assert_allclose(steps.column("B_true_nT"), [30, 33, 30])
    assert np.all(steps.column("converged_after") > 0)
    assert len(res.runlogs[0].rows) == 3 * M
    # Within the 5.03 nT range at T_max the comparator lock follows the steps.
    assert not res.meta["comparator_aliased"]


def test_convergence_iteration():
    truth = 0.0
    est = np.array([5.0, 3.0, 0.1, 0.05, 0.0])
    err = np.array([1.0, 0.5, 0.1, 0.05, 0.01])
    assert convergence_iteration(est, err, truth) == 2
    assert convergence_iteration(est[:2], err[:2], truth) is None
    assert convergence_iteration(np.zeros(3), np.ones(3), truth) == 0


def test_frequentist_scenario_tables():
    cfg = parse_config("[scenario]\nruns = 4\n[frequentist]\nmeasurements = 20\n", "frequentist")
    res = run_scenario(cfg)
    unc = res.tables["uncertainty"]
    assert unc.column("measurements")[-1] == 20
    assert unc.column("T_total_s")[-1] == pytest.approx(2 * 20 * 7.1e-3)
    assert res.meta["aliased_runs"] == 0 and res.meta["lock_lost_runs"] == 0
    assert all(len(lg.rows) == 40 for lg in res.runlogs)


def test_compare_dynamic_ranges():
    cfg = parse_config("[scenario]\nruns = 2\n[frequentist]\nmeasurements = 10\n", "compare")
    res = run_scenario(cfg)
    table = {r[0]: r for r in res.tables["table"].rows}
    assert table["frequentist_T1"][2] == pytest.approx(145.6, abs=0.5)
    assert table["frequentist_Tmax"][2] == pytest.approx(5.03, abs=0.05)
    assert table["bayesian"][2] == pytest.approx(145.6, abs=0.5)
    assert table["frequentist_T1"][3] == pytest.approx(241.9, abs=0.1)
    assert table["frequentist_Tmax"][3] == pytest.approx(13.81, abs=0.01)
    assert table["bayesian"][3] == pytest.approx(6.906, abs=0.001)
    assert len(res.tables["bayes_points"].rows) == 3
    assert len(res.tables["sweep"].rows) == cfg.compare.sweep_points


def test_coherence_scenario_recovers_coherence_time():
    cfg = parse_config("[scenario]\nruns = 3\n", "coherence")
    res = run_scenario(cfg)
    assert res.meta["median_T_chi_s"] == pytest.approx(10e-3, rel=0.05)
    assert len(res.tables["fringe"].rows) == cfg.coherence.n_samples


def test_coherence_noiseless_round_trip():
    cfg = parse_config("[coherence]\nshot_noise = false\n", "coherence")
    res = run_scenario(cfg)
    assert res.meta["median_T_chi_s"] == pytest.approx(10e-3, rel=5e-3)
    fr = res.tables["fringe"]
    np.testing.assert_array_equal(fr.column("signal"), fr.column("signal_noiseless"))


def test_run_rng_streams_are_independent():
    cfg = parse_config("")
    a = run_rng(cfg, 0).random(4)
    assert not np.array_equal(a, run_rng(cfg, 1).random(4))
    assert not np.array_equal(a, run_rng(cfg, 0, stream=1).random(4))
    np.testing.assert_array_equal(a, run_rng(cfg, 0).random(4))


def test_profile_lookup_in_estimate_uses_cycle_clock():
    cfg = parse_config(SHORT)
    prof = FieldProfile(((0.0, 10.0), (15 * cfg.physics.T_c, 12.0)))
    log = RunLog(0)
    bayesian_estimate(cfg, prof, run_rng(cfg, 0), 0.0, 0, log)
    assert log.b_true[14] == 10.0 and log.b_true[15] == 12.0


def test_field_step_inside_an_estimate_does_not_crash():
    # The posterior contradicts the new data; the run must still complete.
    cfg = parse_config(SHORT)
    prof = FieldProfile(((0.0, 10.0), (15 * cfg.physics.T_c, 12.0)))
    log = RunLog(0)
    est = bayesian_estimate(cfg, prof, run_rng(cfg, 0), 0.0, 0, log)
    assert len(log.rows) == 30
    assert est.delta_b > 0 and all(r[6] > 0 for r in log.rows)

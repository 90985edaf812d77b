import math

import numpy as np
import pytest

import ddpmlab as dl


def test_noise_values():
    assert dl.sigma_sq(1.0) == pytest.approx(1 - math.exp(-2), rel=1e-15)
    assert dl.eta(0.5) == pytest.approx(math.exp(-0.5) / (1 - math.exp(-1)), rel=1e-14)
    with pytest.raises(dl.DomainError):
        dl.eta(0.0)


def test_schedule_and_coefficients():
    s = dl.Schedule.two_phase(4.0, 0.02, 24)
    assert s.steps == 24
    assert len(s.times) == 26
    assert s.satisfies_theorem_hypotheses()
    c = dl.step_coeffs(s, 3)
    assert c.drift_scale == pytest.approx(1 / math.sqrt(c.alpha), rel=1e-14)
    assert s.to_json()["times"] == pytest.approx(s.times)
    with pytest.raises(dl.ConfigError):
        dl.Schedule.two_phase(4.0, 0.02, 0)


def test_score_is_tweedie():
    target = dl.Target.builtin("two-points", dim=3)
    x = np.array([0.3, -0.2, 0.1])
    t = 0.7
    s2 = dl.sigma_sq(t)
    mean = dl.posterior_mean(target, t, x)
    score = dl.exact_score(target, t, x)
    np.testing.assert_allclose(score, -(x - math.exp(-t) * mean) / s2, rtol=1e-12)
    cov = dl.posterior_covariance(target, t, x)
    assert np.trace(cov) == pytest.approx(dl.posterior_cov_trace(target, t, x), rel=1e-12)


def test_batch_independent_of_workers():
    s = dl.Schedule.two_phase(4.0, 0.02, 16)
    oracle = dl.ScoreOracle(dl.Target.builtin("circle", dim=4, count=64))
    a = dl.run_batch(oracle, s, 40, seed=5, workers=1)
    b = dl.run_batch(oracle, s, 40, seed=5, workers=4)
    assert a.shape == (40, 4)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(dl.run_chain(oracle, s, 5, chain=7), a[7])


def test_point_mass_variance_matches_recursion():
    s = dl.Schedule.two_phase(6.0, 0.01, 32)
    data = dl.run_batch(dl.ScoreOracle(dl.Target.point_mass(2)), s, 4000, seed=1)
    v = dl.propagate_covariance(s, 0, 2)["v_perp"]
    se = v * math.sqrt(2 / 3999)
    assert abs(data[:, 0].var(ddof=1) - v) < 5 * se


def test_exact_kl_quarters_when_steps_double():
    kls = [dl.exact_kl(dl.Schedule.two_phase(8.0, 0.01, n), 4, 16) for n in (256, 512)]
    assert kls[0] / kls[1] == pytest.approx(4.0, rel=0.1)
    assert dl.kl_g(1.0) == 0.0
    total, per = dl.discretization_integral(dl.Schedule.two_phase(8.0, 0.01, 64), 4)
    assert len(per) == 64 and total == pytest.approx(sum(per))


def test_diagnostics():
    target = dl.Target.axis_subspace_gaussian(8, 2)
    est = dl.mc_mean_trace(target, 0.5, 200, seed=3)
    # Linear posterior: trace is deterministic, 2 sigma^2.
    assert est.value == pytest.approx(2 * dl.sigma_sq(0.5), rel=1e-12)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert dl.greedy_cover(pts, 10.0) == 1
    assert dl.greedy_cover(pts, 0.1) == 3


def test_experiment_record(tmp_path):
    rec = dl.experiment("nsweep", params={"Ns": [64, 128]}, output_dir=tmp_path)
    assert rec["experiment"] == "nsweep"
    assert len(rec["results"]) == 2
    assert (tmp_path / "results.csv").exists()
    assert (tmp_path / "record.json").exists()
    with pytest.raises(dl.ConfigError):
        dl.run_experiment({"spec_version": 2, "experiment": "nsweep"})

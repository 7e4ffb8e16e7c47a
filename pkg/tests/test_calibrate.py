import numpy as np
import pytest

from kinetic_storage.calibrate import (KAPPA_FLOOR, ObservedSeries, SeasonalOUCalibrator, calibrate,
                                       confidence_band)
from kinetic_storage.errors import TooFewSamples, ValidationError
from kinetic_storage.models import (RegimeSchedule, SeasonalOuSpec, SeasonalProfile, exact_log_price_moments,
                                    simulate_paths)

TRUTH = SeasonalOuSpec(SeasonalProfile((0.5, 0.2, 0.0, 0.0, 0.0)), RegimeSchedule(1.2, 0.6),
                       RegimeSchedule(0.3, 0.15), "level", 0.5)
TRUE_VALUES = np.array([1.2, 0.6, 0.3, 0.15, 0.5, 0.2])


def synthetic(spec, days, seed, dt=0.1):
    grid = np.arange(int(round(days * 24 / dt)) + 1) * dt
    y = spec.to_observable(simulate_paths(spec, grid, 1, seed=seed)[:, 0])
    return grid, y


def recovered(spec):
    c = spec.mean_profile.coefficients
    return np.array([spec.kappa.day_value, spec.kappa.night_value, spec.sigma.day_value,
                     spec.sigma.night_value, c[0], c[1]])


@pytest.mark.xfail(reason="a 7-day window leaves the day-rate sampling error near the 15% tolerance",
                   strict=False)
def test_seven_day_recovery_seed_42():
    t, y = synthetic(TRUTH, 7, 42)
    est = recovered(calibrate(ObservedSeries(t, y, "load")).spec)
    assert np.all(np.abs(est / TRUE_VALUES - 1) < 0.15)


def test_sixty_day_recovery():
    t, y = synthetic(TRUTH, 60, 42)
    est = recovered(calibrate(ObservedSeries(t, y, "load")).spec)
    assert np.all(np.abs(est / TRUE_VALUES - 1) < 0.15)


def test_log_price_recovery():
    truth = SeasonalOuSpec(SeasonalProfile((-2.2, 0.2, 0.0, 0.0, 0.0)), RegimeSchedule(1.2, 0.6),
                           RegimeSchedule(0.3, 0.15), "log", 0.11)
    t, y = synthetic(truth, 60, 7)
    est = recovered(calibrate(ObservedSeries(t, y, "price")).spec)
    ref = np.array([1.2, 0.6, 0.3, 0.15, -2.2, 0.2])
    assert np.all(np.abs(est / ref - 1) < 0.15)


def test_constant_series():
    t = np.arange(200) * 0.1
    rep = calibrate(ObservedSeries(t, np.full(200, 3.25), "load"))
    assert rep.spec.mean_profile.coefficients[0] == 3.25
    assert rep.residual_std_day == 0.0 and rep.residual_std_night == 0.0


def test_white_noise_flags_unit_root():
    # kappa = 0: a random walk has no reversion to estimate
    rng = np.random.default_rng(0)
    t = np.arange(7 * 240) * 0.1
    y = np.cumsum(0.1 * rng.standard_normal(t.size))
    rep = calibrate(ObservedSeries(t, y, "load"))
    assert any(rep.near_unit_root)
    assert min(rep.spec.kappa.day_value, rep.spec.kappa.night_value) < 0.1


def test_sample_count_bookkeeping():
    t, y = synthetic(TRUTH, 3, 1)
    rep = calibrate(ObservedSeries(t, y, "load"))
    assert rep.n_day + rep.n_night == len(y) - 1
    assert rep.residual_std_day >= 0 and rep.residual_std_night >= 0


def test_residual_whiteness():
    t, y = synthetic(TRUTH, 60, 3)
    spec = calibrate(ObservedSeries(t, y, "load")).spec
    dt = t[1] - t[0]
    pred = y[:-1] + spec.kappa(t[:-1]) * (spec.mu(t[:-1]) - y[:-1]) * dt
    z = (y[1:] - pred) / (spec.sigma(t[:-1]) * np.sqrt(dt))
    z = z - z.mean()
    rho = np.sum(z[1:] * z[:-1]) / np.sum(z * z)
    assert z.size >= 10_000
    assert abs(rho) < 0.1


@pytest.mark.parametrize("n", [0, 10, 47])
def test_too_few_samples(n):
    with pytest.raises(TooFewSamples):
        ObservedSeries(np.arange(n) * 0.1, np.ones(n), "load")


def test_non_positive_price_names_row():
    v = np.full(60, 0.1)
    v[17] = -0.2
    with pytest.raises(ValidationError, match="row 17"):
        ObservedSeries(np.arange(60) * 0.1, v, "price")


def test_non_uniform_grid_rejected():
    t = np.arange(60) * 0.1
    t[30] += 0.01
    with pytest.raises(ValidationError):
        ObservedSeries(t, np.ones(60), "load")


def test_band_collapses_without_noise():
    spec = SeasonalOuSpec(SeasonalProfile((0.5, 0.2, 0.0)), RegimeSchedule.constant(1.0),
                          RegimeSchedule.constant(1e-300), "level", 0.5)
    lo, hi = confidence_band(spec, np.arange(50) * 0.1, 0.8, 200)
    assert np.array_equal(lo, hi)


def test_band_brackets_lognormal_quantiles():
    spec = SeasonalOuSpec(SeasonalProfile((-2.2, 0.0, -0.15, 0.05, 0.0)), RegimeSchedule.constant(0.8),
                          RegimeSchedule(0.15, 0.10), "log", 0.115)
    grid = np.arange(241) * 0.05
    lo, hi = confidence_band(spec, grid, 0.8, 20_000, seed=1)
    mean, var = exact_log_price_moments(spec, grid[-1])
    z = 1.2815515655446004
    assert lo[-1] == pytest.approx(np.exp(mean - z * np.sqrt(var)), rel=0.01)
    assert hi[-1] == pytest.approx(np.exp(mean + z * np.sqrt(var)), rel=0.01)


def test_band_saturates_to_extremes():
    grid = np.arange(20) * 0.1
    paths = simulate_paths(TRUTH, grid, 100, seed=5)
    lo, hi = confidence_band(TRUTH, grid, 0.999999, 100, seed=5)
    assert np.allclose(lo, paths.min(axis=1), atol=1e-4)
    assert np.allclose(hi, paths.max(axis=1), atol=1e-4)


def test_band_argument_checks():
    with pytest.raises(ValidationError):
        confidence_band(TRUTH, np.arange(5.0), 1.0, 100)
    with pytest.raises(ValidationError):
        confidence_band(TRUTH, np.arange(5.0), 0.8, 99)


def test_estimator_api():
    t, y = synthetic(TRUTH, 20, 2)
    est = SeasonalOUCalibrator(kind="load").fit(t, y)
    assert est.get_params()["degree"] == 2
    assert est.predict(np.array([0.0, 12.0])).shape == (2,)
    assert 0 <= est.score(t, y) <= 1
    assert est.sample(np.arange(10) * 0.1, n_paths=5).shape == (10, 5)


def test_kappa_floor_constant():
    assert KAPPA_FLOOR == 1e-6

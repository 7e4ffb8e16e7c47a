"""Regression calibration of seasonal OU models from an observed series.

The Euler discretisation ``dy_n = kappa_r (mu(t_n) - y_n) dt + eps_n`` is
linear in ``(kappa_r * c, kappa_r)`` where ``c`` are the trigonometric
coefficients, so both regimes are fitted jointly by ordinary least squares on
a block design.  Each regime yields its own coefficient vector ``beta_r /
kappa_r``; the profile is their sample-weighted average.

Because each regime only observes part of the day, the per-regime profiles are
poorly conditioned.  With ``refine=True`` (default) the linear estimate seeds a
variable-projection fit in which both regimes share one profile: for fixed
``(kappa_day, kappa_night)`` the coefficients solve a weighted linear least
squares problem, and the two rates are optimised on the projected residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ensemble import quantile_band
from .errors import DegenerateDesign, TooFewSamples, ValidationError
from .models import RegimeSchedule, SeasonalOuSpec, SeasonalProfile, simulate_paths

MIN_SAMPLES = 48
KAPPA_FLOOR = 1e-6
SIGMA_FLOOR = 1e-12


@dataclass
class ObservedSeries:
    timestamps: np.ndarray
    values: np.ndarray
    kind: Literal["price", "load"] = "load"

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).ravel()
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.kind not in ("price", "load"):
            raise ValidationError(f"unknown series kind {self.kind!r}")
        if self.timestamps.shape != self.values.shape:
            raise ValidationError("timestamps and values differ in length")
        if len(self.values) < MIN_SAMPLES:
            raise TooFewSamples(f"need at least {MIN_SAMPLES} samples, got {len(self.values)}")
        if not np.all(np.isfinite(self.values)) or not np.all(np.isfinite(self.timestamps)):
            raise ValidationError("series contains non-finite values")
        steps = np.diff(self.timestamps)
        if np.any(steps <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > 1e-9 * steps[0]:
            raise ValidationError("timestamps must be uniformly spaced")
        if self.kind == "price" and np.any(self.values <= 0):
            bad = int(np.flatnonzero(self.values <= 0)[0])
            raise ValidationError(f"non-positive price at row {bad}")

    @property
    def dt(self) -> float:
        return float(self.timestamps[1] - self.timestamps[0])


@dataclass
class CalibrationReport:
    spec: SeasonalOuSpec
    residual_std_day: float
    residual_std_night: float
    r_squared: float
    n_day: int
    n_night: int
    kappa_raw: tuple = (np.nan, np.nan)
    kappa_stderr: tuple = (np.nan, np.nan)
    near_unit_root: tuple = (False, False)
    profile_by_regime: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "residual_std_day": self.residual_std_day,
            "residual_std_night": self.residual_std_night,
            "r_squared": self.r_squared,
            "n_day": self.n_day,
            "n_night": self.n_night,
            "kappa_raw": {"day": self.kappa_raw[0], "night": self.kappa_raw[1]},
            "kappa_stderr": {"day": self.kappa_stderr[0], "night": self.kappa_stderr[1]},
            "near_unit_root": {"day": bool(self.near_unit_root[0]), "night": bool(self.near_unit_root[1])},
            "profile_by_regime": {k: list(v) for k, v in self.profile_by_regime.items()},
        }


def calibrate(series: ObservedSeries, degree: int = 2, day_window=(8, 19),
              period: float = 24.0, refine: bool = True) -> CalibrationReport:
    if degree < 0:
        raise ValidationError("degree must be >= 0")
    space = "log" if series.kind == "price" else "level"
    y = np.log(series.values) if space == "log" else series.values
    t = series.timestamps
    dt = series.dt
    start, end = day_window
    is_day = RegimeSchedule(1.0, 1.0, start, end).is_day(t[:-1])
    n_day, n_night = int(is_day.sum()), int((~is_day).sum())
    n_coef = 1 + 2 * degree

    if np.ptp(y) == 0.0:
        return _constant_report(series, y[0], degree, day_window, period, n_day, n_night)

    profile = SeasonalProfile((0.0,) * n_coef, period)
    basis = profile.basis(t[:-1])
    dy = np.diff(y)
    block = np.hstack([dt * basis, -dt * y[:-1, None]])
    width = n_coef + 1
    design = np.zeros((len(dy), 2 * width))
    design[is_day, :width] = block[is_day]
    design[~is_day, width:] = block[~is_day]
    if min(n_day, n_night) < width or np.linalg.matrix_rank(design) < design.shape[1]:
        raise DegenerateDesign("regression design is rank-deficient")

    coef, *_ = np.linalg.lstsq(design, dy, rcond=None)
    resid = dy - design @ coef
    sse = float(resid @ resid)
    sst = float(((dy - dy.mean()) ** 2).sum())
    r2 = float(np.clip(1.0 - sse / sst, 0.0, 1.0)) if sst > 0 else 1.0

    xtx_inv = np.linalg.inv(design.T @ design)
    kappas, stderr, flags, profiles, sigmas = [], [], [], {}, []
    for r, (name, mask) in enumerate((("day", is_day), ("night", ~is_day))):
        beta = coef[r * width:r * width + n_coef]
        k_raw = float(coef[r * width + n_coef])
        res_r = resid[mask]
        s2 = float(res_r @ res_r) / max(len(res_r) - width, 1)
        se = float(np.sqrt(s2 * xtx_inv[r * width + n_coef, r * width + n_coef]))
        k = max(k_raw, KAPPA_FLOOR)
        kappas.append(k)
        stderr.append(se)
        flags.append(k_raw <= KAPPA_FLOOR or k_raw - 2.0 * se <= 0.0)
        sigmas.append(float(np.std(res_r)) / np.sqrt(dt))
        level = beta / k
        if space == "log":
            # regression level is the convexity-adjusted one
            level = level.copy()
            level[0] += sigmas[-1] ** 2 / (2.0 * k)
        profiles[name] = level

    weights = np.array([n_day, n_night], dtype=float) / (n_day + n_night)
    coefs = weights[0] * profiles["day"] + weights[1] * profiles["night"]
    if refine:
        kappas, sigmas, coefs, resid = _shared_profile_fit(dy, y[:-1], basis, is_day, dt, kappas, sigmas,
                                                           convexity=space == "log")
        sse = float(resid @ resid)
        r2 = float(np.clip(1.0 - sse / sst, 0.0, 1.0)) if sst > 0 else 1.0
    spec = SeasonalOuSpec(
        mean_profile=SeasonalProfile(tuple(coefs), period),
        kappa=RegimeSchedule(kappas[0], kappas[1], start, end),
        sigma=RegimeSchedule(max(sigmas[0], SIGMA_FLOOR), max(sigmas[1], SIGMA_FLOOR), start, end),
        space=space,
        initial_value=float(series.values[0]),
    )
    return CalibrationReport(
        spec=spec, residual_std_day=sigmas[0] * np.sqrt(dt), residual_std_night=sigmas[1] * np.sqrt(dt),
        r_squared=r2, n_day=n_day, n_night=n_night,
        kappa_raw=tuple(float(c) for c in coef[[n_coef, width + n_coef]]),
        kappa_stderr=tuple(stderr), near_unit_root=tuple(flags),
        profile_by_regime={k: tuple(float(x) for x in v) for k, v in profiles.items()},
    )


def _shared_profile_fit(dy, y, basis, is_day, dt, kappas, sigmas, convexity=False, rounds=3):
    """Variable projection over (kappa_day, kappa_night) with one shared profile.

    Rows are weighted by the inverse regime volatility; volatilities are
    re-estimated from the residuals between rounds.  With ``convexity`` the
    log-space level is ``mu - sigma_r**2 / (2 kappa_r)``, the shift taken from
    the previous round's volatilities.
    """
    k0 = np.maximum(np.asarray(kappas, dtype=float), KAPPA_FLOOR)
    sig = np.maximum(np.asarray(sigmas, dtype=float), SIGMA_FLOOR)

    def project(k, w):
        kr = np.where(is_day, k[0], k[1])
        target = dy + kr * y * dt
        if convexity:
            target = target + dt * np.where(is_day, sig[0] ** 2 / 2, sig[1] ** 2 / 2)
        A = (kr * dt)[:, None] * basis
        c, *_ = np.linalg.lstsq(A * w[:, None], target * w, rcond=None)
        return target - A @ c, c

    for _ in range(rounds):
        w = np.where(is_day, 1.0 / sig[0], 1.0 / sig[1])
        sol = least_squares(lambda k: project(k, w)[0] * w, k0, bounds=(KAPPA_FLOOR, np.inf),
                            x_scale="jac")
        k0 = sol.x
        resid, coefs = project(k0, w)
        sig = np.maximum(np.array([resid[is_day].std(), resid[~is_day].std()]) / np.sqrt(dt), SIGMA_FLOOR)
    return [float(k0[0]), float(k0[1])], [float(sig[0]), float(sig[1])], coefs, resid


def _constant_report(series, level, degree, day_window, period, n_day, n_night):
    coefs = (float(level),) + (0.0,) * (2 * degree)
    start, end = day_window
    spec = SeasonalOuSpec(
        mean_profile=SeasonalProfile(coefs, period),
        kappa=RegimeSchedule(KAPPA_FLOOR, KAPPA_FLOOR, start, end),
        sigma=RegimeSchedule(SIGMA_FLOOR, SIGMA_FLOOR, start, end),
        space="log" if series.kind == "price" else "level",
        initial_value=float(series.values[0]),
    )
    return CalibrationReport(spec=spec, residual_std_day=0.0, residual_std_night=0.0, r_squared=1.0,
                             n_day=n_day, n_night=n_night, kappa_raw=(0.0, 0.0), kappa_stderr=(0.0, 0.0),
                             near_unit_root=(True, True),
                             profile_by_regime={"day": coefs, "night": coefs})


def confidence_band(spec: SeasonalOuSpec, t_grid, level: float = 0.8, n_paths: int = 1000,
                    seed: int = 0):
    """Per-time empirical quantile band of the simulated observable (price, not log-price)."""
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    if n_paths < 100:
        raise ValidationError("confidence_band needs at least 100 paths")
    paths = spec.to_observable(simulate_paths(spec, t_grid, n_paths, seed=seed))
    alpha = (1.0 - level) / 2.0
    return quantile_band(paths, alpha, 1.0 - alpha, axis=1)


class SeasonalOUCalibrator(BaseEstimator):
    """Estimator wrapper around :func:`calibrate`.

    ``fit(t, y)`` takes hours-since-start and observed values; the fitted
    model is exposed as ``spec_`` and the diagnostics as ``report_``.
    """

    def __init__(self, kind="load", degree=2, day_start_hour=8, day_end_hour=19, period=24.0):
        self.kind = kind
        self.degree = degree
        self.day_start_hour = day_start_hour
        self.day_end_hour = day_end_hour
        self.period = period

    def fit(self, t, y):
        series = ObservedSeries(np.asarray(t, dtype=float), np.asarray(y, dtype=float), self.kind)
        self.report_ = calibrate(series, self.degree, (self.day_start_hour, self.day_end_hour), self.period)
        self.spec_ = self.report_.spec
        return self

    def predict(self, t):
        """Seasonal mean level mu(t) (log-price for prices)."""
        check_is_fitted(self, "spec_")
        return np.asarray(self.spec_.mu(np.asarray(t, dtype=float)))

    def sample(self, t_grid, n_paths=1000, seed=0):
        check_is_fitted(self, "spec_")
        return self.spec_.to_observable(simulate_paths(self.spec_, t_grid, n_paths, seed=seed))

    def confidence_band(self, t_grid, level=0.8, n_paths=1000, seed=0):
        check_is_fitted(self, "spec_")
        return confidence_band(self.spec_, t_grid, level, n_paths, seed)

    def score(self, t, y):
        check_is_fitted(self, "spec_")
        return self.report_.r_squared

"""Seasonal regime-switching Ornstein-Uhlenbeck models for price and net load.

Load follows ``dH = kappa(t) (mu(t) - H) dt + sigma(t) dW`` directly.  Price is
log-normal: ``log S`` reverts to the convexity-adjusted level
``mu(t) - sigma(t)**2 / (2 kappa(t))``, which is the log-space form of
``dS = kappa (mu - log S) S dt + sigma S dW``.  With that convention the closed
form log-moments in :func:`exact_log_price_moments` are exact for the simulated
process.

Trigonometric profiles use the cosine-leading basis
``a0 + sum_k a_k cos(2 pi k t / P) + b_k sin(2 pi k t / P)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy import integrate

from .ensemble import DOMAIN_MODEL, RngStream
from .errors import NonConstantKappa, ValidationError


@dataclass(frozen=True)
class SeasonalProfile:
    coefficients: tuple = (0.0,)
    period: float = 24.0

    def __post_init__(self):
        coefs = tuple(float(c) for c in self.coefficients)
        object.__setattr__(self, "coefficients", coefs)
        if len(coefs) % 2 != 1:
            raise ValidationError("profile needs 1 + 2*degree coefficients")
        if not self.period > 0:
            raise ValidationError("period must be positive")

    @classmethod
    def from_harmonics(cls, a0, harmonics=(), period=24.0):
        coefs = [a0]
        for a, b in harmonics:
            coefs += [a, b]
        return cls(tuple(coefs), period)

    @property
    def degree(self) -> int:
        return (len(self.coefficients) - 1) // 2

    def basis(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        cols = [np.ones_like(t)]
        w = 2.0 * np.pi / self.period
        for k in range(1, self.degree + 1):
            cols += [np.cos(k * w * t), np.sin(k * w * t)]
        return np.stack(cols, axis=-1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        # reduce first so large t keeps full phase precision
        out = self.basis(np.mod(t, self.period)) @ np.asarray(self.coefficients)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {"coefficients": list(self.coefficients), "period": self.period}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["coefficients"]), d.get("period", 24.0))


@dataclass(frozen=True)
class RegimeSchedule:
    day_value: float
    night_value: float
    day_start_hour: float = 8
    day_end_hour: float = 19

    def __post_init__(self):
        if not (0 <= self.day_start_hour < self.day_end_hour <= 24):
            raise ValidationError("need 0 <= day_start_hour < day_end_hour <= 24")
        if not (self.day_value > 0 and self.night_value > 0):
            raise ValidationError("regime values must be positive")

    @classmethod
    def constant(cls, value, day_start_hour=8, day_end_hour=19):
        return cls(value, value, day_start_hour, day_end_hour)

    @property
    def is_constant(self) -> bool:
        return self.day_value == self.night_value

    def is_day(self, t):
        hour = np.mod(np.asarray(t, dtype=float), 24.0)
        return (hour >= self.day_start_hour) & (hour < self.day_end_hour)

    def __call__(self, t):
        out = np.where(self.is_day(t), self.day_value, self.night_value)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {"day_value": self.day_value, "night_value": self.night_value,
                "day_start_hour": self.day_start_hour, "day_end_hour": self.day_end_hour}

    @classmethod
    def from_dict(cls, d):
        return cls(d["day_value"], d["night_value"], d.get("day_start_hour", 8), d.get("day_end_hour", 19))


@dataclass(frozen=True)
class SeasonalOuSpec:
    """One seasonal OU process.  ``initial_value`` is in observable units (price, not log-price)."""

    mean_profile: SeasonalProfile
    kappa: RegimeSchedule
    sigma: RegimeSchedule
    space: Literal["log", "level"] = "level"
    initial_value: float = 0.0
    weekly_profile: Optional[SeasonalProfile] = field(default=None)

    def __post_init__(self):
        if self.space not in ("log", "level"):
            raise ValidationError(f"unknown space {self.space!r}")
        if self.space == "log" and not self.initial_value > 0:
            raise ValidationError("log-space process needs a positive initial value")

    def mu(self, t):
        out = self.mean_profile(t)
        if self.weekly_profile is not None:
            out = out + self.weekly_profile(t)
        return out

    def reversion_level(self, t):
        """Level the modelled coordinate (log S or H) reverts to."""
        mu = self.mu(t)
        if self.space == "log":
            return mu - self.sigma(t) ** 2 / (2.0 * self.kappa(t))
        return mu

    @property
    def initial_state(self) -> float:
        return float(np.log(self.initial_value)) if self.space == "log" else float(self.initial_value)

    def to_observable(self, y):
        return np.exp(y) if self.space == "log" else y

    def to_dict(self):
        d = {"mean_profile": self.mean_profile.to_dict(), "kappa": self.kappa.to_dict(),
             "sigma": self.sigma.to_dict(), "space": self.space,
             "initial_value": self.initial_value}
        if self.weekly_profile is not None:
            d["weekly_profile"] = self.weekly_profile.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"mean_profile", "kappa", "sigma", "space", "initial_value", "weekly_profile"}
        if unknown:
            raise ValidationError(f"unknown model keys: {sorted(unknown)}")
        weekly = d.get("weekly_profile")
        return cls(SeasonalProfile.from_dict(d["mean_profile"]), RegimeSchedule.from_dict(d["kappa"]),
                   RegimeSchedule.from_dict(d["sigma"]), d.get("space", "level"),
                   float(d.get("initial_value", 0.0)),
                   SeasonalProfile.from_dict(weekly) if weekly is not None else None)


def evaluate_schedule(spec: SeasonalOuSpec, t):
    """(mu, kappa, sigma) at time ``t`` hours."""
    return spec.mu(t), spec.kappa(t), spec.sigma(t)


def ou_step(spec: SeasonalOuSpec, state, t, dt, noise):
    """One Euler-Maruyama step of the modelled coordinate (log-value for prices)."""
    kappa = spec.kappa(t)
    return state + kappa * (spec.reversion_level(t) - state) * dt + spec.sigma(t) * np.sqrt(dt) * noise


def simulate_paths(spec: SeasonalOuSpec, t_grid, n_paths: int, seed: int = 0,
                   antithetic: bool = False, start=None) -> np.ndarray:
    """Euler paths of the modelled coordinate on ``t_grid``; shape ``(len(t_grid), n_paths)``.

    Returned values are in model space (log-price for ``space='log'``).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    stream = RngStream(seed)
    out = np.empty((len(t_grid), n_paths))
    out[0] = spec.initial_state if start is None else start
    for n in range(len(t_grid) - 1):
        dt = t_grid[n + 1] - t_grid[n]
        z = stream.normals(n_paths, DOMAIN_MODEL, 0, n, antithetic=antithetic)
        out[n + 1] = ou_step(spec, out[n], t_grid[n], dt, z)
    return out


def _regime_breakpoints(spec, t):
    hours = {spec.sigma.day_start_hour, spec.sigma.day_end_hour,
             spec.kappa.day_start_hour, spec.kappa.day_end_hour}
    pts = []
    day = 0.0
    while day < t:
        pts += [day + h for h in sorted(hours) if 0 < day + h < t]
        day += 24.0
    return pts


def exact_log_price_moments(spec: SeasonalOuSpec, t: float) -> tuple[float, float]:
    """Mean and variance of ``log S_t`` for constant kappa.

    The seasonal integrand is integrated numerically with breakpoints at the
    volatility regime switches.
    """
    if not spec.kappa.is_constant:
        raise NonConstantKappa("closed-form moments need day kappa == night kappa")
    if spec.space != "log":
        raise ValidationError("exact_log_price_moments applies to log-space specs")
    k = spec.kappa.day_value
    t = float(t)
    mean = np.exp(-k * t) * np.log(spec.initial_value)
    if t == 0.0:
        return float(mean), 0.0
    points = _regime_breakpoints(spec, t)
    limit = 200 + 4 * len(points)

    def drift(u):
        return k * np.exp(-k * (t - u)) * spec.reversion_level(u)

    def diffusion(u):
        return spec.sigma(u) ** 2 * np.exp(-2.0 * k * (t - u))

    m, _ = integrate.quad(drift, 0.0, t, points=points or None, limit=limit, epsabs=1e-13, epsrel=1e-12)
    v, _ = integrate.quad(diffusion, 0.0, t, points=points or None, limit=limit, epsabs=1e-13, epsrel=1e-12)
    return float(mean + m), float(v)

"""Controlled kinetic battery dynamics: power V is the velocity, SOC X the position.

All functions broadcast over numpy arrays so a whole particle batch is
advanced in one call.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class BatteryParams:
    c1: float = 10.0
    c2: float = 10.0
    X_max: float = 10.0
    V_max: float = 2.0
    V_min: float = -2.0
    delta: float = 1.0
    sigma_V: float = 0.01
    sigma_V_H: float = 0.001
    sigma_V_V: float = 0.001
    sigma_V_kappa: float = 0.001

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValidationError("c1, c2 must be non-negative")
        if not self.X_max > 0:
            raise ValidationError("X_max must be positive")
        if not self.V_min < 0 < self.V_max:
            raise ValidationError("need V_min < 0 < V_max")
        if not self.delta > 0:
            raise ValidationError("delta must be positive")
        if not self.sigma_V > 0 or min(self.sigma_V_H, self.sigma_V_V, self.sigma_V_kappa) < 0:
            raise ValidationError("need sigma_V > 0 and non-negative sigma components")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class StateVector:
    """One agent's state: price S, net load H (kW), power V (kW, charging > 0), SOC X (kWh)."""

    S: float
    H: float
    V: float
    X: float

    def __post_init__(self):
        if not self.S > 0:
            raise ValidationError("price must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.S, self.H, self.V, self.X], dtype=float)

    @classmethod
    def from_array(cls, arr):
        s, h, v, x = (float(c) for c in arr)
        return cls(s, h, v, x)


def phi(x, params: BatteryParams):
    """SOC saturation: 1 on [delta, X_max - delta], linear ramps, 0 outside [0, X_max]."""
    d = params.delta
    return np.maximum(0.0, np.minimum(1.0, np.minimum(x / d, (params.X_max - x) / d)))


def psi(x, params: BatteryParams):
    return np.clip(x / params.delta, 0.0, 1.0)


def drift_v(V, X, a, params: BatteryParams):
    """Power drift a*phi(X) plus the soft push-back terms at the SOC limits."""
    return (a * phi(X, params)
            + params.c1 * psi(-X, params) * psi(params.V_max - V, params)
            - params.c2 * psi(X - params.X_max, params) * psi(V - params.V_min, params))


def sigma_v(H, V, mean_V, params: BatteryParams):
    return (params.sigma_V + params.sigma_V_H * np.abs(H) + params.sigma_V_V * np.abs(V)
            + params.sigma_V_kappa * np.abs(V - mean_V))


def step(states, a, mean_V, dS, dH, noise_V, dt, params: BatteryParams):
    """Explicit Euler step of the full state array ``(..., 4)``.

    ``dS``, ``dH`` are the exogenous increments; X is moved with the pre-step V.
    """
    states = np.asarray(states, dtype=float)
    S, H, V, X = (states[..., i] for i in range(4))
    out = np.empty_like(states)
    out[..., 0] = S + dS
    out[..., 1] = H + dH
    out[..., 2] = V + drift_v(V, X, a, params) * dt + sigma_v(H, V, mean_V, params) * np.sqrt(dt) * noise_V
    out[..., 3] = X + V * dt
    return out

"""Running and terminal costs, their gradients, and the Hamiltonian minimiser.

Ensemble means enter every formula as frozen constants.  ``a`` and ``zeta_V``
may be autodiff nodes: the formulas only use arithmetic that the tape records.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .battery import BatteryParams, phi, sigma_v
from .errors import ValidationError

COMPONENTS = ("grid", "degradation", "ramp", "mf_battery", "mf_consumption", "terminal")


@dataclass(frozen=True)
class CostParams:
    lambda_V: float = 0.001
    lambda_a: float = 0.01
    gamma: float = 1.0
    omega: float = 0.01
    c_bat: float = 0.0001
    c_con: float = 0.01

    def __post_init__(self):
        if not self.lambda_a > 0:
            raise ValidationError("lambda_a must be positive")
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValidationError(f"{f.name} must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class CostBreakdown:
    """Accumulated cost per component; arrays broadcast over (time, particle)."""

    grid: np.ndarray
    degradation: np.ndarray
    ramp: np.ndarray
    mf_battery: np.ndarray
    mf_consumption: np.ndarray
    terminal: np.ndarray

    @property
    def total(self):
        return (self.grid + self.degradation + self.ramp + self.mf_battery
                + self.mf_consumption + self.terminal)

    def as_dict(self):
        d = {name: getattr(self, name) for name in COMPONENTS}
        d["total"] = self.total
        return d


def h_asym(x, c):
    """c * ((x^-)^2 + 2 (x^+)^2): over-shooting the mean costs twice as much."""
    x = np.asarray(x, dtype=float)
    return c * np.where(x > 0, 2.0 * x * x, x * x)


def running_cost_terms(S, H, V, X, a, mean_X, mean_HV, params: CostParams, include_ramp=True):
    return {
        "grid": S * (H + V),
        "degradation": params.lambda_V * V * V,
        "ramp": params.lambda_a * a * a if include_ramp else 0.0 * S,
        "mf_battery": h_asym(X - mean_X, params.c_bat),
        "mf_consumption": h_asym(H + V - mean_HV, params.c_con),
    }


def running_cost(S, H, V, X, a, mean_X, mean_HV, params: CostParams):
    t = running_cost_terms(S, H, V, X, a, mean_X, mean_HV, params)
    return t["grid"] + t["degradation"] + t["mf_battery"] + t["mf_consumption"] + t["ramp"]


def terminal_cost(S, X, mean_X, params: CostParams):
    return -params.gamma * S * X + 0.5 * params.omega * (X - mean_X) ** 2


def terminal_gradient(S, X, mean_X, params: CostParams):
    """(dg/dS, dg/dH, dg/dV, dg/dX) with the mean held fixed; stacked on the last axis."""
    S, X = np.broadcast_arrays(np.asarray(S, dtype=float), np.asarray(X, dtype=float))
    zero = np.zeros_like(S)
    return np.stack([-params.gamma * X, zero, zero,
                     -params.gamma * S + params.omega * (X - mean_X)], axis=-1)


def optimal_ramp(X, zeta_V, sigma_V, battery: BatteryParams, params: CostParams):
    """Pointwise minimiser of a*phi(X)*zeta_V/sigma_V + lambda_a*a^2."""
    return -phi(X, battery) * zeta_V / (2.0 * params.lambda_a * sigma_V)


def optimal_ramp_state(H, V, X, zeta_V, mean_V, battery: BatteryParams, params: CostParams):
    return optimal_ramp(X, zeta_V, sigma_v(H, V, mean_V, battery), battery, params)

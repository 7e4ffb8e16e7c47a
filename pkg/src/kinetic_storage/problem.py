"""Control problems the solver and evaluator run on.

A problem bundles the exogenous dynamics, the battery, the costs and the
initial law.  The solver only talks to the small interface of
:class:`ControlProblem`; :class:`KineticStorageProblem` is the full model and
:class:`~kinetic_storage.oracles.LqProblem` a linear-quadratic reduction with a
known solution.

``xi`` arguments are standard normals ``(n, 3)`` for the (S, H, V) channels.
Functions that produce a ramp or a running cost accept autodiff nodes for
``zeta_V`` / ``a``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import battery as bat
from . import costs
from .ensemble import DOMAIN_INIT, H, S, V, X, RngStream
from .models import SeasonalOuSpec, ou_step
from .errors import ValidationError


class ControlProblem:
    """Interface; subclasses override every method."""

    horizon: float

    def initial_states(self, n: int, stream: RngStream, epoch: int = 0) -> np.ndarray:
        raise NotImplementedError

    def sigma_diag(self, t, states, mean_V) -> np.ndarray:
        raise NotImplementedError

    def ramp(self, t, states, zeta_V, mean_V):
        raise NotImplementedError

    def running_cost_terms(self, t, states, a, means, include_ramp=True) -> dict:
        raise NotImplementedError

    def running_cost(self, t, states, a, means):
        terms = self.running_cost_terms(t, states, a, means)
        ramp = terms.pop("ramp")
        return sum(terms.values()) + ramp

    def advance_exogenous(self, t, states, xi, dt):
        """(S', H') after one step."""
        raise NotImplementedError

    def advance(self, t, states, a, mean_V, xi, dt) -> np.ndarray:
        raise NotImplementedError

    def terminal_cost(self, states, mean_X) -> np.ndarray:
        raise NotImplementedError

    def terminal_zeta(self, states, mean_X, mean_V) -> np.ndarray:
        """Target for zeta at the horizon: grad g times the diffusion, ``(n, 3)``."""
        raise NotImplementedError

    def scale_floor(self):
        """Lower bounds for the network's input scales (t, S, H, V, X)."""
        return np.zeros(5)


@dataclass(frozen=True)
class KineticStorageProblem(ControlProblem):
    price: SeasonalOuSpec
    load: SeasonalOuSpec
    battery: bat.BatteryParams = field(default_factory=bat.BatteryParams)
    cost: costs.CostParams = field(default_factory=costs.CostParams)
    horizon: float = 24.0
    start_hour: float = 0.0
    literal_sigma: bool = False

    def __post_init__(self):
        if self.price.space != "log":
            raise ValidationError("price spec must be log-space")
        if self.load.space != "level":
            raise ValidationError("load spec must be level-space")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")

    def clock(self, t):
        return self.start_hour + t

    def initial_states(self, n, stream=None, epoch=0):
        # deterministic initial law: every agent starts from the same state
        z0 = np.array([self.price.initial_value, self.load.initial_value, 0.0, 0.5 * self.battery.X_max])
        return np.tile(z0, (n, 1))

    def sigma_diag(self, t, states, mean_V):
        c = self.clock(t)
        out = np.empty(states.shape[:-1] + (3,))
        out[..., 0] = self.price.sigma(c) * states[..., S]
        out[..., 1] = self.load.sigma(c)
        out[..., 2] = bat.sigma_v(states[..., H], states[..., V], mean_V, self.battery)
        return out

    def ramp(self, t, states, zeta_V, mean_V):
        return costs.optimal_ramp_state(states[..., H], states[..., V], states[..., X], zeta_V,
                                        mean_V, self.battery, self.cost)

    def running_cost_terms(self, t, states, a, means, include_ramp=True):
        _, mean_X, mean_HV = means
        return costs.running_cost_terms(states[..., S], states[..., H], states[..., V], states[..., X],
                                        a, mean_X, mean_HV, self.cost, include_ramp)

    def advance_exogenous(self, t, states, xi, dt):
        c = self.clock(t)
        log_s = ou_step(self.price, np.log(states[..., S]), c, dt, xi[..., 0])
        h = ou_step(self.load, states[..., H], c, dt, xi[..., 1])
        return np.exp(log_s), h

    def advance(self, t, states, a, mean_V, xi, dt):
        s_new, h_new = self.advance_exogenous(t, states, xi, dt)
        out = bat.step(states, a, mean_V, s_new - states[..., S], h_new - states[..., H],
                       xi[..., 2], dt, self.battery)
        # keep S, H bit-identical to the exogenous step so paired runs share them exactly
        out[..., S], out[..., H] = s_new, h_new
        return out

    def terminal_cost(self, states, mean_X):
        return costs.terminal_cost(states[..., S], states[..., X], mean_X, self.cost)

    def terminal_zeta(self, states, mean_X, mean_V):
        grad = costs.terminal_gradient(states[..., S], states[..., X], mean_X, self.cost)[..., :3]
        return grad * self.sigma_diag(self.horizon, states, mean_V)

    def scale_floor(self):
        # a zero-ramp pilot barely moves V and X
        b = self.battery
        return np.array([0.0, 0.0, 0.0, (b.V_max - b.V_min) / 4.0, b.X_max / 4.0])


def random_box_states(n, stream: RngStream, epoch, low, high, fixed=(1.0, 0.0)):
    """Uniform (V, X) on a box with S, H pinned; used by problems with a random initial law."""
    u_v = stream.uniforms(n, DOMAIN_INIT, epoch, 0)
    u_x = stream.uniforms(n, DOMAIN_INIT, epoch, 1)
    out = np.empty((n, 4))
    out[:, S], out[:, H] = fixed
    out[:, V] = low[0] + (high[0] - low[0]) * u_v
    out[:, X] = low[1] + (high[1] - low[1]) * u_x
    return out

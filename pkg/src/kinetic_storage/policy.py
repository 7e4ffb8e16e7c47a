"""Policies (passive benchmark, trained feedback, zero ramp) and the shared simulation driver."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import net
from .ensemble import H, V, X, ParticleEnsemble, RngStream, batch_means
from .errors import MissingCheckpoint, NonFiniteState, ValidationError
from .problem import ControlProblem


class PolicyKind(str, enum.Enum):
    PASSIVE = "passive"
    NEURAL = "neural"
    ZERO = "zero"


@dataclass
class Policy:
    kind: PolicyKind
    params: net.MlpParams | None = None
    scaler: net.InputScaler | None = None
    literal_sigma: bool = False

    def __post_init__(self):
        self.kind = PolicyKind(self.kind)
        if self.kind is PolicyKind.NEURAL and (self.params is None or self.scaler is None):
            raise MissingCheckpoint("neural policy needs trained parameters")

    @classmethod
    def from_checkpoint(cls, path, literal_sigma=False):
        params, scaler, _, _ = net.load_checkpoint(path)
        return cls(PolicyKind.NEURAL, params, scaler, literal_sigma)


def passive_power(H, X, X_max):
    """Offset the net load when feasible: an empty battery cannot discharge, a full one cannot charge."""
    H = np.asarray(H, dtype=float)
    X = np.asarray(X, dtype=float)
    return np.where(X <= 0, -np.minimum(H, 0.0), np.where(X >= X_max, -np.maximum(H, 0.0), -H))


def act(policy: Policy, problem: ControlProblem, t, states, mean_V):
    """Returns ``{"a": ...}`` for ramp policies or ``{"V": ...}`` for the passive rule.

    Neural actions also carry the network value ``y`` and ``zeta``.
    """
    states = np.asarray(states, dtype=float)
    if policy.kind is PolicyKind.PASSIVE:
        return {"V": passive_power(states[..., H], states[..., X], problem.battery.X_max)}
    if policy.kind is PolicyKind.ZERO:
        return {"a": np.zeros(states.shape[:-1])}
    sig = problem.sigma_diag(t, states, mean_V)
    y, zeta = net.value_and_zeta(policy.params, policy.scaler, t, states, sig, policy.literal_sigma)
    return {"a": problem.ramp(t, states, zeta[..., 2], mean_V), "y": y, "zeta": zeta}


@dataclass
class SimulationResult:
    ensemble: ParticleEnsemble
    ramp: np.ndarray  # (N, n); zero under the passive rule
    y: np.ndarray | None  # (N + 1, n) network values, neural only
    zeta: np.ndarray | None  # (N + 1, n, 3)
    noise: np.ndarray  # (N, n, 3)


def time_grid(horizon, n_steps):
    return np.arange(n_steps + 1) * (horizon / n_steps)


def simulate(problem: ControlProblem, policy: Policy, n_steps: int, n_particles: int,
             seed: int = 0, epoch: int = 0, antithetic: bool = True,
             initial_states=None) -> SimulationResult:
    """Euler-Maruyama rollout under ``policy``.

    The exogenous and battery noise are indexed by ``(seed, epoch, step)``
    only, so two policies simulated with the same arguments see identical
    price and load paths.
    """
    if n_steps < 1:
        raise ValidationError("need at least one time step")
    stream = RngStream(seed)
    dt = problem.horizon / n_steps
    grid = time_grid(problem.horizon, n_steps)
    noise = stream.path_normals(epoch, n_steps, n_particles, antithetic=antithetic)
    states = np.empty((n_steps + 1, n_particles, 4))
    states[0] = (problem.initial_states(n_particles, stream, epoch)
                 if initial_states is None else np.asarray(initial_states, dtype=float))
    ramps = np.zeros((n_steps, n_particles))
    neural = policy.kind is PolicyKind.NEURAL
    ys = np.empty((n_steps + 1, n_particles)) if neural else None
    zetas = np.empty((n_steps + 1, n_particles, 3)) if neural else None
    for n in range(n_steps + 1):
        t = grid[n]
        if policy.kind is PolicyKind.PASSIVE:
            states[n, :, V] = passive_power(states[n, :, H], states[n, :, X], problem.battery.X_max)
        mean_V = float(states[n, :, V].mean())
        if n == n_steps:
            if neural:
                out = act(policy, problem, t, states[n], mean_V)
                ys[n], zetas[n] = out["y"], out["zeta"]
            break
        out = act(policy, problem, t, states[n], mean_V)
        if "V" in out:
            s_new, h_new = problem.advance_exogenous(t, states[n], noise[n], dt)
            nxt = states[n].copy()
            nxt[:, 0], nxt[:, 1] = s_new, h_new
            nxt[:, X] = states[n, :, X] + states[n, :, V] * dt
            states[n + 1] = nxt
        else:
            ramps[n] = out["a"]
            states[n + 1] = problem.advance(t, states[n], out["a"], mean_V, noise[n], dt)
            if neural:
                ys[n], zetas[n] = out["y"], out["zeta"]
        if not np.all(np.isfinite(states[n + 1])):
            raise NonFiniteState(f"non-finite state at step {n + 1}")
    return SimulationResult(ParticleEnsemble(grid, states), ramps, ys, zetas, noise)


def mean_triplet(states):
    return batch_means(states)

"""Interacting-particle bookkeeping: random streams, ensembles, moments and W1 diagnostics.

The law of the state is approximated by the empirical measure of a batch of
trajectories.  Every Gaussian draw is addressed by ``(epoch, step, channel)``
and the particle index, so a batch is reproducible independently of how it is
scheduled.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, SizeMismatch, ValidationError

# column layout of a state array (..., 4)
S, H, V, X = 0, 1, 2, 3
STATE_NAMES = ("S", "H", "V", "X")

# spawn-key namespaces, keeps draws for different purposes disjoint
DOMAIN_PATHS = 0
DOMAIN_INIT = 1
DOMAIN_BOOTSTRAP = 2
DOMAIN_WEIGHTS = 3
DOMAIN_MODEL = 4

CHANNELS = {"S": 0, "H": 1, "V": 2}


@dataclass(frozen=True)
class RngStream:
    """Counter-based normal draws keyed by ``(master_seed, domain, epoch, step, channel)``.

    Within one key the i-th draw belongs to particle i, so the value seen by a
    particle does not depend on the batch layout.  With ``antithetic=True`` the
    second half of the batch receives the negated draws of the first half.
    """

    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValidationError("master_seed must fit in 64 unsigned bits")

    def generator(self, *key: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))

    def normals(self, n: int, *key: int, antithetic: bool = False) -> np.ndarray:
        gen = self.generator(*key)
        if not antithetic:
            return gen.standard_normal(n)
        if n % 2:
            raise ValidationError("antithetic sampling needs an even particle count")
        half = gen.standard_normal(n // 2)
        return np.concatenate([half, -half])

    def path_normals(self, epoch: int, n_steps: int, n_particles: int,
                     channels=("S", "H", "V"), antithetic: bool = False) -> np.ndarray:
        """Standard normals of shape ``(n_steps, n_particles, len(channels))``."""
        out = np.empty((n_steps, n_particles, len(channels)))
        for n in range(n_steps):
            for j, c in enumerate(channels):
                code = CHANNELS[c] if isinstance(c, str) else int(c)
                out[n, :, j] = self.normals(n_particles, DOMAIN_PATHS, epoch, n, code,
                                            antithetic=antithetic)
        return out

    def uniforms(self, n: int, *key: int) -> np.ndarray:
        return self.generator(*key).random(n)


@dataclass
class ParticleEnsemble:
    """Trajectories of ``n_particles`` agents on a uniform grid ``t_n = n T / N``.

    ``states`` has shape ``(N + 1, n_particles, 4)`` with columns (S, H, V, X).
    """

    time_grid: np.ndarray
    states: np.ndarray
    mean_V: np.ndarray = field(default=None)
    mean_X: np.ndarray = field(default=None)
    mean_HV: np.ndarray = field(default=None)

    def __post_init__(self):
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 3 or self.states.shape[2] != 4:
            raise ValidationError("states must have shape (N+1, n_particles, 4)")
        if self.states.shape[0] != self.time_grid.shape[0]:
            raise ValidationError("time grid and states disagree on N+1")
        n_steps = len(self.time_grid) - 1
        if n_steps >= 1:
            expected = np.arange(n_steps + 1) * (self.time_grid[-1] / n_steps)
            if not np.allclose(self.time_grid, expected, rtol=0, atol=1e-9 * max(1.0, self.time_grid[-1])):
                raise ValidationError("time grid must be uniform starting at 0")
        if self.mean_V is None:
            self.mean_V, self.mean_X, self.mean_HV = _means(self.states)

    @property
    def n_steps(self) -> int:
        return len(self.time_grid) - 1

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    @property
    def dt(self) -> float:
        return float(self.time_grid[-1] / self.n_steps) if self.n_steps else 0.0

    def component(self, name: str) -> np.ndarray:
        return self.states[:, :, STATE_NAMES.index(name)]

    def check_means(self, atol: float = 1e-12) -> bool:
        v, x, hv = _means(self.states)
        return (np.allclose(v, self.mean_V, rtol=0, atol=atol)
                and np.allclose(x, self.mean_X, rtol=0, atol=atol)
                and np.allclose(hv, self.mean_HV, rtol=0, atol=atol))


def _means(states):
    mean_V = states[..., V].mean(axis=-1)
    mean_X = states[..., X].mean(axis=-1)
    mean_HV = (states[..., H] + states[..., V]).mean(axis=-1)
    return mean_V, mean_X, mean_HV


def batch_means(states: np.ndarray) -> tuple[float, float, float]:
    """(mean V, mean X, mean H+V) of a single time slice ``(n_particles, 4)``."""
    if len(states) == 0:
        raise EmptyInput("empty particle batch")
    v, x, hv = _means(states)
    return float(v), float(x), float(hv)


def empirical_means(ensemble: ParticleEnsemble, t_index: int) -> tuple[float, float, float]:
    if not -len(ensemble.time_grid) <= t_index < len(ensemble.time_grid):
        raise IndexError(f"time index {t_index} outside grid")
    return batch_means(ensemble.states[t_index])


def quantile_band(values, lower_q: float, upper_q: float, axis=None):
    """Linear-interpolation order-statistic quantiles ``(lo, hi)``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyInput("quantile of an empty sample")
    if not 0.0 <= lower_q < upper_q <= 1.0:
        raise ValidationError("need 0 <= lower_q < upper_q <= 1")
    lo, hi = np.quantile(values, [lower_q, upper_q], axis=axis)
    return lo, hi


def wasserstein1_1d(samples_a, samples_b) -> float:
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size != b.size:
        raise SizeMismatch(f"sample sizes differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise EmptyInput("W1 of empty samples")
    return float(np.mean(np.abs(a - b)))


def picard_diagnostic(flow_a, flow_b) -> float:
    """max over time of W1(V-marginals) + W1(X-marginals).

    ``flow_*`` are arrays ``(n_times, n_particles, 2)`` holding (V, X) samples.
    The sum of marginal distances bounds the joint W1 from below; it is only
    used to monitor the mean-field fixed-point iteration.
    """
    a = np.asarray(flow_a, dtype=float)
    b = np.asarray(flow_b, dtype=float)
    if a.shape != b.shape:
        raise SizeMismatch(f"flow shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 2:
        raise ValidationError("flows must have shape (n_times, n_particles, 2)")
    sa = np.sort(a, axis=1)
    sb = np.sort(b, axis=1)
    per_time = np.abs(sa - sb).mean(axis=1).sum(axis=1)
    return float(per_time.max())


def vx_flow(ensemble: ParticleEnsemble) -> np.ndarray:
    return ensemble.states[:, :, [V, X]]

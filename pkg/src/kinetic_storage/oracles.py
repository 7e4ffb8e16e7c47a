"""Closed-form references: the kinetic Gaussian kernel and a linear-quadratic control problem.

The kernel ``Gamma^lambda`` is the transition density of the uncontrolled
Langevin pair ``dV = sqrt(lambda) dW, dX = V dt``.  The LQ problem keeps the
battery's (V, X) mechanics with phi = 1 and drops price, load, push-back and
mean-field terms; its value function is quadratic and follows from a matrix
Riccati equation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from .ensemble import DOMAIN_MODEL, H, S, V, X, RngStream
from .errors import NonCausal, ValidationError
from .problem import ControlProblem, random_box_states


def anisotropic_norm(v, x):
    """|(v, x)|_L = |v| + |x|^(1/3); homogeneous under (v, x) -> (l v, l^3 x)."""
    return np.abs(v) + np.cbrt(np.abs(x))


# kinetic kernel -------------------------------------------------------------

def kernel_mean(t, v, x, s):
    return np.array([v, x + v * (s - t)], dtype=float)


def kernel_cov(lam, tau):
    return lam * np.array([[tau, tau**2 / 2.0], [tau**2 / 2.0, tau**3 / 3.0]])


def gamma_kernel(lam, t, v, x, s, v2, x2):
    """Density at (v2, x2), time s, of the Langevin pair started from (v, x) at time t."""
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    if not np.all(np.asarray(s) > np.asarray(t)):
        raise NonCausal("kernel needs s > t")
    tau = np.asarray(s, dtype=float) - t
    dv = np.asarray(v2, dtype=float) - v
    dx = np.asarray(x2, dtype=float) - x - v * tau
    expo = (-2.0 * dv**2 / (lam * tau) + 6.0 * dv * dx / (lam * tau**2)
            - 6.0 * dx**2 / (lam * tau**3))
    return np.sqrt(3.0) / (np.pi * lam * tau**2) * np.exp(expo)


def _gauss_hermite_nodes(mean, cov, n):
    """Tensor Gauss-Hermite nodes/weights for E[f(Z)], Z ~ N(mean, cov)."""
    xi, w = np.polynomial.hermite.hermgauss(n)
    g1, g2 = np.meshgrid(xi, xi, indexing="ij")
    weights = (np.outer(w, w) / np.pi).ravel()
    L = np.linalg.cholesky(cov)
    pts = mean + np.sqrt(2.0) * np.stack([g1.ravel(), g2.ravel()], axis=1) @ L.T
    return pts, weights


def kernel_mass(lam, tau, v=0.0, x=0.0, width=12.0, tol=1e-12):
    """Total mass of the kernel by adaptive quadrature on a box of +-width standard deviations."""
    m = kernel_mean(0.0, v, x, tau)
    sd = np.sqrt(np.diag(kernel_cov(lam, tau)))

    def f(x2, v2):
        return gamma_kernel(lam, 0.0, v, x, tau, v2, x2)

    val, _ = integrate.dblquad(f, m[0] - width * sd[0], m[0] + width * sd[0],
                               m[1] - width * sd[1], m[1] + width * sd[1], epsabs=tol, epsrel=tol)
    return float(val)


def kernel_moments(lam, tau, v=0.0, x=0.0, width=12.0, tol=1e-11):
    """(mean, covariance) of the kernel computed by adaptive quadrature of the density."""
    m = kernel_mean(0.0, v, x, tau)
    sd = np.sqrt(np.diag(kernel_cov(lam, tau)))
    lo, hi = m - width * sd, m + width * sd

    def moment(g):
        val, _ = integrate.dblquad(lambda x2, v2: g(v2, x2) * gamma_kernel(lam, 0.0, v, x, tau, v2, x2),
                                   lo[0], hi[0], lo[1], hi[1], epsabs=tol, epsrel=tol)
        return val

    mv = moment(lambda a, b: a)
    mx = moment(lambda a, b: b)
    cvv = moment(lambda a, b: (a - mv) ** 2)
    cvx = moment(lambda a, b: (a - mv) * (b - mx))
    cxx = moment(lambda a, b: (b - mx) ** 2)
    return np.array([mv, mx]), np.array([[cvv, cvx], [cvx, cxx]])


def chapman_kolmogorov_residual(lam, t, r, s, z, z2, quadrature_n=128):
    """|Gamma(t, z; s, z2) - int Gamma(t, z; r, w) Gamma(r, w; s, z2) dw|.

    The middle integral uses Gauss-Hermite nodes aligned to the law of the
    intermediate point ``w`` given ``z``.
    """
    if not t < r < s:
        raise NonCausal("need t < r < s")
    v, x = z
    pts, w = _gauss_hermite_nodes(kernel_mean(t, v, x, r), kernel_cov(lam, r - t), quadrature_n)
    inner = gamma_kernel(lam, r, pts[:, 0], pts[:, 1], s, z2[0], z2[1])
    direct = gamma_kernel(lam, t, v, x, s, z2[0], z2[1])
    return float(abs(direct - w @ inner))


@dataclass
class MomentCheck:
    name: str
    simulated: float
    analytic: float
    stderr: float

    @property
    def z_score(self):
        return (self.simulated - self.analytic) / self.stderr if self.stderr > 0 else 0.0

    def passed(self, n_se=3.0, atol=1e-12):
        return abs(self.simulated - self.analytic) <= n_se * self.stderr + atol

    def to_dict(self):
        d = asdict(self)
        d["z_score"] = self.z_score
        return d


def euler_vs_kernel(lam, dt, n_paths, horizon, v0=0.0, x0=0.0, seed=0, chunk=20000):
    """Euler-simulated (V, X) at the horizon against the kernel moments.

    Returns one :class:`MomentCheck` per mean and covariance entry.  Standard
    errors come from the sample fourth moments.
    """
    n_steps = int(round(horizon / dt))
    if n_steps < 1 or not np.isclose(n_steps * dt, horizon):
        raise ValidationError("horizon must be a positive multiple of dt")
    stream = RngStream(seed)
    vs, xs = [], []
    for c0 in range(0, n_paths, chunk):
        m = min(chunk, n_paths - c0)
        gen = stream.generator(DOMAIN_MODEL, 1, c0)
        v = np.full(m, float(v0))
        x = np.full(m, float(x0))
        for _ in range(n_steps):
            x = x + v * dt
            v = v + np.sqrt(lam * dt) * gen.standard_normal(m)
        vs.append(v)
        xs.append(x)
    v, x = np.concatenate(vs), np.concatenate(xs)
    n = v.size
    cov = kernel_cov(lam, horizon)
    dv, dx = v - v.mean(), x - x.mean()
    checks = [
        MomentCheck("mean_V", v.mean(), v0, v.std(ddof=1) / np.sqrt(n)),
        MomentCheck("mean_X", x.mean(), x0 + v0 * horizon, x.std(ddof=1) / np.sqrt(n)),
        MomentCheck("var_V", (dv**2).mean(), cov[0, 0], (dv**2).std(ddof=1) / np.sqrt(n)),
        MomentCheck("cov_VX", (dv * dx).mean(), cov[0, 1], (dv * dx).std(ddof=1) / np.sqrt(n)),
        MomentCheck("var_X", (dx**2).mean(), cov[1, 1], (dx**2).std(ddof=1) / np.sqrt(n)),
    ]
    return checks


# linear-quadratic reduction -------------------------------------------------

@dataclass(frozen=True)
class LqConfig:
    sigma: float = 0.1
    lambda_V: float = 0.001
    lambda_a: float = 0.01
    omega_T: float = 0.01
    T: float = 1.0

    def __post_init__(self):
        if not self.lambda_a > 0:
            raise ValidationError("lambda_a must be positive")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if self.lambda_V < 0 or self.omega_T < 0 or not self.T > 0:
            raise ValidationError("need lambda_V >= 0, omega_T >= 0, T > 0")

    def to_dict(self):
        return asdict(self)


_A = np.array([[0.0, 0.0], [1.0, 0.0]])
_B = np.array([[1.0], [0.0]])


@dataclass(frozen=True)
class RiccatiSolution:
    """``P(t)`` and ``r(t)`` on a uniform grid; u(t, z) = z' P z + r."""

    config: LqConfig
    t: np.ndarray
    P: np.ndarray
    r: np.ndarray

    def at(self, t):
        t = float(np.clip(t, 0.0, self.config.T))
        i = min(int(t / self.config.T * (len(self.t) - 1)), len(self.t) - 2)
        w = (t - self.t[i]) / (self.t[i + 1] - self.t[i])
        return (1 - w) * self.P[i] + w * self.P[i + 1], (1 - w) * self.r[i] + w * self.r[i + 1]


def riccati(config: LqConfig, n_steps: int = 10_000) -> RiccatiSolution:
    """Integrate -P' = A'P + PA + Q - P B B' P / lambda_a and -r' = sigma^2 P_vv backwards by RK4."""
    Q = np.diag([config.lambda_V, 0.0])
    la, s2 = config.lambda_a, config.sigma**2

    def rhs(y):
        P = y[:4].reshape(2, 2)
        dP = _A.T @ P + P @ _A + Q - P @ _B @ _B.T @ P / la
        return np.concatenate([dP.ravel(), [s2 * P[0, 0]]])

    h = config.T / n_steps
    ys = np.empty((n_steps + 1, 5))
    ys[-1] = [0.0, 0.0, 0.0, config.omega_T, 0.0]
    for i in range(n_steps, 0, -1):
        # integrating in reversed time s = T - t turns the backward ODE into y' = rhs(y)
        y = ys[i]
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        ys[i - 1] = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    P = ys[:, :4].reshape(-1, 2, 2)
    P = 0.5 * (P + np.swapaxes(P, 1, 2))
    return RiccatiSolution(config, np.linspace(0.0, config.T, n_steps + 1), P, ys[:, 4])


def lq_value(config: LqConfig, t, v, x, solution: RiccatiSolution | None = None):
    sol = solution or riccati(config)
    P, r = sol.at(t)
    v, x = np.asarray(v, dtype=float), np.asarray(x, dtype=float)
    return P[0, 0] * v * v + 2 * P[0, 1] * v * x + P[1, 1] * x * x + r


def lq_feedback(config: LqConfig, t, v, x, solution: RiccatiSolution | None = None):
    """Optimal ramp a = -(1/lambda_a) B' P z."""
    sol = solution or riccati(config)
    P, _ = sol.at(t)
    return -(P[0, 0] * np.asarray(v) + P[0, 1] * np.asarray(x)) / config.lambda_a


def lq_monte_carlo_cost(config: LqConfig, v0, x0, n_paths=20000, n_steps=2000, seed=0,
                        policy=None, solution: RiccatiSolution | None = None):
    """Realised cost of a feedback policy ``policy(t, v, x) -> a`` (optimal by default).

    Antithetic Euler paths with the left-point rule for the running cost.
    Returns ``(mean, standard error)``.
    """
    sol = solution or riccati(config)
    if policy is None:
        def policy(t, v, x):
            return lq_feedback(config, t, v, x, sol)
    stream = RngStream(seed)
    dt = config.T / n_steps
    v = np.full(n_paths, float(v0))
    x = np.full(n_paths, float(x0))
    cost = np.zeros(n_paths)
    for n in range(n_steps):
        t = n * dt
        a = policy(t, v, x)
        cost += (config.lambda_V * v * v + config.lambda_a * a * a) * dt
        xi = stream.normals(n_paths, DOMAIN_MODEL, 2, n, antithetic=True)
        v, x = v + a * dt + config.sigma * np.sqrt(dt) * xi, x + v * dt
    cost += config.omega_T * x * x
    # antithetic pairs are dependent; the standard error uses pair averages
    half = n_paths // 2
    pairs = 0.5 * (cost[:half] + cost[half:2 * half])
    return float(cost.mean()), float(pairs.std(ddof=1) / np.sqrt(half))


@dataclass(frozen=True)
class LqProblem(ControlProblem):
    """The LQ reduction in the solver's state layout; S and H are inert placeholders."""

    config: LqConfig = LqConfig()
    low: tuple = (-1.0, -1.0)
    high: tuple = (1.0, 1.0)

    @property
    def horizon(self):
        return self.config.T

    def initial_states(self, n, stream, epoch=0):
        return random_box_states(n, stream, epoch, self.low, self.high)

    def sigma_diag(self, t, states, mean_V):
        out = np.zeros(states.shape[:-1] + (3,))
        out[..., 2] = self.config.sigma
        return out

    def ramp(self, t, states, zeta_V, mean_V):
        return -zeta_V * (1.0 / (2.0 * self.config.lambda_a * self.config.sigma))

    def running_cost_terms(self, t, states, a, means, include_ramp=True):
        zero = np.zeros(states.shape[:-1])
        v = states[..., V]
        return {"grid": zero, "degradation": self.config.lambda_V * v * v,
                "ramp": self.config.lambda_a * a * a if include_ramp else zero,
                "mf_battery": zero, "mf_consumption": zero}

    def advance_exogenous(self, t, states, xi, dt):
        return states[..., S].copy(), states[..., H].copy()

    def advance(self, t, states, a, mean_V, xi, dt):
        out = states.copy()
        out[..., V] = states[..., V] + a * dt + self.config.sigma * np.sqrt(dt) * xi[..., 2]
        out[..., X] = states[..., X] + states[..., V] * dt
        return out

    def terminal_cost(self, states, mean_X):
        return self.config.omega_T * states[..., X] ** 2

    def terminal_zeta(self, states, mean_X, mean_V):
        return np.zeros(states.shape[:-1] + (3,))

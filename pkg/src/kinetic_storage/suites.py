"""Self-check suites behind the ``oracle`` subcommand.

Each suite returns ``{"suite", "passed", "checks": [...]}`` where every check
carries its own measured value, threshold and verdict.
"""
from __future__ import annotations

import numpy as np

from . import oracles
from .costs import CostParams, optimal_ramp
from .battery import BatteryParams
from .models import RegimeSchedule, SeasonalOuSpec, SeasonalProfile, exact_log_price_moments, simulate_paths


def _check(name, value, threshold, passed, **extra):
    return dict({"name": name, "value": float(value), "threshold": float(threshold), "passed": bool(passed)},
                **extra)


def _result(suite, checks):
    return {"suite": suite, "passed": all(c["passed"] for c in checks), "checks": checks}


def kernel_suite(lam=1.0, tau=0.5, quadrature_n=128, n_paths=100_000, dt=1e-3, seed=0):
    checks = []
    mass = oracles.kernel_mass(lam, tau)
    checks.append(_check("normalisation_error", abs(mass - 1.0), 1e-6, abs(mass - 1.0) < 1e-6))
    mean, cov = oracles.kernel_moments(lam, tau, v=0.3, x=-0.2)
    mean_err = np.max(np.abs(mean - oracles.kernel_mean(0.0, 0.3, -0.2, tau)))
    cov_err = np.max(np.abs(cov - oracles.kernel_cov(lam, tau)))
    checks.append(_check("quadrature_mean_error", mean_err, 1e-6, mean_err < 1e-6))
    checks.append(_check("quadrature_cov_error", cov_err, 1e-6, cov_err < 1e-6))
    ck = oracles.chapman_kolmogorov_residual(lam, 0.0, 0.5, 1.0, (0.2, -0.1), (0.4, 0.3), quadrature_n)
    checks.append(_check("chapman_kolmogorov_residual", ck, 1e-4, ck < 1e-4, quadrature_n=quadrature_n))
    for m in oracles.euler_vs_kernel(lam, dt, n_paths, 1.0, seed=seed):
        checks.append(_check(f"euler_{m.name}", abs(m.z_score), 3.0, m.passed(), simulated=m.simulated,
                             analytic=float(m.analytic), stderr=m.stderr))
    return _result("kernel", checks)


def lq_suite(config: oracles.LqConfig | None = None, n_paths=20_000, n_steps=2000, seed=0):
    config = config or oracles.LqConfig()
    sol = oracles.riccati(config)
    checks = []
    for v0, x0 in ((1.0, 0.0), (0.0, 1.0)):
        u = float(oracles.lq_value(config, 0.0, v0, x0, sol))
        mc, se = oracles.lq_monte_carlo_cost(config, v0, x0, n_paths, n_steps, seed, solution=sol)
        rel = abs(mc - u) / abs(u)
        checks.append(_check(f"riccati_vs_monte_carlo_v{v0:g}_x{x0:g}", rel, 0.01, rel < 0.01,
                             riccati=u, monte_carlo=mc, stderr=se))
    # the Hamiltonian minimiser with zeta_V = sigma du/dv is the LQR feedback
    rng = np.random.default_rng(seed)
    t, v, x = rng.uniform(0, config.T, 50), rng.normal(size=50), rng.normal(size=50)
    bat = BatteryParams(delta=1e-9, X_max=1e9, sigma_V=config.sigma, sigma_V_H=0.0, sigma_V_V=0.0,
                        sigma_V_kappa=0.0)
    cp = CostParams(lambda_V=config.lambda_V, lambda_a=config.lambda_a)
    worst = 0.0
    for ti, vi, xi in zip(t, v, x):
        P, _ = sol.at(ti)
        zeta_v = config.sigma * 2 * (P[0, 0] * vi + P[0, 1] * xi)
        a = optimal_ramp(np.array(1.0), zeta_v, config.sigma, bat, cp)
        worst = max(worst, abs(a - oracles.lq_feedback(config, ti, vi, xi, sol)))
    checks.append(_check("feedback_consistency", worst, 1e-8, worst < 1e-8))
    return _result("lq", checks)


def ou_moment_spec(kappa=0.8):
    """Constant-rate log-price model with regime-switching volatility."""
    return SeasonalOuSpec(SeasonalProfile((-2.2, 0.0, -0.15, 0.05, 0.0)), RegimeSchedule.constant(kappa),
                          RegimeSchedule(0.15, 0.10), space="log", initial_value=0.115)


def ou_suite(n_paths=100_000, dt=0.01, horizon=24.0, seed=0, spec=None):
    spec = spec or ou_moment_spec()
    n = int(round(horizon / dt))
    grid = np.arange(n + 1) * dt
    paths = simulate_paths(spec, grid, n_paths, seed=seed)
    checks = []
    for t_check in (6.0, 12.0, 24.0):
        k = int(round(t_check / dt))
        mean, var = exact_log_price_moments(spec, t_check)
        x = paths[k]
        se = x.std(ddof=1) / np.sqrt(n_paths)
        z = abs(x.mean() - mean) / se
        rel = abs(x.var(ddof=1) / var - 1.0)
        checks.append(_check(f"mean_t{t_check:g}", z, 3.0, z < 3.0, simulated=float(x.mean()), exact=mean))
        checks.append(_check(f"variance_t{t_check:g}", rel, 0.05, rel < 0.05,
                             simulated=float(x.var(ddof=1)), exact=var))
    return _result("ou", checks)


SUITES = {"kernel": kernel_suite, "lq": lq_suite, "ou": ou_suite}

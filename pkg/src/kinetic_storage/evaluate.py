"""Accumulated cost, controlled-vs-benchmark comparison and report files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .costs import COMPONENTS, CostBreakdown
from .ensemble import DOMAIN_BOOTSTRAP, STATE_NAMES, RngStream
from .errors import GridMismatch, ValidationError
from .policy import SimulationResult
from .problem import ControlProblem

N_SAMPLE_PATHS = 3


def accumulate_cost(problem: ControlProblem, result: SimulationResult,
                    benchmark_mode: bool = False) -> CostBreakdown:
    """Running sums ``J_{t_n} = sum_{k<n} f_k dt`` per component, shape ``(N + 1, n)``.

    The terminal cost enters at ``t_N`` only.  ``benchmark_mode`` drops the
    ramp penalty (the passive rule has no ramp).
    """
    ens = result.ensemble
    N, n = ens.n_steps, ens.n_particles
    dt = ens.dt
    acc = {c: np.zeros((N + 1, n)) for c in COMPONENTS}
    for k in range(N):
        terms = problem.running_cost_terms(ens.time_grid[k], ens.states[k], result.ramp[k],
                                           (ens.mean_V[k], ens.mean_X[k], ens.mean_HV[k]),
                                           include_ramp=not benchmark_mode)
        for c, val in terms.items():
            acc[c][k + 1] = acc[c][k] + np.broadcast_to(val, (n,)) * dt
    acc["terminal"][N] = problem.terminal_cost(ens.states[N], ens.mean_X[N])
    return CostBreakdown(**acc)


def band_stats(values, level=0.9, axis=-1):
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    lo, med, hi = np.quantile(values, [lo_q, 0.5, hi_q], axis=axis)
    return {"mean": np.mean(values, axis=axis), "median": med, "lower": lo, "upper": hi}


def paired_bootstrap(diff, n_boot=2000, seed=0, level=0.95):
    """Percentile interval of the mean of paired differences."""
    diff = np.asarray(diff, dtype=float)
    gen = RngStream(seed).generator(DOMAIN_BOOTSTRAP, 0)
    idx = gen.integers(0, diff.size, size=(n_boot, diff.size))
    boots = diff[idx].mean(axis=1)
    a = (1 - level) / 2
    lo, hi = np.quantile(boots, [a, 1 - a])
    return float(lo), float(hi)


@dataclass
class ComparisonReport:
    time_grid: np.ndarray
    stats: dict  # series -> {mean, median, lower, upper} over time
    mean_difference: float  # controlled minus benchmark at T
    interval: tuple
    dispersion: dict  # series -> upper - lower of J_T
    samples: dict  # series -> (N_SAMPLE_PATHS, N + 1)
    metadata: dict = field(default_factory=dict)

    def to_rows(self):
        rows = []
        for series, st in self.stats.items():
            for stat, vals in st.items():
                rows += [(t, series, stat, v) for t, v in zip(self.time_grid, vals)]
            for i, path in enumerate(self.samples[series]):
                rows += [(t, series, f"path{i}", v) for t, v in zip(self.time_grid, path)]
        return rows

    def to_csv(self, path, provenance=None):
        write_long_csv(path, self.to_rows(), provenance)

    def summary(self):
        return {"mean_difference": self.mean_difference,
                "interval_95": list(self.interval),
                "interval_excludes_zero": bool(self.interval[0] > 0 or self.interval[1] < 0),
                "mean_J_T": {s: float(st["mean"][-1]) for s, st in self.stats.items()},
                "dispersion_J_T": self.dispersion,
                "metadata": self.metadata}

    def to_json(self, path, provenance=None):
        d = self.summary()
        d["provenance"] = provenance or {}
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)
            fh.write("\n")


def compare(controlled: tuple, benchmark: tuple, level: float = 0.9, n_boot: int = 2000,
            seed: int = 0, labels=("controlled", "benchmark")) -> ComparisonReport:
    """Compare two ``(time_grid, J)`` pairs, ``J`` of shape ``(N + 1, n)``, paired by particle."""
    (ta, ja), (tb, jb) = controlled, benchmark
    ta, tb = np.asarray(ta, dtype=float), np.asarray(tb, dtype=float)
    ja, jb = np.asarray(ja, dtype=float), np.asarray(jb, dtype=float)
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-12):
        raise GridMismatch("the two runs use different time grids")
    if ja.shape != jb.shape or ja.shape[0] != ta.size:
        raise GridMismatch(f"cost arrays do not match: {ja.shape} vs {jb.shape}")
    if not 0 < level < 1:
        raise ValidationError("band level must lie in (0, 1)")
    stats, disp, samples = {}, {}, {}
    for lab, j in zip(labels, (ja, jb)):
        stats[lab] = band_stats(j, level)
        disp[lab] = float(stats[lab]["upper"][-1] - stats[lab]["lower"][-1])
        samples[lab] = j[:, :N_SAMPLE_PATHS].T
    diff = ja[-1] - jb[-1]
    meta = {"band_level": level, "band_quantiles": [(1 - level) / 2, 1 - (1 - level) / 2],
            "paired_seeds": True, "bootstrap_resamples": n_boot, "interval_level": 0.95}
    return ComparisonReport(ta, stats, float(diff.mean()), paired_bootstrap(diff, n_boot, seed),
                            disp, samples, meta)


def state_rows(result: SimulationResult, label: str, level: float = 0.9):
    """Long rows (time, series, statistic, value) for S, V, X: mean, band and sample paths."""
    ens = result.ensemble
    rows = []
    for name in ("S", "V", "X"):
        vals = ens.states[:, :, STATE_NAMES.index(name)]
        series = f"{label}:{name}"
        for stat, arr in band_stats(vals, level).items():
            rows += [(t, series, stat, v) for t, v in zip(ens.time_grid, arr)]
        for i in range(min(N_SAMPLE_PATHS, ens.n_particles)):
            rows += [(t, series, f"path{i}", v) for t, v in zip(ens.time_grid, vals[:, i])]
    return rows


def write_long_csv(path, rows, provenance=None):
    with open(path, "w", newline="\n") as fh:
        for k, v in sorted((provenance or {}).items()):
            fh.write(f"# {k}={v}\n")
        fh.write("time,series,statistic,value\n")
        for t, s, st, v in rows:
            fh.write(f"{float(t)!r},{s},{st},{float(v)!r}\n")


def soc_violation_fraction(result: SimulationResult, X_max: float, delta: float) -> float:
    x = result.ensemble.states[:, :, 3]
    return float(np.mean((x < -delta) | (x > X_max + delta)))

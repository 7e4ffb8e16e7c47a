import numpy as np
import pytest

from kinetic_storage import evaluate as ev
from kinetic_storage.battery import BatteryParams
from kinetic_storage.config import december_load_spec, december_price_spec
from kinetic_storage.costs import COMPONENTS, CostParams
from kinetic_storage.errors import GridMismatch, ValidationError
from kinetic_storage.models import RegimeSchedule, SeasonalOuSpec, SeasonalProfile
from kinetic_storage.policy import Policy, simulate
from kinetic_storage.problem import KineticStorageProblem

PROBLEM = KineticStorageProblem(december_price_spec(), december_load_spec())
QUIET = RegimeSchedule.constant(1e-300)


def flat_problem(horizon=6.0):
    price = SeasonalOuSpec(SeasonalProfile((np.log(0.1),)), RegimeSchedule.constant(1.0), QUIET, "log", 0.1)
    load = SeasonalOuSpec(SeasonalProfile((1.0,)), RegimeSchedule.constant(1.0), QUIET, "level", 1.0)
    bat = BatteryParams(sigma_V=1e-300, sigma_V_H=0.0, sigma_V_V=0.0, sigma_V_kappa=0.0)
    cost = CostParams(lambda_V=0.0, lambda_a=1e-9, gamma=0.0, omega=0.0, c_bat=0.0, c_con=0.0)
    return KineticStorageProblem(price, load, bat, cost, horizon=horizon)


def test_rectangle_rule_grid_cost():
    prob = flat_problem(6.0)
    res = simulate(prob, Policy("zero"), 24, 4)
    j = ev.accumulate_cost(prob, res)
    assert np.allclose(j.total[-1], 0.1 * 6.0, rtol=1e-12)
    assert np.allclose(j.total[:, 0], 0.1 * res.ensemble.time_grid, rtol=1e-12)


def test_single_step_accumulates_left_endpoint_only():
    prob = flat_problem(1e-9)
    res = simulate(prob, Policy("zero"), 1, 4)
    j = ev.accumulate_cost(prob, res)
    assert np.all(j.total[0] == 0)
    assert np.allclose(j.total[-1], 0.1 * 1e-9)


def test_terminal_enters_at_horizon_only():
    res = simulate(PROBLEM, Policy("zero"), 10, 8, seed=1)
    j = ev.accumulate_cost(PROBLEM, res)
    assert np.all(j.terminal[:-1] == 0)
    st = res.ensemble.states[-1]
    expected = -st[:, 0] * st[:, 3] + 0.005 * (st[:, 3] - st[:, 3].mean()) ** 2
    assert np.allclose(j.terminal[-1], expected)


def test_component_sum():
    res = simulate(PROBLEM, Policy("zero"), 20, 16, seed=2)
    j = ev.accumulate_cost(PROBLEM, res)
    parts = sum(getattr(j, c) for c in COMPONENTS)
    assert np.allclose(parts, j.total, rtol=1e-12)


def test_benchmark_mode_drops_ramp():
    res = simulate(PROBLEM, Policy("zero"), 10, 8, seed=3)
    res.ramp[:] = 0.7
    with_ramp = ev.accumulate_cost(PROBLEM, res)
    without = ev.accumulate_cost(PROBLEM, res, benchmark_mode=True)
    assert np.all(without.ramp == 0)
    assert np.allclose(with_ramp.ramp[-1], 0.01 * 0.49 * 24.0)
    assert np.allclose(with_ramp.total - without.total, with_ramp.ramp)


def test_identical_policies_compare_to_zero():
    res = simulate(PROBLEM, Policy("passive"), 24, 64, seed=4)
    j = ev.accumulate_cost(PROBLEM, res, benchmark_mode=True).total
    t = res.ensemble.time_grid
    rep = ev.compare((t, j), (t, j), n_boot=200)
    assert rep.mean_difference == 0 and rep.interval == (0.0, 0.0)
    assert not rep.summary()["interval_excludes_zero"]


def test_benchmark_null_self_test():
    js = []
    for seed in (5, 6):
        res = simulate(PROBLEM, Policy("passive"), 48, 512, seed=seed)
        t = res.ensemble.time_grid
        js.append(ev.accumulate_cost(PROBLEM, res, benchmark_mode=True).total)
    rep = ev.compare((t, js[0]), (t, js[1]), n_boot=2000)
    lo, hi = rep.interval
    assert lo <= 0 <= hi


def test_grid_mismatch():
    j = np.zeros((5, 4))
    with pytest.raises(GridMismatch):
        ev.compare((np.arange(5.0), j), (np.arange(5.0) * 2, j))
    with pytest.raises(GridMismatch):
        ev.compare((np.arange(5.0), j), (np.arange(5.0), np.zeros((5, 3))))
    with pytest.raises(ValidationError):
        ev.compare((np.arange(5.0), j), (np.arange(5.0), j), level=1.0)


def test_band_stats():
    vals = np.arange(1.0, 101.0)
    st = ev.band_stats(vals, 0.9)
    assert st["mean"] == 50.5 and st["median"] == 50.5
    assert st["lower"] == pytest.approx(5.95) and st["upper"] == pytest.approx(95.05)


def test_bootstrap_interval():
    diff = np.random.default_rng(0).normal(1.0, 1.0, 400)
    lo, hi = ev.paired_bootstrap(diff, 4000, seed=1)
    se = diff.std() / np.sqrt(diff.size)
    assert lo < diff.mean() < hi
    assert hi - lo == pytest.approx(2 * 1.96 * se, rel=0.1)
    assert ev.paired_bootstrap(diff, 500, seed=3) == ev.paired_bootstrap(diff, 500, seed=3)


def test_report_files(tmp_path):
    res = simulate(PROBLEM, Policy("passive"), 12, 16, seed=0)
    j = ev.accumulate_cost(PROBLEM, res, benchmark_mode=True).total
    t = res.ensemble.time_grid
    rep = ev.compare((t, j + 1.0), (t, j), n_boot=100)
    assert rep.mean_difference == pytest.approx(1.0)
    rep.to_csv(tmp_path / "r.csv", {"config_hash": "abc", "seed": 0})
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[:3] == ["# config_hash=abc", "# seed=0", "time,series,statistic,value"]
    # 4 statistics and 3 sample paths per series on 13 nodes
    assert len(lines) - 3 == 2 * 7 * 13
    rep.to_json(tmp_path / "r.json", {"seed": 0})
    assert '"interval_excludes_zero": true' in (tmp_path / "r.json").read_text()


def test_state_rows_and_soc_fraction():
    res = simulate(PROBLEM, Policy("passive"), 12, 16, seed=0)
    rows = ev.state_rows(res, "benchmark")
    assert {r[1] for r in rows} == {"benchmark:S", "benchmark:V", "benchmark:X"}
    res.ensemble.states[..., 3] = 5.0
    res.ensemble.states[2, :4, 3] = 10.4
    assert ev.soc_violation_fraction(res, 10.0, 0.5) == 0.0
    res.ensemble.states[3, :8, 3] = -1.0
    assert ev.soc_violation_fraction(res, 10.0, 0.5) == pytest.approx(8 / (13 * 16))

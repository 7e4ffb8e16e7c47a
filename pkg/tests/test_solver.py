import dataclasses

import numpy as np
import pytest
from sklearn.base import clone

from kinetic_storage import net, oracles as o, solver
from kinetic_storage.ensemble import RngStream
from kinetic_storage.errors import MissingCheckpoint, NonFiniteLoss, ValidationError

LQ = o.LqConfig(sigma=0.5, lambda_V=0.1, lambda_a=0.2, omega_T=0.3)


def small(**kw):
    base = dict(n_steps=8, n_particles=32, epochs=4, hidden=(8, 8), chunk_steps=3, pilot_particles=64,
                lr_schedule=((0.5, 1e-3), (1.0, 1e-4)))
    base.update(kw)
    return solver.TrainingConfig(**base)


def test_config_validation():
    with pytest.raises(ValidationError):
        small(lr_schedule=((0.5, 1e-4), (1.0, 1e-3)))
    with pytest.raises(ValidationError):
        small(lr_schedule=((0.5, 1e-3), (0.9, 1e-4)))
    with pytest.raises(ValidationError):
        small(n_particles=31)
    with pytest.raises(ValidationError):
        small(clip_norm=0.0)
    with pytest.raises(ValidationError):
        small(optimizer="lbfgs")


def test_stage_fractions():
    cfg = solver.TrainingConfig(epochs=10)
    assert [cfg.stage_of(e) for e in range(10)] == [0] * 6 + [1] * 3 + [2]
    assert cfg.lr_at(0) == 1e-3 and cfg.lr_at(9) == 1e-5


def test_zero_epochs_keeps_initial_weights(tmp_path):
    cfg = small(epochs=0)
    p, _, trace = solver.train(o.LqProblem(LQ), cfg, out_dir=str(tmp_path))
    assert np.array_equal(p.flatten(), net.init_params((8, 8), seed=0).flatten())
    assert len(trace) == 0
    assert sorted(f.name for f in tmp_path.iterdir()) == ["final.ckpt", "initial.ckpt"]


def test_zero_output_layer_gives_zero_ramp():
    p = net.init_params((8, 8), seed=1)
    p.weights[-1] = np.zeros_like(p.weights[-1])
    res = solver.rollout(p, net.InputScaler(), o.LqProblem(LQ), small())
    assert np.all(res.ramp == 0)
    assert np.all(res.zeta == 0)


def test_self_consistent_constant_field_has_zero_loss():
    prob = o.LqProblem(o.LqConfig(sigma=1.0, lambda_V=0.0, lambda_a=1.0, omega_T=0.0))
    p = net.init_params((8,), seed=2)
    p.weights[-1] = np.zeros_like(p.weights[-1])
    r = solver.epoch_gradient(p, net.InputScaler(), prob, small(), 0)
    assert r.loss == 0.0
    assert all(np.all(g == 0) for g in r.grads)


def test_loss_homogeneity():
    p = net.init_params((8, 8), seed=3)
    sc = net.InputScaler(shift=np.zeros(5), scale=np.ones(5), out_shift=0.1, out_scale=0.5)
    double = dataclasses.replace(sc, out_shift=0.2, out_scale=1.0)
    cfg2 = o.LqConfig(sigma=LQ.sigma, lambda_V=2 * LQ.lambda_V, lambda_a=2 * LQ.lambda_a,
                      omega_T=2 * LQ.omega_T)
    cfg = small()
    a = solver.epoch_gradient(p, sc, o.LqProblem(LQ), cfg, 0)
    b = solver.epoch_gradient(p, double, o.LqProblem(cfg2), cfg, 0)
    assert b.loss == pytest.approx(4 * a.loss, rel=1e-12)
    assert np.array_equal(a.flow, b.flow)


def test_chunking_does_not_change_loss_or_gradient():
    p = net.init_params((8, 8), seed=4)
    prob = o.LqProblem(LQ)
    sc = solver.fit_scaler(prob, small())
    a = solver.epoch_gradient(p, sc, prob, small(chunk_steps=1), 2)
    b = solver.epoch_gradient(p, sc, prob, small(chunk_steps=8), 2)
    assert a.loss == pytest.approx(b.loss, rel=1e-12)
    for ga, gb in zip(a.grads, b.grads):
        assert np.allclose(ga, gb, rtol=1e-10, atol=1e-15)


def test_gradient_matches_finite_differences():
    prob = o.LqProblem(LQ)
    cfg = small(n_steps=3, n_particles=8, hidden=(4,))
    p = net.init_params((4,), seed=5)
    sc = solver.fit_scaler(prob, cfg)
    res = solver.epoch_gradient(p, sc, prob, cfg, 0)
    theta = p.flatten()
    g = np.concatenate([a.ravel() for a in res.grads])
    # the states are frozen, so the reference perturbs weights in the loss but not in the rollout
    rng = np.random.default_rng(0)
    for i in rng.choice(theta.size, 6, replace=False):
        h = 1e-6
        loss = []
        for s in (h, -h):
            th = theta.copy()
            th[i] += s
            loss.append(_frozen_loss(net.MlpParams.from_flat(p.sizes, th), p, sc, prob, cfg))
        assert (loss[0] - loss[1]) / (2 * h) == pytest.approx(g[i], rel=1e-5, abs=1e-10)


def _frozen_loss(q, p, sc, prob, cfg):
    """Loss of weights ``q`` along the paths generated by ``p``."""
    res = solver.rollout(p, sc, prob, cfg)
    ens = res.ensemble
    dt = ens.dt
    sig = lambda k: prob.sigma_diag(ens.time_grid[k], ens.states[k], 0.0)
    total = 0.0
    ys, zs = [], []
    for k in range(ens.n_steps + 1):
        y, z = net.value_and_zeta(q, sc, ens.time_grid[k], ens.states[k], sig(k))
        ys.append(y)
        zs.append(z)
    for k in range(ens.n_steps):
        a = prob.ramp(ens.time_grid[k], ens.states[k], zs[k][:, 2], 0.0)
        f = prob.running_cost(ens.time_grid[k], ens.states[k], a, (0.0, 0.0, 0.0))
        r = ys[k + 1] - ys[k] + f * dt - (zs[k] * res.noise[k] * np.sqrt(dt)).sum(axis=1)
        total += np.mean(r * r)
    g = prob.terminal_cost(ens.states[-1], 0.0)
    return total + np.mean((ys[-1] - g) ** 2) + np.mean((zs[-1] ** 2).sum(axis=1))


def test_exact_field_mismatch_is_first_order():
    # one Euler step of the Riccati field: the RMS mismatch halves with the step
    cfg = o.LqConfig(sigma=1.0, lambda_V=1.0, lambda_a=0.5, omega_T=1.0)
    sol, prob = o.riccati(cfg), o.LqProblem(cfg)
    z = prob.initial_states(200_000, RngStream(0), 0)
    xi = RngStream(0).path_normals(0, 1, 200_000)[0]

    def rms(dt):
        P, _ = sol.at(0.0)
        zeta = cfg.sigma * 2 * (P[0, 0] * z[:, 2] + P[0, 1] * z[:, 3])
        a = prob.ramp(0.0, z, zeta, 0.0)
        nxt = prob.advance(0.0, z, a, 0.0, xi, dt)
        y0 = o.lq_value(cfg, 0.0, z[:, 2], z[:, 3], sol)
        y1 = o.lq_value(cfg, dt, nxt[:, 2], nxt[:, 3], sol)
        r = y1 - y0 + prob.running_cost(0.0, z, a, None) * dt - zeta * np.sqrt(dt) * xi[:, 2]
        return np.sqrt(np.mean(r * r))

    assert rms(0.05) / rms(0.1) == pytest.approx(0.5, abs=0.05)


def test_trace_components_sum():
    _, _, trace = solver.train(o.LqProblem(LQ), small(epochs=3))
    parts = trace.column("path_loss") + trace.column("terminal_value_loss") + trace.column("terminal_gradient_loss")
    assert np.allclose(parts, trace.column("loss"), rtol=1e-9)
    assert np.isnan(trace.column("picard")[0]) and np.all(trace.column("picard")[1:] >= 0)
    assert list(trace.column("lr")) == [1e-3, 1e-4, 1e-4]


def test_training_is_deterministic(tmp_path):
    cfg = small(epochs=3)
    runs = [solver.train(o.LqProblem(LQ), cfg) for _ in range(2)]
    assert np.array_equal(runs[0][0].flatten(), runs[1][0].flatten())
    for k, (_, _, tr) in enumerate(runs):
        tr.to_csv(tmp_path / f"t{k}.csv", {"seed": 0})
    assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()


def test_resume_is_bit_identical(tmp_path):
    cfg = small(epochs=4)
    full, _, trace = solver.train(o.LqProblem(LQ), cfg, out_dir=str(tmp_path / "a"))
    assert (tmp_path / "a" / "stage1.ckpt").exists()
    resumed, _, tail = solver.train(o.LqProblem(LQ), cfg, resume=str(tmp_path / "a" / "stage1.ckpt"))
    assert np.array_equal(full.flatten(), resumed.flatten())
    assert tail.column("loss").tolist() == trace.column("loss")[2:].tolist()


class FlakyLq(o.LqProblem):
    """Blows up on the first ``fail`` calls to ``advance``."""

    def __init__(self, fail):
        super().__init__(LQ)
        object.__setattr__(self, "calls", [0, fail])

    def advance(self, t, states, a, mean_V, xi, dt):
        self.calls[0] += 1
        if self.calls[0] <= self.calls[1]:
            return np.full_like(states, np.nan)
        return super().advance(t, states, a, mean_V, xi, dt)


def test_divergence_retry_halves_lr():
    _, _, trace = solver.train(FlakyLq(1), small(epochs=2), scaler=net.InputScaler())
    assert len(trace) == 2
    assert trace.column("lr").tolist() == [5e-4, 5e-5]


def test_divergence_gives_up_after_three_retries():
    with pytest.raises(NonFiniteLoss):
        solver.train(FlakyLq(10**6), small(epochs=2), scaler=net.InputScaler())


def test_loss_decreases_on_lq():
    cfg = small(n_steps=20, n_particles=128, epochs=200, hidden=(16, 16), chunk_steps=10,
                lr_schedule=((0.6, 3e-3), (1.0, 1e-3)))
    _, _, trace = solver.train(o.LqProblem(o.LqConfig()), cfg)
    loss = trace.column("loss")
    assert loss[-10:].mean() < 0.1 * loss[0]


def test_martingale_residuals_of_constant_field():
    prob = o.LqProblem(o.LqConfig(sigma=1.0, lambda_V=0.0, lambda_a=1.0, omega_T=0.0))
    p = net.init_params((8,), seed=2)
    p.weights[-1] = np.zeros_like(p.weights[-1])
    mean, se = solver.martingale_residuals(solver.rollout(p, net.InputScaler(), prob, small()), prob)
    assert np.all(mean == 0) and np.all(se == 0)


def test_estimator_wrapper():
    est = solver.FBSDEController(n_steps=4, n_particles=16, epochs=1, hidden=(4,), chunk_steps=2)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(MissingCheckpoint):
        est.predict(0.0, np.zeros((1, 4)))
    est.fit(o.LqProblem(LQ))
    z = np.array([[1.0, 0.0, 0.2, -0.3], [1.0, 0.0, -0.1, 0.4]])
    assert est.predict(0.0, z).shape == (2,)
    assert est.control(0.0, z).shape == (2,)
    assert len(est.trace_) == 1

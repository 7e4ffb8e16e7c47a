"""Deep BSDE training of the decoupling field.

Each epoch simulates the particle system forward with the current network as
a frozen feedback policy and, on the way, records the network's value and
``zeta`` on a tape.  The loss

    sum_n mean_p (Y_{n+1} - Y_n + f_n dt - zeta_n . dW_n)^2
        + mean_p (Y_N - g)^2 + mean_p |zeta_N - grad g sigma|^2

is differentiated with respect to the weights only; the states are plain
arrays.  Steps are processed in chunks with one tape per chunk, and the chunk
gradients are summed, which keeps memory flat in the horizon.
"""
from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from . import net
from .ensemble import RngStream, batch_means, picard_diagnostic, vx_flow
from .errors import MissingCheckpoint, NonFiniteLoss, NonFiniteState, ValidationError
from .policy import Policy, PolicyKind, act, simulate, time_grid
from .problem import ControlProblem

TRACE_FIELDS = ("epoch", "lr", "loss", "path_loss", "terminal_value_loss",
                "terminal_gradient_loss", "grad_norm", "picard")


@dataclass
class TrainingConfig:
    n_steps: int = 150
    n_particles: int = 512
    epochs: int = 300
    lr_schedule: tuple = ((0.6, 1e-3), (0.9, 1e-4), (1.0, 1e-5))
    clip_norm: float = 1.0
    antithetic: bool = True
    freeze_paths: bool = False
    master_seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    hidden: tuple = net.DESK_HIDDEN
    chunk_steps: int = 10
    literal_sigma: bool = False
    pilot_particles: int = 2048

    def __post_init__(self):
        self.lr_schedule = tuple((float(b), float(lr)) for b, lr in self.lr_schedule)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.n_steps < 1 or self.n_particles < 2 or self.epochs < 0:
            raise ValidationError("need n_steps >= 1, n_particles >= 2, epochs >= 0")
        if self.antithetic and self.n_particles % 2:
            raise ValidationError("antithetic sampling needs an even particle count")
        if not self.lr_schedule:
            raise ValidationError("empty learning-rate schedule")
        bounds = [b for b, _ in self.lr_schedule]
        rates = [lr for _, lr in self.lr_schedule]
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])) or not 0 < bounds[0] or bounds[-1] != 1.0:
            raise ValidationError("stage boundaries must increase to 1.0")
        if any(lr <= 0 for lr in rates) or any(b > a for a, b in zip(rates, rates[1:])):
            raise ValidationError("learning rates must be positive and non-increasing")
        if not self.clip_norm > 0:
            raise ValidationError("clip_norm must be positive")
        if self.optimizer not in ("adam", "momentum"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.chunk_steps < 1:
            raise ValidationError("chunk_steps must be >= 1")

    def stage_of(self, epoch: int) -> int:
        """Stage index of a 0-based epoch; boundaries are fractions of ``epochs``."""
        frac = (epoch + 0.5) / max(self.epochs, 1)
        for k, (b, _) in enumerate(self.lr_schedule):
            if frac < b:
                return k
        return len(self.lr_schedule) - 1

    def lr_at(self, epoch: int) -> float:
        return self.lr_schedule[self.stage_of(epoch)][1]

    def to_dict(self):
        d = asdict(self)
        d["lr_schedule"] = [list(s) for s in self.lr_schedule]
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainingTrace:
    rows: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def append(self, row: dict, seconds: float):
        self.rows.append(row)
        self.wall_time.append(seconds)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path, provenance: dict | None = None):
        """Wall time is left out so that reruns give identical files."""
        with open(path, "w", newline="\n") as fh:
            for k, v in sorted((provenance or {}).items()):
                fh.write(f"# {k}={v}\n")
            fh.write(",".join(TRACE_FIELDS) + "\n")
            for r in self.rows:
                fh.write(",".join(_fmt(r[k]) for k in TRACE_FIELDS) + "\n")


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# loss ------------------------------------------------------------------------

@dataclass
class EpochResult:
    loss: float
    parts: dict
    grads: list
    flow: np.ndarray


def _taped_eval(leaves, sizes, scaler, problem, t, states, mean_V, literal_sigma):
    q = net.MlpParams.from_arrays(sizes, leaves)
    sig = problem.sigma_diag(t, states, mean_V)
    return net.value_and_zeta(q, scaler, t, states, sig, literal_sigma)


def epoch_gradient(params: net.MlpParams, scaler: net.InputScaler, problem: ControlProblem,
                   config: TrainingConfig, epoch: int, need_grad: bool = True) -> EpochResult:
    """One forward pass of the particle system plus the loss and its weight gradient."""
    N, n = config.n_steps, config.n_particles
    dt = problem.horizon / N
    grid = time_grid(problem.horizon, N)
    key = 0 if config.freeze_paths else epoch
    stream = RngStream(config.master_seed)
    noise = stream.path_normals(key, N, n, antithetic=config.antithetic)
    states = problem.initial_states(n, stream, key)
    flow = np.empty((N + 1, n, 2))
    flow[0] = states[:, 2:4]
    grads = [np.zeros_like(a) for a in params.arrays()]
    parts = {"path": 0.0, "terminal_value": 0.0, "terminal_gradient": 0.0}
    sqdt = np.sqrt(dt)
    for n0 in range(0, N, config.chunk_steps):
        n1 = min(n0 + config.chunk_steps, N)
        with ad.Tape() as tape:
            leaves = [tape.variable(a) for a in params.arrays()]
            means = batch_means(states)
            y, zeta = _taped_eval(leaves, params.sizes, scaler, problem, grid[n0], states, means[0],
                                  config.literal_sigma)
            chunk_terms = []
            for k in range(n0, n1):
                t = grid[k]
                a = problem.ramp(t, states, zeta[..., 2], means[0])
                f = problem.running_cost(t, states, a, means)
                nxt = problem.advance(t, states, a.value if isinstance(a, ad.Var) else a,
                                      means[0], noise[k], dt)
                if not np.all(np.isfinite(nxt)):
                    raise NonFiniteState(f"non-finite state at step {k + 1}")
                next_means = batch_means(nxt)
                y1, zeta1 = _taped_eval(leaves, params.sizes, scaler, problem, grid[k + 1], nxt,
                                        next_means[0], config.literal_sigma)
                r = y1 - y + f * dt - (zeta * (noise[k] * sqdt)).sum(axis=-1)
                chunk_terms.append((r * r).mean())
                states, means, y, zeta = nxt, next_means, y1, zeta1
                flow[k + 1] = states[:, 2:4]
            path = chunk_terms[0]
            for term in chunk_terms[1:]:
                path = path + term
            total = path
            parts["path"] += float(path.value)
            if n1 == N:
                g = problem.terminal_cost(states, means[1])
                target = problem.terminal_zeta(states, means[1], means[0])
                tv = ((y - g) * (y - g)).mean()
                dz = zeta - target
                tg = (dz * dz).sum(axis=-1).mean()
                total = total + tv + tg
                parts["terminal_value"] = float(tv.value)
                parts["terminal_gradient"] = float(tg.value)
            if need_grad:
                for acc, g_ in zip(grads, tape.gradient(total, leaves)):
                    acc += g_
    loss = parts["path"] + parts["terminal_value"] + parts["terminal_gradient"]
    return EpochResult(loss, parts, grads, flow)


# optimisers ------------------------------------------------------------------

class _Optimizer:
    def __init__(self, kind, size, momentum=0.9, beta2=0.999, eps=1e-8):
        self.kind, self.momentum, self.beta2, self.eps = kind, momentum, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.count = 0

    def step(self, theta, g, lr):
        self.count += 1
        if self.kind == "momentum":
            self.m = self.momentum * self.m + g
            return theta - lr * self.m
        b1 = self.momentum
        self.m = b1 * self.m + (1 - b1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mh = self.m / (1 - b1**self.count)
        vh = self.v / (1 - self.beta2**self.count)
        return theta - lr * mh / (np.sqrt(vh) + self.eps)

    def state(self):
        return {"m": self.m.copy(), "v": self.v.copy(), "count": self.count}

    def restore(self, s):
        self.m, self.v, self.count = s["m"].copy(), s["v"].copy(), s["count"]


# training --------------------------------------------------------------------

def fit_scaler(problem: ControlProblem, config: TrainingConfig) -> net.InputScaler:
    """Input standardisation and output offset from a zero-ramp pilot run."""
    res = simulate(problem, Policy(PolicyKind.ZERO), config.n_steps, config.pilot_particles,
                   seed=config.master_seed, epoch=2**31, antithetic=config.antithetic)
    ens = res.ensemble
    g = problem.terminal_cost(ens.states[-1], ens.mean_X[-1])
    dt = ens.dt
    run = np.zeros(ens.n_particles)
    for k in range(ens.n_steps):
        run += problem.running_cost(ens.time_grid[k], ens.states[k], res.ramp[k],
                                    (ens.mean_V[k], ens.mean_X[k], ens.mean_HV[k])) * dt
    total = run + g
    scale = float(np.std(total))
    if not scale > 1e-12:
        scale = max(float(np.abs(total).mean()), 1.0)
    t = np.repeat(ens.time_grid, ens.n_particles)
    return net.InputScaler.fit(t, ens.states.reshape(-1, 4), out_shift=float(np.mean(total)),
                               out_scale=scale, floor=problem.scale_floor())


def _global_clip(g, clip):
    norm = float(np.linalg.norm(g))
    return (g * (clip / norm) if norm > clip else g), norm


def _segments(opt: _Optimizer):
    return {"adam_m": opt.m, "adam_v": opt.v}


def train(problem: ControlProblem, config: TrainingConfig, params: net.MlpParams | None = None,
          scaler: net.InputScaler | None = None, out_dir: str | None = None,
          resume: str | None = None, metadata: dict | None = None, callback=None):
    """Run the training loop.  Returns ``(params, scaler, trace)``.

    With ``out_dir`` a checkpoint is written at the end of every stage and as
    ``final.ckpt``.  ``resume`` continues from a checkpoint written by this
    function, optimiser state included.
    """
    start_epoch = 0
    lr_factor = 1.0
    opt = None
    if resume is not None:
        params, scaler, header, segs = net.load_checkpoint(resume)
        start_epoch = int(header["epoch"])
        meta = header.get("metadata", {})
        lr_factor = float(meta.get("lr_factor", 1.0))
        opt = _Optimizer(config.optimizer, params.n_params, config.momentum)
        if "adam_m" in segs:
            opt.restore({"m": segs["adam_m"], "v": segs["adam_v"], "count": int(meta.get("opt_count", 0))})
    if params is None:
        params = net.init_params(config.hidden, seed=config.master_seed)
    if scaler is None:
        scaler = fit_scaler(problem, config)
    if opt is None:
        opt = _Optimizer(config.optimizer, params.n_params, config.momentum)
    trace = TrainingTrace()
    meta_base = dict(metadata or {})

    def save(name, epoch):
        if out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        meta = dict(meta_base, lr_factor=lr_factor, opt_count=opt.count)
        net.save_checkpoint(os.path.join(out_dir, name), params, scaler, config.master_seed, epoch,
                            _segments(opt), meta)

    if start_epoch == 0:
        save("initial.ckpt", 0)
    theta = params.flatten()
    good = (theta.copy(), opt.state())
    prev_flow = None
    failures = 0
    epoch = start_epoch
    while epoch < config.epochs:
        t0 = time.perf_counter()
        lr = config.lr_at(epoch) * lr_factor
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                res = epoch_gradient(params, scaler, problem, config, epoch)
            g = np.concatenate([a.ravel() for a in res.grads])
            if not (np.isfinite(res.loss) and np.all(np.isfinite(g))):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}")
        except (NonFiniteLoss, NonFiniteState):
            failures += 1
            if failures > 3:
                raise NonFiniteLoss(f"training diverged at epoch {epoch} after 3 retries")
            theta = good[0].copy()
            opt.restore(good[1])
            params = net.MlpParams.from_flat(params.sizes, theta)
            lr_factor *= 0.5
            continue
        good = (theta.copy(), opt.state())
        g, norm = _global_clip(g, config.clip_norm)
        theta = opt.step(theta, g, lr)
        params = net.MlpParams.from_flat(params.sizes, theta)
        pic = picard_diagnostic(prev_flow, res.flow) if prev_flow is not None else float("nan")
        prev_flow = res.flow
        row = {"epoch": epoch + 1, "lr": lr, "loss": res.loss, "path_loss": res.parts["path"],
               "terminal_value_loss": res.parts["terminal_value"],
               "terminal_gradient_loss": res.parts["terminal_gradient"], "grad_norm": norm,
               "picard": pic}
        trace.append(row, time.perf_counter() - t0)
        if callback is not None:
            callback(row)
        epoch += 1
        if epoch < config.epochs and config.stage_of(epoch) != config.stage_of(epoch - 1):
            save(f"stage{config.stage_of(epoch - 1) + 1}.ckpt", epoch)
    if config.epochs > start_epoch:
        save(f"stage{config.stage_of(config.epochs - 1) + 1}.ckpt", config.epochs)
    save("final.ckpt", max(config.epochs, start_epoch))
    return params, scaler, trace


def rollout(params, scaler, problem, config: TrainingConfig, epoch: int = 0):
    """Forward simulation under the network's feedback; returns a :class:`SimulationResult`."""
    pol = Policy(PolicyKind.NEURAL, params, scaler, config.literal_sigma)
    return simulate(problem, pol, config.n_steps, config.n_particles, seed=config.master_seed,
                    epoch=epoch, antithetic=config.antithetic)


def martingale_residuals(result, problem):
    """Per-step mean and standard error of ``Y_{n+1} - Y_n + f_n dt`` along a neural rollout."""
    ens = result.ensemble
    dt = ens.dt
    means, ses = [], []
    for k in range(ens.n_steps):
        f = problem.running_cost(ens.time_grid[k], ens.states[k], result.ramp[k],
                                 (ens.mean_V[k], ens.mean_X[k], ens.mean_HV[k]))
        d = result.y[k + 1] - result.y[k] + f * dt
        means.append(d.mean())
        ses.append(d.std(ddof=1) / np.sqrt(d.size))
    return np.array(means), np.array(ses)


class FBSDEController(BaseEstimator):
    """Estimator wrapper: ``fit(problem)`` trains, ``predict`` evaluates ``u(t, z)``."""

    def __init__(self, n_steps=150, n_particles=512, epochs=300, lr_schedule=((0.6, 1e-3), (0.9, 1e-4), (1.0, 1e-5)),
                 clip_norm=1.0, antithetic=True, freeze_paths=False, master_seed=0, optimizer="adam",
                 hidden=net.DESK_HIDDEN, chunk_steps=10, literal_sigma=False):
        self.n_steps = n_steps
        self.n_particles = n_particles
        self.epochs = epochs
        self.lr_schedule = lr_schedule
        self.clip_norm = clip_norm
        self.antithetic = antithetic
        self.freeze_paths = freeze_paths
        self.master_seed = master_seed
        self.optimizer = optimizer
        self.hidden = hidden
        self.chunk_steps = chunk_steps
        self.literal_sigma = literal_sigma

    def config(self) -> TrainingConfig:
        return TrainingConfig(**self.get_params())

    def fit(self, problem: ControlProblem, y=None, out_dir=None):
        self.problem_ = problem
        self.params_, self.scaler_, self.trace_ = train(problem, self.config(), out_dir=out_dir)
        return self

    def _check(self):
        if not hasattr(self, "params_"):
            raise MissingCheckpoint("controller is not fitted")

    def predict(self, t, states):
        self._check()
        return net.forward(self.params_, self.scaler_, t, np.asarray(states, dtype=float))

    def control(self, t, states):
        """Feedback ramp at ``(t, states)`` using the batch's own mean power."""
        self._check()
        states = np.asarray(states, dtype=float)
        pol = Policy(PolicyKind.NEURAL, self.params_, self.scaler_, self.literal_sigma)
        return act(pol, self.problem_, t, states, float(states[..., 2].mean()))["a"]

    def policy(self) -> Policy:
        self._check()
        return Policy(PolicyKind.NEURAL, self.params_, self.scaler_, self.literal_sigma)

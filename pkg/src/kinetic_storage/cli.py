"""Command-line entry point: ``kinetic-storage <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 invalid input.  Errors are
reported on stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, evaluate, net, policy, solver, suites
from .calibrate import ObservedSeries, calibrate
from .config import RunConfig, config_hash
from .errors import KineticStorageError, ValidationError

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


def read_series_csv(path, kind):
    """Read a ``t_hours,value`` file; errors name the offending line."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        t, v = np.empty(0), np.empty(0)
        return ObservedSeries(t, v, kind)
    if [c.strip() for c in rows[0]] != ["t_hours", "value"]:
        raise ValidationError(f"{path}:1: header must be 't_hours,value'")
    t, v = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        try:
            t.append(float(row[0]))
            v.append(float(row[1]))
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        if kind == "price" and not v[-1] > 0:
            raise ValidationError(f"{path}:{lineno}: non-positive price {row[1]}")
    return ObservedSeries(np.array(t), np.array(v), kind)


def _file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def _write_json(path, obj):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


# subcommands -----------------------------------------------------------------

def cmd_calibrate(args):
    series = read_series_csv(args.input, args.kind)
    report = calibrate(series, degree=args.degree)
    prov = {"config_hash": config_hash({"input_sha256": _file_digest(args.input), "kind": args.kind,
                                        "degree": args.degree}),
            "master_seed": args.seed}
    _write_json(args.out, dict(report.to_dict(), provenance=prov))


def cmd_init_config(args):
    rc = RunConfig(seed=args.seed)
    rc.save(args.out)


def _load_config(args):
    rc = RunConfig.from_file(args.config)
    if getattr(args, "epochs", None) is not None:
        rc.training.epochs = args.epochs
    return rc


def cmd_train(args):
    rc = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    prov = rc.provenance()
    rc.save(os.path.join(args.out, "run_config.json"))
    _, _, trace = solver.train(rc.problem(), rc.training, out_dir=args.out, resume=args.resume,
                               metadata=prov)
    trace.to_csv(os.path.join(args.out, "trace.csv"), prov)


def _policy(kind, checkpoint, literal_sigma):
    if kind == "neural":
        if not checkpoint:
            raise ValidationError("--checkpoint is required for the neural policy")
        return policy.Policy.from_checkpoint(checkpoint, literal_sigma)
    return policy.Policy(kind)


def _simulate(rc, pol):
    return policy.simulate(rc.problem(), pol, rc.training.n_steps, rc.evaluation.n_particles,
                           seed=rc.seed, epoch=rc.evaluation.epoch, antithetic=rc.training.antithetic)


def _cost_rows(label, result, breakdown, level):
    rows = []
    grid = result.ensemble.time_grid
    for name, arr in breakdown.as_dict().items():
        series = f"{label}:J" if name == "total" else f"{label}:J_{name}"
        stats = evaluate.band_stats(arr, level) if name == "total" else {"mean": arr.mean(axis=-1)}
        for stat, vals in stats.items():
            rows += [(t, series, stat, v) for t, v in zip(grid, vals)]
    return rows


def cmd_evaluate(args):
    rc = _load_config(args)
    kind = args.policy or rc.policy.value
    pol = _policy(kind, args.checkpoint, rc.literal_sigma)
    res = _simulate(rc, pol)
    costs_ = evaluate.accumulate_cost(rc.problem(), res, benchmark_mode=(kind == "passive"))
    os.makedirs(args.out, exist_ok=True)
    prov = rc.provenance()
    level = rc.evaluation.band_level
    evaluate.write_long_csv(os.path.join(args.out, "costs.csv"), _cost_rows(kind, res, costs_, level), prov)
    evaluate.write_long_csv(os.path.join(args.out, "states.csv"), evaluate.state_rows(res, kind, level), prov)
    j = costs_.total[-1]
    summary = {"policy": kind, "mean_J_T": float(j.mean()), "median_J_T": float(np.median(j)),
               "finite": bool(np.all(np.isfinite(costs_.total))),
               "soc_violation_fraction": evaluate.soc_violation_fraction(res, rc.battery.X_max, rc.battery.delta),
               "band_level": level, "provenance": prov}
    _write_json(os.path.join(args.out, "summary.json"), summary)


def cmd_compare(args):
    rc = _load_config(args)
    problem = rc.problem()
    runs = []
    for kind, ckpt in ((args.policy, args.checkpoint), (args.benchmark, args.benchmark_checkpoint)):
        res = _simulate(rc, _policy(kind, ckpt, rc.literal_sigma))
        runs.append((kind, res, evaluate.accumulate_cost(problem, res, benchmark_mode=(kind == "passive"))))
    (ka, ra, ca), (kb, rb, cb) = runs
    labels = ("controlled", "benchmark")
    report = evaluate.compare((ra.ensemble.time_grid, ca.total), (rb.ensemble.time_grid, cb.total),
                              level=rc.evaluation.band_level, n_boot=rc.evaluation.bootstrap_resamples,
                              seed=rc.seed, labels=labels)
    report.metadata.update({"controlled_policy": ka, "benchmark_policy": kb})
    os.makedirs(args.out, exist_ok=True)
    prov = rc.provenance()
    report.to_csv(os.path.join(args.out, "comparison.csv"), prov)
    report.to_json(os.path.join(args.out, "comparison.json"), prov)
    rows = (evaluate.state_rows(ra, labels[0], rc.evaluation.band_level)
            + evaluate.state_rows(rb, labels[1], rc.evaluation.band_level))
    evaluate.write_long_csv(os.path.join(args.out, "states.csv"), rows, prov)


def cmd_oracle(args):
    result = suites.SUITES[args.suite](seed=args.seed)
    result["provenance"] = {"config_hash": config_hash({"suite": args.suite}), "master_seed": args.seed}
    _write_json(args.out, result)
    return EXIT_OK if result["passed"] else EXIT_RUNTIME


# plumbing --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="kinetic-storage",
                                description="Mean-field kinetic battery control with a deep BSDE solver.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="fit a seasonal OU model to a t_hours,value CSV")
    c.add_argument("--input", required=True)
    c.add_argument("--kind", choices=("price", "load"), required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--degree", type=int, default=2)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_calibrate)

    c = sub.add_parser("init-config", help="write the default run configuration")
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_init_config)

    c = sub.add_parser("train", help="train the decoupling field")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--epochs", type=int)
    c.add_argument("--resume")
    c.set_defaults(func=cmd_train)

    c = sub.add_parser("evaluate", help="simulate one policy and export cost/state statistics")
    c.add_argument("--config", required=True)
    c.add_argument("--policy", choices=("passive", "neural", "zero"))
    c.add_argument("--checkpoint")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="paired comparison of a policy against a benchmark")
    c.add_argument("--config", required=True)
    c.add_argument("--policy", choices=("passive", "neural", "zero"), default="neural")
    c.add_argument("--checkpoint")
    c.add_argument("--benchmark", choices=("passive", "neural", "zero"), default="passive")
    c.add_argument("--benchmark-checkpoint")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    c = sub.add_parser("oracle", help="run an analytic self-check suite")
    c.add_argument("--suite", choices=sorted(suites.SUITES), required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_oracle)
    return p


def _fail(exc, code):
    json.dump({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        return _fail(exc, EXIT_INPUT)
    except (KineticStorageError, FloatingPointError, OSError) as exc:
        return _fail(exc, EXIT_RUNTIME)
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry points: generate, train, evaluate, analyze, field.

Exit codes: 0 success, 2 invalid usage or input, 3 file I/O failure,
4 numerical abort.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import sys

import numpy as np

from . import __version__
from . import variational as vi
from .analysis import NORMALIZATIONS, analyze
from .config import RunConfig, preset
from .dynamics import Dataset, SystemSpec, ground_truth_hamiltonian, recipe_for, sample_dataset
from .exceptions import NumericError, TrainingAborted

log = logging.getLogger("noether_razor")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
SCHEMA_VERSION = "1"


class UsageError(Exception):
    pass


def _system_from_args(args):
    kind = args.system
    if kind == "sho":
        return SystemSpec("sho")
    if kind == "nharm":
        return SystemSpec("nharm", n=args.n or 3)
    return SystemSpec("nbody", n=args.n or 3, d=args.dim or 2)


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_json(path, doc):
    _write_text(path, json.dumps(doc, indent=2) + "\n")


def cmd_generate(args):
    spec = _system_from_args(args)
    recipe = recipe_for(spec, args.variant)
    overrides = {}
    if args.trajectories is not None:
        overrides["n_traj"] = args.trajectories
    if args.points is not None:
        overrides["points_per_traj"] = args.points
    if args.dt is not None:
        overrides["dt"] = args.dt
    if overrides:
        recipe = dataclasses.replace(recipe, **overrides)
    data = sample_dataset(spec, recipe, args.seed)
    data.metadata["variant"] = args.variant
    data.save(args.out)
    print(f"pairs: {len(data)}")
    print(f"system: {spec.kind} phase_dim={spec.phase_dim} dt={recipe.dt} "
          f"trajectories={recipe.n_traj} points={recipe.points_per_traj} seed={args.seed}")
    for key, value in sorted(data.metadata.items()):
        print(f"  {key}: {value}")
    return EXIT_OK


def _resolve_run_config(args, data):
    if args.system:
        spec = _system_from_args(args)
        if data.system is not None and spec != data.system:
            raise UsageError(f"--system {spec} does not match the data's {data.system}")
        data.system = spec
    if args.config:
        rc = RunConfig.load(args.config)
        if data.system is not None and rc.system != data.system:
            raise UsageError(f"config system {rc.system} does not match the data's {data.system}")
    else:
        kind = data.system.kind if data.system is not None else "sho"
        rc = preset(kind, args.preset, n=data.system.n if data.system is not None else None)
        if data.system is not None:
            rc.system = data.system
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        rc.train = dataclasses.replace(rc.train, **changes)
    if data.system is not None and data.system.phase_dim != data.phase_dim:
        raise UsageError("dataset dimension does not match its system spec")
    return rc


def cmd_train(args):
    data = Dataset.load(args.data)
    rc = _resolve_run_config(args, data)
    every = max(1, args.log_every)

    def progress(epoch, rec):
        if epoch % every == 0 or epoch == rc.train.epochs - 1:
            log.info("epoch %d  -ELBO/N %.6g  NLL/N %.6g  KL/N %.6g  sigma2 %.3g", epoch,
                     rec["neg_elbo"], rec["nll"], rec["kl"], rec["sigma2"])

    try:
        ckpt = vi.train(data, rc.train, progress=progress)
    except TrainingAborted as exc:
        path = args.out + ".last_good.json"
        if exc.last_good is not None:
            exc.last_good.run_config = rc.to_dict()
            exc.last_good.save(path)
        print(f"training aborted: {exc}; last good checkpoint: {path}", file=sys.stderr)
        return EXIT_NUMERIC
    ckpt.run_config = rc.to_dict()
    ckpt.save(args.out)
    m = ckpt.metrics
    # full precision so the three ELBO columns can be checked against each other
    print(f"{'mode':<8}{'Train MSE':>14}{'NLL/N':>24}{'KL/N':>24}{'-ELBO/N':>24}")
    print(f"{rc.train.mode:<8}{m['train_mse']:>14.6g}{m['nll_per_n']:>24.16g}"
          f"{m['kl_per_n']:>24.16g}{m['neg_elbo_per_n']:>24.16g}")
    return EXIT_OK


def cmd_evaluate(args):
    ckpt = vi.Checkpoint.load(args.checkpoint)
    S = args.S if args.S is not None else ckpt.config.S_eval
    seed = args.seed if args.seed is not None else ckpt.config.seed
    results = []
    for path in args.data:
        data = Dataset.load(path)
        if data.phase_dim != ckpt.architecture.input_dim:
            raise UsageError(f"{path}: phase dimension {data.phase_dim} does not match "
                             f"the model's {ckpt.architecture.input_dim}")
        mse = vi.test_mse(ckpt, data, S=S, seed=seed, weight_samples=args.weight_samples)
        results.append({"data": path, "variant": data.metadata.get("variant"),
                        "n_pairs": len(data), "test_mse": mse})
        print(f"{path}: Test MSE {mse:.6g} ({len(data)} pairs)")
    doc = {"schema_version": SCHEMA_VERSION, "checkpoint": args.checkpoint, "S": S,
           "seed": seed, "weight_samples": args.weight_samples, "config": ckpt.config.to_dict(),
           "run_config": ckpt.run_config,
           "results": results}
    if args.out:
        _write_json(args.out, doc)
    return EXIT_OK


def cmd_analyze(args):
    ckpt = vi.Checkpoint.load(args.checkpoint)
    if args.system:
        spec = _system_from_args(args)
    elif ckpt.system is not None:
        spec = ckpt.system
    else:
        raise UsageError("checkpoint has no system; pass --system")
    if spec.phase_dim != ckpt.bank.phase_dim:
        raise UsageError("system dimension does not match the checkpoint")
    report = analyze(ckpt.bank, spec, args.threshold, args.normalize)
    report.extra.update({"seed": ckpt.config.seed, "system": spec.to_dict(),
                         "config": ckpt.config.to_dict(), "run_config": ckpt.run_config})
    print(f"active singular values (> {args.threshold}): {report.active_count} "
          f"(ground truth L = {report.ground_truth_dim})")
    for i, (s, p) in enumerate(zip(report.singular_values, report.parallelness)):
        print(f"  {i + 1:>3}  sigma={s:.6f}  parallelness={p:.6f}")
    for note in report.notes:
        print(f"note: {note}")
    if args.out:
        _write_text(args.out, report.to_json() + "\n")
        _write_text(args.csv or _sibling(args.out, ".csv"), report.to_csv())
    return EXIT_OK


def _sibling(path, suffix):
    return (path[:-5] if path.endswith(".json") else path) + suffix


def field_grid(lo, hi, resolution):
    axis = np.linspace(lo, hi, resolution)
    q, p = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([q.ravel(), p.ravel()], axis=1)


def cmd_field(args):
    if args.resolution < 1:
        raise UsageError("resolution must be positive")
    lo, hi = args.range
    pts = field_grid(lo, hi, args.resolution)
    meta = {"schema_version": SCHEMA_VERSION, "range": [lo, hi], "resolution": args.resolution}
    if args.analytic:
        spec = _system_from_args(args) if args.system else SystemSpec("sho")
        if spec.phase_dim != 2:
            raise UsageError("field export requires a 2-dimensional phase space")
        H = ground_truth_hamiltonian(spec, pts)
        meta.update(source="analytic", system=spec.to_dict())
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --analytic is given")
        ckpt = vi.Checkpoint.load(args.checkpoint)
        if ckpt.architecture.input_dim != 2:
            raise UsageError("field export requires a 2-dimensional phase space")
        H = vi.field_values(ckpt, pts, S=args.S, seed=args.seed)
        meta.update(source=args.checkpoint, S=args.S, seed=args.seed,
                    config=ckpt.config.to_dict(), run_config=ckpt.run_config)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "p", "H"])
        for (q, p), h in zip(pts, H):
            w.writerow([repr(float(q)), repr(float(p)), repr(float(h))])
    _write_json(args.out + ".meta.json", meta)
    print(f"wrote {len(pts)} grid points to {args.out}")
    return EXIT_OK


def _add_system_flags(p, required=True):
    p.add_argument("--system", choices=("sho", "nharm", "nbody"), required=required)
    p.add_argument("--n", type=int, help="oscillators or bodies")
    p.add_argument("--dim", type=int, help="spatial dimension for nbody (default 2)")


def build_parser():
    parser = argparse.ArgumentParser(prog="noether-razor",
                                     description="Learn conserved quantities of Hamiltonian systems.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS threads for likelihood evaluation (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a trajectory dataset")
    _add_system_flags(p)
    p.add_argument("--variant", choices=("train", "test", "moved", "wider"), default="train")
    p.add_argument("--trajectories", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a variational model")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=vi.MODES)
    _add_system_flags(p, required=False)
    p.add_argument("--config", help="run config file; defaults to a preset")
    p.add_argument("--preset", choices=("paper", "desk"), default="paper")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="test MSE of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--S", type=int, help="orbit samples (default: config S_eval)")
    p.add_argument("--seed", type=int)
    p.add_argument("--weight-samples", type=int, default=0,
                   help="average over posterior weight draws (0: posterior-mean weights)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="SVD and parallelness of learned generators")
    p.add_argument("--checkpoint", required=True)
    _add_system_flags(p, required=False)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--normalize", choices=NORMALIZATIONS, default="max",
                   help="generator scaling before the SVD")
    p.add_argument("--out")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("field", help="export the learned Hamiltonian on a grid")
    p.add_argument("--checkpoint")
    p.add_argument("--analytic", action="store_true", help="export the true Hamiltonian")
    _add_system_flags(p, required=False)
    p.add_argument("--range", nargs=2, type=float, default=(-3.0, 3.0), metavar=("LO", "HI"))
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--S", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_field)
    return parser


def _thread_limit(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(limits=max(1, n))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except (UsageError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

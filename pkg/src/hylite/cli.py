"""Command-line entry point: ``hylite <command> [options]``.

Exit codes: 0 success, 1 a check failed, 2 bad input (config, data, arguments).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import load_checkpoint
from .checks import run_suite
from .config import ExperimentConfig, load_config, parse_pairs, save_config, split_assignment
from .errors import HyliteError, UnknownAxis
from .experiment import load_dataset, read_class_names, run_experiment
from .trainer import evaluate_model

log = logging.getLogger("hylite")

LAMBDA_GRID = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
FRACTIONS = tuple(round(0.1 * k, 1) for k in range(1, 11))
AXES = ("pos", "order", "token_axis", "fusion", "components")

ABLATION_COLUMNS = ("variant", "oa", "aa", "kappa", "reg")
LAMBDA_COLUMNS = ("lambda", "oa", "aa", "kappa", "reg")
CURVE_COLUMNS = ("fraction", "runs", "n_train", "oa_mean", "oa_std", "aa_mean", "aa_std", "kappa_mean", "kappa_std")
GRADCHECK_COLUMNS = ("op", "max_rel_err", "passed")


class CheckFailed(Exception):
    pass


def ablation_variants(axis: str, cfg: ExperimentConfig) -> list[tuple[str, dict]]:
    if axis == "pos":
        return [(m, {"pos_mode": m}) for m in ("none", "fixed", "learned")]
    if axis == "order":
        return [(o, {"attn_order": o}) for o in ("local_first", "spectral_first")]
    if axis == "token_axis":
        return [(a, {"token_axis": a}) for a in ("spectral", "local")]
    if axis == "fusion":
        return [(f, {"fusion": f}) for f in ("feature_level", "class_level")]
    if axis == "components":
        lam = cfg.lam if cfg.lam > 0 else 1.0
        out = []
        for att in (True, False):
            for reg in (True, False):
                name = f"att_{'on' if att else 'off'}_reg_{'on' if reg else 'off'}"
                out.append((name, {"local_attn": att, "lam": lam if reg else 0.0}))
        return out
    raise UnknownAxis(f"unknown ablation axis {axis!r}; choose from {', '.join(AXES)}")


def _write_rows(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else repr(r[c]) for c in columns])


def _job(args):
    cfg, run_dir, fraction, sub_seed = args
    return run_experiment(cfg, run_dir, fraction, sub_seed)


def _run_all(tasks, jobs: int) -> list[dict]:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_job, tasks))
    return [_job(t) for t in tasks]


def resolve(args, command: str) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = parse_pairs([split_assignment(s) for s in args.set], cfg)
    extra = {}
    if args.seed is not None:
        extra["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        extra["epochs"] = args.epochs
    if getattr(args, "checkpoint", None):
        extra["checkpoint"] = args.checkpoint
    if args.out is not None:
        extra["out"] = args.out
    if os.environ.get("HYLITE_OUT"):
        extra["out"] = os.environ["HYLITE_OUT"]
    cfg = cfg.with_(**extra)
    if not cfg.run_name:
        cfg = cfg.with_(run_name=command)
    run_dir = Path(cfg.out) / cfg.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    return cfg, run_dir


def _echo(label: str, res: dict) -> None:
    print(f"{label}: OA {res['oa']:.4f}  AA {res['aa']:.4f}  kappa {res['kappa']:.4f}")


def cmd_train(args) -> int:
    cfg, run_dir = resolve(args, "train")
    res = run_experiment(cfg, run_dir)
    _echo(str(run_dir), res)
    return 0


def cmd_eval(args) -> int:
    cfg, run_dir = resolve(args, "eval")
    if not cfg.checkpoint:
        raise HyliteError("eval needs a checkpoint (--checkpoint PATH or checkpoint=...)")
    save_config(run_dir / "resolved_config.txt", cfg)
    data = load_dataset(cfg)
    mcfg = cfg.model_config(data.cube.m, data.n_classes)
    params = load_checkpoint(cfg.checkpoint, mcfg)
    rep = evaluate_model(params, mcfg, data.cube, data.test, cfg.eval_batch)
    rep.write_csv(run_dir, read_class_names(cfg.class_names))
    _echo(str(run_dir), {"oa": rep.oa, "aa": rep.aa, "kappa": rep.kappa})
    return 0


def cmd_ablate(args) -> int:
    axis = args.axis
    cfg, run_dir = resolve(args, f"ablate_{axis}")
    variants = ablation_variants(axis, cfg)
    save_config(run_dir / "resolved_config.txt", cfg)
    tasks = [(cfg.with_(**kw), run_dir / name, 1.0, None) for name, kw in variants]
    results = _run_all(tasks, args.jobs)
    rows = [{"variant": name, **res} for (name, _), res in zip(variants, results)]
    _write_rows(run_dir / f"ablation_{axis}.csv", ABLATION_COLUMNS, rows)
    for r in rows:
        _echo(r["variant"], r)
    return 0


def cmd_sweep_lambda(args) -> int:
    cfg, run_dir = resolve(args, "lambda_sweep")
    values = args.values or list(LAMBDA_GRID)
    for v in values:
        if v < 0:
            raise HyliteError(f"lambda must be >= 0, got {v}")
    save_config(run_dir / "resolved_config.txt", cfg)
    tasks = [(cfg.with_(lam=float(v)), run_dir / f"lambda_{v:g}", 1.0, None) for v in values]
    results = _run_all(tasks, args.jobs)
    rows = [{"lambda": float(v), **res} for v, res in zip(values, results)]
    _write_rows(run_dir / "lambda_sweep.csv", LAMBDA_COLUMNS, rows)
    for r in rows:
        _echo(f"lambda={r['lambda']:g}", r)
    return 0


def cmd_subsample_curve(args) -> int:
    cfg, run_dir = resolve(args, "subsample_curve")
    fractions = args.fractions or list(FRACTIONS)
    for f in fractions:
        if not 0 < f <= 1:
            raise HyliteError(f"fractions must lie in (0, 1], got {f}")
    save_config(run_dir / "resolved_config.txt", cfg)
    tasks = []
    for f in fractions:
        for r in range(args.repeats):
            seed = cfg.seed + r
            tasks.append((cfg.with_(seed=seed), run_dir / f"frac_{f:g}" / f"rep_{r}", f, seed))
    results = _run_all(tasks, args.jobs)
    rows = []
    for i, f in enumerate(fractions):
        chunk = results[i * args.repeats:(i + 1) * args.repeats]
        row = {"fraction": float(f), "runs": len(chunk), "n_train": int(np.mean([c["n_train"] for c in chunk]))}
        for k in ("oa", "aa", "kappa"):
            vals = np.array([c[k] for c in chunk])
            row[f"{k}_mean"] = float(vals.mean())
            row[f"{k}_std"] = float(vals.std())
        rows.append(row)
        print(f"fraction {f:g}: OA {row['oa_mean']:.4f} +- {row['oa_std']:.4f} ({row['runs']} runs)")
    _write_rows(run_dir / "subsample_curve.csv", CURVE_COLUMNS, rows)
    return 0


def cmd_gradcheck(args) -> int:
    cfg, run_dir = resolve(args, "gradcheck")
    save_config(run_dir / "resolved_config.txt", cfg)
    rows = run_suite(seeds=args.seeds)
    width = max(len(r.name) for r in rows)
    for r in rows:
        print(f"{r.name:<{width}}  {r.max_rel_err:.3e}  {'ok' if r.passed else 'FAIL'}")
    _write_rows(run_dir / "gradcheck.csv", GRADCHECK_COLUMNS,
                [{"op": r.name, "max_rel_err": r.max_rel_err, "passed": "true" if r.passed else "false"} for r in rows])
    bad = [r.name for r in rows if not r.passed]
    if bad:
        raise CheckFailed(f"gradient check failed for: {', '.join(bad)}")
    print("all gradients match finite differences")
    return 0


def cmd_synth(args) -> int:
    cfg, run_dir = resolve(args, "synth")
    cube = D.synth_generate(cfg.synth_h, cfg.synth_w, cfg.synth_m, cfg.synth_c, cfg.synth_noise, cfg.synth_seed)
    train_, test = D.split_per_class(cube, cfg.train_per_class, cfg.split_seed)
    D.save_cube(run_dir / "synth.hsib", cube)
    D.save_split(run_dir / "train.csv", train_)
    D.save_split(run_dir / "test.csv", test)
    # a ready-to-train config whose data paths are relative to itself
    data_cfg = cfg.with_(cube="synth.hsib", labels="synth.hsil", train_split="train.csv",
                         test_split="test.csv", run_name="")
    save_config(run_dir / "synth.cfg", data_cfg)
    save_config(run_dir / "resolved_config.txt", cfg)
    print(f"wrote {cube.h}x{cube.w}x{cube.m} cube with {cube.n_classes} classes to {run_dir}")
    print(f"train per class: {' '.join(str(int(n)) for n in train_.class_counts(cube.n_classes))}")
    print(f"test per class: {' '.join(str(int(n)) for n in test.class_counts(cube.n_classes))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--out", help="output root (HYLITE_OUT takes precedence)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="hylite", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--epochs", type=int)
    p.set_defaults(fn=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint")
    p.set_defaults(fn=cmd_eval)
    p = sub.add_parser("ablate", parents=[common], help="train every variant along one axis")
    p.add_argument("axis", help=f"one of {', '.join(AXES)}")
    p.add_argument("--epochs", type=int)
    p.set_defaults(fn=cmd_ablate)
    p = sub.add_parser("sweep-lambda", parents=[common], help="train across regulariser weights")
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--epochs", type=int)
    p.set_defaults(fn=cmd_sweep_lambda)
    p = sub.add_parser("subsample-curve", parents=[common], help="accuracy vs training-set fraction")
    p.add_argument("--fractions", type=float, nargs="+")
    p.add_argument("--repeats", type=int, default=4)
    p.add_argument("--epochs", type=int)
    p.set_defaults(fn=cmd_subsample_curve)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(fn=cmd_gradcheck)
    p = sub.add_parser("synth", parents=[common], help="write the synthetic cube, labels and splits")
    p.set_defaults(fn=cmd_synth)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except (HyliteError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Dataset assembly and single-run execution shared by the CLI and scripts."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import data as D
from .config import ExperimentConfig, save_config
from .trainer import Dataset, train

log = logging.getLogger(__name__)

RESULT_KEYS = ("oa", "aa", "kappa", "reg", "loss")


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.cube == "synth":
        cube = D.synth_generate(cfg.synth_h, cfg.synth_w, cfg.synth_m, cfg.synth_c, cfg.synth_noise, cfg.synth_seed)
    else:
        cube = D.load_cube(cfg.cube, cfg.labels or None)
    cube = D.normalize_bands(cube, cfg.normalize)
    if cfg.train_split:
        train_ = D.load_split(cfg.train_split, "train")
        test = D.load_split(cfg.test_split, "test") if cfg.test_split else D.SplitList.from_entries([], "test")
    else:
        train_, test = D.split_per_class(cube, cfg.train_per_class, cfg.split_seed)
    train_.validate(cube)
    test.validate(cube)
    return Dataset(cube, train_, test)


def read_class_names(path) -> list[str] | None:
    if not path:
        return None
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]


def run_experiment(cfg: ExperimentConfig, run_dir, fraction: float = 1.0, subsample_seed: int | None = None) -> dict:
    """Train one model from ``cfg`` into ``run_dir``; return the final test metrics."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(run_dir / "resolved_config.txt", cfg)
    data = load_dataset(cfg)
    if fraction < 1.0 or subsample_seed is not None:
        sub = D.subsample_split(data.train, fraction, cfg.seed if subsample_seed is None else subsample_seed)
        data = Dataset(data.cube, sub, data.test)
    mcfg = cfg.model_config(data.cube.m, data.n_classes)
    _, tlog = train(mcfg, data, cfg.train_config(), out_dir=run_dir)
    rep = tlog.final_report
    if rep is not None:
        rep.write_csv(run_dir, read_class_names(cfg.class_names))
    last = tlog.rows[-1] if tlog.rows else {}
    out = {k: float(last.get(k, np.nan)) for k in RESULT_KEYS}
    out["n_train"] = len(data.train)
    log.info("%s: OA %.4f AA %.4f kappa %.4f", run_dir, out["oa"], out["aa"], out["kappa"])
    return out

"""Convert a MATLAB hyperspectral dataset into HSIB/HSIL cubes and split CSVs.

Two layouts are supported:

* fixed split maps: the cube plus separate train/test label maps (``--train-key``,
  ``--test-key``), as in the commonly distributed disjoint Indian Pines split
  with 695 training and 9671 test pixels;
* a single ground-truth map (``--gt-key``) plus per-class training counts
  (``--train-counts``); the rest of each class becomes the test split.

Example::

    python scripts/convert_mat.py --cube IndianPine.mat --cube-key input \\
        --train-key TR --test-key TE --class-names configs/indian_pines_classes.txt \\
        --out data/indian_pines

writes ``cube.hsib``, ``cube.hsil``, ``train.csv``, ``test.csv`` and a
``dataset.cfg`` that ``hylite train --config`` accepts directly.
"""
import argparse
import shutil
import sys
from pathlib import Path

import numpy as np
from scipy.io import loadmat

from hylite import data as D
from hylite.config import ExperimentConfig, save_config


def load_array(path, key):
    mat = loadmat(path)
    if key not in mat:
        keys = [k for k in mat if not k.startswith("__")]
        sys.exit(f"{path}: no variable {key!r}; available: {keys}")
    return np.asarray(mat[key])


def split_from_map(labels, role):
    rows, cols = np.nonzero(labels)
    return D.SplitList(rows, cols, labels[rows, cols].astype(np.int64), role)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cube", required=True, help=".mat file holding the (h, w, m) cube")
    ap.add_argument("--cube-key", required=True)
    ap.add_argument("--labels", help=".mat file with label maps (default: the cube file)")
    ap.add_argument("--train-key")
    ap.add_argument("--test-key")
    ap.add_argument("--gt-key")
    ap.add_argument("--train-counts", help="comma-separated per-class training counts, used with --gt-key")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--class-names")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)

    refl = load_array(args.cube, args.cube_key).astype(np.float64)
    label_file = args.labels or args.cube
    if args.train_key and args.test_key:
        tr = load_array(label_file, args.train_key).astype(np.int64)
        te = load_array(label_file, args.test_key).astype(np.int64)
        if np.any((tr > 0) & (te > 0)):
            sys.exit("train and test maps overlap")
        labels = tr + te
        train, test = split_from_map(tr, "train"), split_from_map(te, "test")
    elif args.gt_key and args.train_counts:
        labels = np.ascontiguousarray(load_array(label_file, args.gt_key), dtype=np.int64)
        counts = [int(v) for v in args.train_counts.split(",")]
        rng = np.random.default_rng(args.seed)
        tr = np.zeros_like(labels)
        for k, n in enumerate(counts, start=1):
            idx = np.flatnonzero(labels.ravel() == k)
            take = rng.permutation(idx)[:n]
            tr.flat[take] = k
        te = np.where(tr > 0, 0, labels)
        train, test = split_from_map(tr, "train"), split_from_map(te, "test")
    else:
        sys.exit("give either --train-key/--test-key or --gt-key/--train-counts")

    cube = D.HsiCube(refl, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    D.save_cube(out / "cube.hsib", cube)
    D.save_split(out / "train.csv", train)
    D.save_split(out / "test.csv", test)
    cfg = ExperimentConfig(cube="cube.hsib", labels="cube.hsil", train_split="train.csv", test_split="test.csv")
    if args.class_names:
        shutil.copy(args.class_names, out / "class_names.txt")
        cfg = cfg.with_(class_names="class_names.txt")
    save_config(out / "dataset.cfg", cfg)
    c = cube.n_classes
    print(f"cube {cube.h}x{cube.w}x{cube.m}, {c} classes")
    print("train per class:", " ".join(map(str, train.class_counts(c))), f"(total {len(train)})")
    print("test per class: ", " ".join(map(str, test.class_counts(c))), f"(total {len(test)})")


if __name__ == "__main__":
    main()

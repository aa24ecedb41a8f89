"""Hyperspectral cubes on disk, patch extraction and split handling.

File formats (all little-endian):

* cube ``HSIB`` v1: magic, u32 version, u32 h, u32 w, u32 m, u32 dtype (1 = f32),
  then h*w*m float32 values, pixel-major with bands innermost.
* labels ``HSIL`` v1: magic, u32 version, u32 h, u32 w, then h*w uint16 (0 = unlabeled).
* splits: text, header ``row,col,class`` then one entry per line.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (BadMagic, DimOverflow, EmptySplit, FractionOutOfRange,
                     ShapeMismatch, TruncatedPayload, UnlabeledCenter)

CUBE_MAGIC = b"HSIB"
LABEL_MAGIC = b"HSIL"
MAX_ELEMENTS = 1 << 34  # refuse headers that would describe > 64 GiB of f32


@dataclass(frozen=True)
class HsiCube:
    reflectance: np.ndarray  # (h, w, m)
    labels: np.ndarray  # (h, w) int, 0 = unlabeled

    def __post_init__(self):
        if self.reflectance.ndim != 3 or self.labels.shape != self.reflectance.shape[:2]:
            raise ShapeMismatch(f"cube {self.reflectance.shape} vs labels {self.labels.shape}")

    @property
    def h(self) -> int:
        return self.reflectance.shape[0]

    @property
    def w(self) -> int:
        return self.reflectance.shape[1]

    @property
    def m(self) -> int:
        return self.reflectance.shape[2]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max())


@dataclass(frozen=True)
class SplitList:
    rows: np.ndarray
    cols: np.ndarray
    classes: np.ndarray
    role: str = "train"

    def __len__(self) -> int:
        return len(self.rows)

    def entries(self) -> list[tuple[int, int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.classes.tolist()))

    @classmethod
    def from_entries(cls, entries, role: str = "train") -> "SplitList":
        arr = np.asarray(list(entries), dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), role)

    def class_counts(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.classes, minlength=n_classes + 1)[1:]

    def validate(self, cube: HsiCube) -> None:
        if len(self) == 0:
            return
        if (self.rows.min() < 0 or self.cols.min() < 0
                or self.rows.max() >= cube.h or self.cols.max() >= cube.w):
            raise ShapeMismatch(f"{self.role} split references pixels outside the {cube.h}x{cube.w} cube")
        got = cube.labels[self.rows, self.cols]
        if np.any(got == 0):
            raise UnlabeledCenter(f"{self.role} split contains unlabeled pixels")
        if np.any(got != self.classes):
            raise ValueError(f"{self.role} split classes disagree with the label file")


# ----------------------------------------------------------------------------
# binary io

def _read_u32s(buf: bytes, offset: int, n: int, path) -> tuple[int, ...]:
    end = offset + 4 * n
    if len(buf) < end:
        raise TruncatedPayload(f"{path}: header truncated")
    return struct.unpack_from(f"<{n}I", buf, offset)


def save_cube(path, cube: HsiCube, label_path=None) -> None:
    path = Path(path)
    h, w, m = cube.reflectance.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<5I", 1, h, w, m, 1))
        fh.write(cube.reflectance.astype("<f4").tobytes())
    save_labels(label_path or path.with_suffix(".hsil"), cube.labels)


def save_labels(path, labels: np.ndarray) -> None:
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<3I", 1, h, w))
        fh.write(labels.astype("<u2").tobytes())


def _check_dims(path, *dims) -> int:
    n = 1
    for d in dims:
        if d == 0:
            raise DimOverflow(f"{path}: zero extent in header {dims}")
        n *= d
    if n > MAX_ELEMENTS:
        raise DimOverflow(f"{path}: header {dims} describes {n} elements")
    return n


def load_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != LABEL_MAGIC:
        raise BadMagic(f"{path}: expected HSIL magic, got {buf[:4]!r}")
    version, h, w = _read_u32s(buf, 4, 3, path)
    if version != 1:
        raise BadMagic(f"{path}: unsupported label version {version}")
    n = _check_dims(path, h, w)
    if len(buf) - 16 < 2 * n:
        raise TruncatedPayload(f"{path}: expected {2 * n} payload bytes, found {len(buf) - 16}")
    return np.frombuffer(buf, dtype="<u2", count=n, offset=16).reshape(h, w).astype(np.int64)


def load_cube(path, label_path=None) -> HsiCube:
    """Read an HSIB cube and its HSIL labels (default: same stem, ``.hsil``)."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise TruncatedPayload(f"{path}: no such file") from None
    if buf[:4] != CUBE_MAGIC:
        raise BadMagic(f"{path}: expected HSIB magic, got {buf[:4]!r}")
    version, h, w, m, dtype = _read_u32s(buf, 4, 5, path)
    if version != 1 or dtype != 1:
        raise BadMagic(f"{path}: unsupported version {version} / dtype {dtype}")
    n = _check_dims(path, h, w, m)
    if len(buf) - 24 < 4 * n:
        raise TruncatedPayload(f"{path}: expected {4 * n} payload bytes, found {len(buf) - 24}")
    refl = np.frombuffer(buf, dtype="<f4", count=n, offset=24).reshape(h, w, m).astype(np.float64)
    if not np.all(np.isfinite(refl)):
        raise ValueError(f"{path}: non-finite reflectance values")
    lpath = Path(label_path) if label_path else path.with_suffix(".hsil")
    try:
        labels = load_labels(lpath)
    except FileNotFoundError:
        raise TruncatedPayload(f"{lpath}: no such label file") from None
    if labels.shape != (h, w):
        raise ShapeMismatch(f"labels {labels.shape} do not match cube {(h, w)}")
    return HsiCube(refl, labels)


def save_split(path, split: SplitList) -> None:
    lines = ["row,col,class"] + [f"{r},{c},{k}" for r, c, k in split.entries()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_split(path, role: str = "train") -> SplitList:
    entries = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        line = line.strip()
        if not line or (i == 0 and line.replace(" ", "") == "row,col,class"):
            continue
        r, c, k = (int(v) for v in line.split(","))
        entries.append((r, c, k))
    return SplitList.from_entries(entries, role)


# ----------------------------------------------------------------------------
# preprocessing

def normalize_bands(cube: HsiCube, mode: str = "minmax") -> HsiCube:
    """Scale each band independently; ``minmax`` maps to [0, 1], constant bands to 0."""
    x = cube.reflectance
    if mode == "none":
        return cube
    if mode == "minmax":
        lo = x.min(axis=(0, 1), keepdims=True)
        span = x.max(axis=(0, 1), keepdims=True) - lo
        out = np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)
    elif mode == "zscore":
        mu = x.mean(axis=(0, 1), keepdims=True)
        sd = x.std(axis=(0, 1), keepdims=True)
        out = np.where(sd > 0, (x - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    else:
        raise ValueError(f"unknown normalization {mode!r}")
    return HsiCube(out, cube.labels)


def reflect_index(i: int, n: int) -> int:
    """Mirror an out-of-range index back into [0, n) without repeating the edge."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def _padded(cube: HsiCube, p: int) -> np.ndarray:
    r = p // 2
    rows = [reflect_index(i, cube.h) for i in range(-r, cube.h + r)]
    cols = [reflect_index(j, cube.w) for j in range(-r, cube.w + r)]
    return cube.reflectance[np.ix_(rows, cols)]


def patchify(cube: HsiCube, center: tuple[int, int], p: int, padded: np.ndarray | None = None) -> np.ndarray:
    """Return the m x p^2 spectral-token instance around ``center``.

    Token b is the p x p window of band b flattened row-major; the centre
    pixel sits at column p^2 // 2.
    """
    if p % 2 != 1:
        raise ShapeMismatch(f"patch side must be odd, got {p}")
    r0, c0 = center
    if cube.labels[r0, c0] == 0:
        raise UnlabeledCenter(f"pixel {center} is unlabeled")
    if padded is None:
        padded = _padded(cube, p)
    win = padded[r0:r0 + p, c0:c0 + p, :]  # (p, p, m)
    return win.reshape(p * p, cube.m).T.copy()


@dataclass
class PatchBatch:
    inputs: np.ndarray  # (B, m, p*p)
    targets: np.ndarray  # (B,) class ids 1..c
    p: int


class PatchSource:
    """Cube with cached mirror padding, so batches can be cut quickly."""

    def __init__(self, cube: HsiCube, p: int):
        if p % 2 != 1:
            raise ShapeMismatch(f"patch side must be odd, got {p}")
        self.cube = cube
        self.p = p
        self.padded = _padded(cube, p)

    def instances(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        p, m = self.p, self.cube.m
        if np.any(self.cube.labels[rows, cols] == 0):
            raise UnlabeledCenter("batch contains unlabeled centre pixels")
        dr, dc = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
        win = self.padded[rows[:, None, None] + dr, cols[:, None, None] + dc]  # (B, p, p, m)
        return np.ascontiguousarray(win.reshape(len(rows), p * p, m).transpose(0, 2, 1))


def make_batches(cube: HsiCube | PatchSource, split: SplitList, p: int, batch_size: int,
                 seed: int = 0, shuffle: bool = True) -> Iterator[PatchBatch]:
    """Yield PatchBatches over ``split``; the last batch may be short."""
    if len(split) == 0:
        raise EmptySplit(f"{split.role} split is empty")
    src = cube if isinstance(cube, PatchSource) and cube.p == p else PatchSource(
        cube.cube if isinstance(cube, PatchSource) else cube, p)
    order = np.arange(len(split))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(split))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield PatchBatch(src.instances(split.rows[idx], split.cols[idx]), split.classes[idx].copy(), p)


def subsample_split(split: SplitList, fraction: float, seed: int) -> SplitList:
    """Stratified subset: floor(fraction * n_k) per class, at least one.

    Each class is permuted once per seed and a prefix is kept, so smaller
    fractions are always subsets of larger ones.
    """
    if not 0.0 < fraction <= 1.0:
        raise FractionOutOfRange(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return split
    rng = np.random.default_rng(seed)
    keep = []
    for k in np.unique(split.classes):
        members = np.flatnonzero(split.classes == k)
        perm = members[rng.permutation(len(members))]
        n = max(1, int(np.floor(fraction * len(members) + 1e-9)))
        keep.append(perm[:n])
    idx = np.sort(np.concatenate(keep))
    return SplitList(split.rows[idx], split.cols[idx], split.classes[idx], split.role)


def split_per_class(cube: HsiCube, n_train: int, seed: int) -> tuple[SplitList, SplitList]:
    """Draw ``n_train`` random training pixels per class; the rest is test."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in range(1, cube.n_classes + 1):
        rr, cc = np.nonzero(cube.labels == k)
        perm = rng.permutation(len(rr))
        cut = min(n_train, len(rr))
        for j, i in enumerate(perm):
            (train if j < cut else test).append((rr[i], cc[i], k))
    train.sort()
    test.sort()
    return SplitList.from_entries(train, "train"), SplitList.from_entries(test, "test")


# ----------------------------------------------------------------------------
# synthetic fixture

def synth_prototypes(m: int, c: int, confusable: tuple[int, int] | None = None) -> np.ndarray:
    """Gaussian-bump spectra, one per class (row k-1 for class k)."""
    bands = np.arange(m, dtype=np.float64)
    width = max(m / (2.0 * c), 1.0)
    centers = (np.arange(c) + 0.5) * m / c
    protos = 0.2 + 0.6 * np.exp(-0.5 * ((bands[None, :] - centers[:, None]) / width) ** 2)
    if confusable is not None:
        a, b = confusable
        protos[b - 1] = protos[a - 1] + 0.002 * np.sin(np.pi * bands / max(m - 1, 1))
    return protos


def synth_generate(h: int = 32, w: int = 32, m: int = 24, c: int = 4, noise: float = 0.05,
                   seed: int = 0) -> HsiCube:
    """Striped synthetic scene with two spectrally confusable classes.

    Classes occupy c vertical stripes and every labeled pixel of class k is
    ``prototype_k`` plus N(0, noise). The last two classes have almost the
    same prototype. Class c-1 fills its stripe flat; class c is laid out as a
    checkerboard whose other squares are unlabeled background with a
    distinct spectrum. A single pixel's spectrum therefore cannot separate
    the pair, its neighbourhood can.
    """
    rng = np.random.default_rng(seed)
    confusable = (c - 1, c) if c >= 3 else None
    protos = synth_prototypes(m, c, confusable)
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    labels = (cc * c // w + 1).astype(np.int64)
    refl = protos[labels - 1].copy()  # (h, w, m)
    if confusable is not None:
        hole = (labels == confusable[1]) & ((rr + cc) % 2 == 1)
        refl[hole] = background_spectrum(m)
        labels[hole] = 0
    if noise > 0:
        refl = refl + rng.normal(0.0, noise, size=refl.shape)
    return HsiCube(refl, labels)


def background_spectrum(m: int) -> np.ndarray:
    bands = np.arange(m, dtype=np.float64)
    return 0.5 + 0.3 * np.cos(2 * np.pi * bands / max(m, 1))


def nearest_prototype(spectra: np.ndarray, protos: np.ndarray) -> np.ndarray:
    d = ((spectra[:, None, :] - protos[None, :, :]) ** 2).sum(axis=-1)
    return d.argmin(axis=1) + 1

"""Flat key=value experiment configuration.

One ``key = value`` per line; lines starting with ``#`` are comments. Keys are the field
names of :class:`ExperimentConfig`; anything else is rejected.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import InvalidConfig
from .model import ModelConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    # data; cube = "synth" generates the synthetic fixture in memory
    cube: str = "synth"
    labels: str = ""
    train_split: str = ""
    test_split: str = ""
    train_per_class: int = 20
    split_seed: int = 0
    class_names: str = ""
    normalize: str = "minmax"
    synth_h: int = 32
    synth_w: int = 32
    synth_m: int = 24
    synth_c: int = 4
    synth_noise: float = 0.05
    synth_seed: int = 0
    # model
    p: int = 7
    d: int = 64
    blocks: int = 5
    heads: int = 4
    heads_local: int = 1
    ff_hidden: int = 4
    pos_mode: str = "learned"
    attn_order: str = "spectral_first"
    token_axis: str = "spectral"
    fusion: str = "feature_level"
    caf: bool = True
    local_attn: bool = True
    norm: str = "pre"
    ln_eps: float = 1e-5
    # training
    epochs: int = 300
    batch_size: int = 32
    lr: float = 5e-4
    weight_decay: float = 5e-3
    decoupled_wd: bool = False
    gamma: float = 0.9
    step_size: int = 30
    lam: float = 1.0
    reg_mode: str = "centroid"
    eval_every: int = 0
    eval_batch: int = 256
    # run
    seed: int = 0
    checkpoint: str = ""
    out: str = "runs"
    run_name: str = ""

    def model_config(self, m: int, c: int) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)} - {"m", "c"}
        return ModelConfig(m=m, c=c, **{k: getattr(self, k) for k in names})

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names})

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise InvalidConfig(f"{key}: cannot read {raw!r} as {kind}") from None
    return raw


def parse_pairs(pairs, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``(key, raw value)`` pairs on top of ``base``."""
    values = {}
    for key, raw in pairs:
        if key not in _TYPES:
            raise InvalidConfig(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return replace(base or ExperimentConfig(), **values)


def split_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise InvalidConfig(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def parse_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            pairs.append(split_assignment(line))
    return parse_pairs(pairs, base)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"{path}: no such config file")
    cfg = parse_text(path.read_text())
    # relative data paths are taken relative to the config file
    fixed = {}
    for key in ("cube", "labels", "train_split", "test_split", "class_names", "checkpoint"):
        v = getattr(cfg, key)
        if v and v != "synth" and not Path(v).is_absolute():
            fixed[key] = str((path.parent / v).resolve())
    return cfg.with_(**fixed)


def _emit(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_emit(v)}\n" for k, v in asdict(cfg).items())


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(emit(cfg))

"""The HyLITE network: token embedding, spectral/local attention blocks, CAF, head.

All activations are batched as (B, n, w): ``n`` tokens of width ``w``. With the
default spectral token axis ``n = m + 1`` (class token + one token per band)
and ``w = d``; the local-token variant swaps the roles after embedding, giving
``n = d + 1`` and ``w = m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import tensor as T
from .errors import ConfigMismatch, InvalidConfig, ShapeMismatch
from .tensor import Tensor

POS_MODES = ("learned", "fixed", "none")
ATTN_ORDERS = ("spectral_first", "local_first")
TOKEN_AXES = ("spectral", "local")
FUSIONS = ("feature_level", "class_level")
NORMS = ("pre", "post")


@dataclass(frozen=True)
class ModelConfig:
    m: int
    p: int
    c: int
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

    def __post_init__(self):
        self.validate()

    @property
    def seq_len(self) -> int:
        return self.m + 1 if self.token_axis == "spectral" else self.d + 1

    @property
    def width(self) -> int:
        return self.d if self.token_axis == "spectral" else self.m

    def validate(self) -> None:
        for name, value, allowed in (("pos_mode", self.pos_mode, POS_MODES),
                                     ("attn_order", self.attn_order, ATTN_ORDERS),
                                     ("token_axis", self.token_axis, TOKEN_AXES),
                                     ("fusion", self.fusion, FUSIONS),
                                     ("norm", self.norm, NORMS)):
            if value not in allowed:
                raise InvalidConfig(f"{name}={value!r}; expected one of {allowed}")
        for name in ("m", "p", "c", "d", "blocks", "heads", "heads_local", "ff_hidden"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.p % 2 != 1:
            raise InvalidConfig(f"patch side p={self.p} must be odd")
        if self.c < 2:
            raise InvalidConfig("need at least two classes")
        if self.d % self.heads:
            raise InvalidConfig(f"d={self.d} is not divisible by heads={self.heads}")
        if self.width % self.heads:
            raise InvalidConfig(f"token width {self.width} is not divisible by heads={self.heads}")
        if self.seq_len % self.heads_local:
            raise InvalidConfig(f"sequence length {self.seq_len} is not divisible by heads_local={self.heads_local}")
        if not self.ln_eps > 0:
            raise InvalidConfig("ln_eps must be positive")

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def caf_sites(blocks: int) -> list[int]:
    """Blocks (1-based) whose input is fused with the output two blocks earlier."""
    return list(range(3, blocks + 1, 2))


def branch_families(cfg: ModelConfig) -> dict[str, tuple[str, ...]]:
    """Map block-name prefix -> attention families, in execution order."""
    if cfg.fusion == "class_level":
        return {"block": ("s",), "local_block": ("l",)}
    fams = ("s", "l") if cfg.local_attn else ("s",)
    if cfg.attn_order == "local_first":
        fams = fams[::-1]
    return {"block": fams}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    n, w = cfg.seq_len, cfg.width
    hw = cfg.ff_hidden * w
    shapes: dict[str, tuple[int, ...]] = {
        "embed.W": (cfg.p * cfg.p, cfg.d),
        "embed.z0": (1, w),
    }
    if cfg.pos_mode != "none":
        shapes["embed.P"] = (n, w)
    for prefix, fams in branch_families(cfg).items():
        for b in range(1, cfg.blocks + 1):
            key = f"{prefix}{b}."
            for fam in fams:
                side = w if fam == "s" else n
                shapes[key + f"ln_{fam}_g"] = (w,)
                shapes[key + f"ln_{fam}_b"] = (w,)
                for proj in ("wq", "wk", "wv"):
                    shapes[key + f"{proj}_{fam}"] = (side, side)
            shapes[key + "ln_f_g"] = (w,)
            shapes[key + "ln_f_b"] = (w,)
            shapes[key + "ff1_w"] = (w, hw)
            shapes[key + "ff1_b"] = (hw,)
            shapes[key + "ff2_w"] = (hw, w)
            shapes[key + "ff2_b"] = (w,)
        if cfg.caf:
            cprefix = "caf" if prefix == "block" else "local_caf"
            for site in caf_sites(cfg.blocks):
                shapes[f"{cprefix}{site}.k"] = (2,)
    shapes["head.C"] = (w, cfg.c)
    return shapes


class ModelParams:
    """Named parameter tensors; insertion order is the canonical order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def learnable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.tensors.items() if t.requires_grad}

    def count(self, learnable_only: bool = True) -> int:
        pool = self.learnable() if learnable_only else self.tensors
        return sum(t.data.size for t in pool.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=k)
                            for k, t in self.tensors.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > bound * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound * std
    return out


def sinusoidal_table(n: int, w: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(w)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / w)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.split(".")[-1]
        learnable = True
        if name == "embed.z0":
            data = np.zeros(shape)
        elif name == "embed.P":
            if cfg.pos_mode == "fixed":
                data, learnable = sinusoidal_table(*shape), False
            else:
                data = np.zeros(shape)
        elif leaf.endswith("_g"):
            data = np.ones(shape)
        elif leaf.endswith("_b") or leaf.startswith("ln_"):
            data = np.zeros(shape)
        elif leaf == "k":
            data = np.array([0.5, 0.5])
        else:
            data = truncated_normal(rng, shape)
        tensors[name] = Tensor(data, requires_grad=learnable, name=name)
    return ModelParams(tensors)


# ----------------------------------------------------------------------------
# layers

def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, w = x.shape
    x = T.reshape(x, (*lead, n, heads, w // heads))
    k = len(lead)
    return T.permute(x, (*range(k), k + 1, k, k + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, k = x.shape
    j = len(lead)
    x = T.permute(x, (*range(j), j + 1, j, j + 2))
    return T.reshape(x, (*lead, n, h * k))


def self_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, heads: int, scale: float,
                   trace: list | None = None) -> Tensor:
    """softmax(Q K^T / scale) V over the rows of ``x``, heads split along columns."""
    q, k, v = x @ wq, x @ wk, x @ wv
    if heads > 1:
        q, k, v = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    att = T.softmax_rows(T.mul_scalar(q @ T.transpose2d(k), 1.0 / scale))
    if trace is not None:
        trace.append(att.data)
    out = att @ v
    return _merge_heads(out) if heads > 1 else out


def spectral_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, heads: int,
                       trace: list | None = None) -> Tensor:
    """Attention across tokens; each head is scaled by sqrt(width / heads)."""
    w = x.shape[-1]
    return self_attention(x, wq, wk, wv, heads, math.sqrt(w / heads), trace)


def local_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, heads: int = 1,
                    trace: list | None = None) -> Tensor:
    """Attention across the feature rows of x^T, scaled by sqrt(width), transposed back."""
    w = x.shape[-1]
    xt = T.transpose2d(x)
    return T.transpose2d(self_attention(xt, wq, wk, wv, heads, math.sqrt(w), trace))


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return T.gelu(x @ w1 + b1) @ w2 + b2


def block_forward(x: Tensor, params: ModelParams, cfg: ModelConfig, prefix: str = "block1",
                  families: tuple[str, ...] | None = None, trace: list | None = None) -> Tensor:
    if families is None:
        families = branch_families(cfg)["block"]
    key = prefix + "."
    eps = cfg.ln_eps
    p = params.tensors

    def sublayer(x, fam, fn):
        g, b = p[key + f"ln_{fam}_g"], p[key + f"ln_{fam}_b"]
        if cfg.norm == "pre":
            return x + fn(T.layer_norm(x, g, b, eps))
        return T.layer_norm(x + fn(x), g, b, eps)

    for fam in families:
        wq, wk, wv = p[key + f"wq_{fam}"], p[key + f"wk_{fam}"], p[key + f"wv_{fam}"]
        if fam == "s":
            x = sublayer(x, "s", lambda h: spectral_attention(h, wq, wk, wv, cfg.heads, trace))
        else:
            x = sublayer(x, "l", lambda h: local_attention(h, wq, wk, wv, cfg.heads_local, trace))
    return sublayer(x, "f", lambda h: feed_forward(
        h, p[key + "ff1_w"], p[key + "ff1_b"], p[key + "ff2_w"], p[key + "ff2_b"]))


def caf_fuse(earlier_out: Tensor, current_in: Tensor, kernel: Tensor) -> Tensor:
    """Fuse block (l-2)'s output into block l's input with a learned 1x2 kernel."""
    return T.conv_pair(earlier_out, current_in, kernel)


def preprocess(instances, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Embed (.., m, p^2) instances into the (.., n, w) token matrix.

    Spectral axis: rows are [z0; z^1 W; ...; z^m W] + P. Local axis: the
    embedded band tokens are transposed first and z0 is prepended along the
    feature axis.
    """
    x = instances if isinstance(instances, Tensor) else Tensor(instances)
    if x.shape[-2:] != (cfg.m, cfg.p * cfg.p):
        raise ShapeMismatch(f"instance shape {x.shape[-2:]} != {(cfg.m, cfg.p * cfg.p)}")
    p = params.tensors
    tokens = x @ p["embed.W"]  # (.., m, d)
    if cfg.token_axis == "local":
        tokens = T.transpose2d(tokens)  # (.., d, m)
    lead = tokens.shape[:-2]
    z0 = T.expand(p["embed.z0"], (*lead, 1, cfg.width))
    x0 = T.concat([z0, tokens], axis=-2)
    if cfg.pos_mode != "none":
        x0 = x0 + p["embed.P"]
    return x0


def run_branch(x: Tensor, params: ModelParams, cfg: ModelConfig, prefix: str,
               families: tuple[str, ...], trace: list | None = None) -> Tensor:
    cprefix = "caf" if prefix == "block" else "local_caf"
    sites = set(caf_sites(cfg.blocks)) if cfg.caf else set()
    outputs = [x]  # outputs[j] = output of block j, outputs[0] = embedded input
    for b in range(1, cfg.blocks + 1):
        if b in sites:
            x = caf_fuse(outputs[b - 2], x, params[f"{cprefix}{b}.k"])
        x = block_forward(x, params, cfg, f"{prefix}{b}", families, trace)
        outputs.append(x)
    return x


def encode(instances, params: ModelParams, cfg: ModelConfig, trace: list | None = None) -> Tensor:
    """Final token matrix X_B (summed over branches for class-level fusion)."""
    x0 = preprocess(instances, params, cfg)
    out = None
    for prefix, fams in branch_families(cfg).items():
        xb = run_branch(x0, params, cfg, prefix, fams, trace)
        out = xb if out is None else out + xb
    return out


def forward(batch, params: ModelParams, cfg: ModelConfig, trace: list | None = None) -> tuple[Tensor, Tensor]:
    """Return (logits (B, c), final tokens X_B (B, n, w)) for a PatchBatch or array."""
    inputs = getattr(batch, "inputs", batch)
    inputs = np.asarray(inputs.data if isinstance(inputs, Tensor) else inputs, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[None]
    if inputs.shape[1] != cfg.m or inputs.shape[2] != cfg.p * cfg.p:
        raise ConfigMismatch(f"batch instances {inputs.shape[1:]} do not match config (m={cfg.m}, p={cfg.p})")
    xb = encode(Tensor(inputs), params, cfg, trace)
    cls = xb[:, 0, :]
    return cls @ params["head.C"], xb


def predict(inputs, params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    """Class ids 1..c; ties go to the lowest id."""
    logits, _ = forward(inputs, params, cfg)
    return np.argmax(logits.data, axis=1) + 1


def config_fields() -> list[str]:
    return [f.name for f in fields(ModelConfig)]

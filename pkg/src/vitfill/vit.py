"""Minimal pre-norm Vision Transformer producing an image-shaped feature fill.

patchify -> linear embed (+ sinusoidal positions) -> ``depth`` attention blocks
-> linear pixel head -> depatchify. There is no class token; every token is
decoded back to its own pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .patching import PatchScheme, depatchify, patchify, token_count, token_dim
from .tensor import Tensor

__all__ = ["ViTConfig", "init_vit", "attention_block", "vit_forward", "trainable", "sinusoidal_table"]


@dataclass(frozen=True)
class ViTConfig:
    scheme: PatchScheme = field(default_factory=lambda: PatchScheme("column", 2))
    d_model: int = 64
    heads: int = 4
    depth: int = 2
    mlp_hidden: int = 128
    use_positional: bool = True

    def __post_init__(self):
        if isinstance(self.scheme, str):
            object.__setattr__(self, "scheme", PatchScheme.parse(self.scheme))
        if not (self.d_model >= self.heads >= 1):
            raise ValueError(f"need d_model >= heads >= 1, got d_model={self.d_model}, heads={self.heads}")
        if self.d_model % self.heads:
            raise ValueError(f"heads={self.heads} does not divide d_model={self.d_model}")
        if self.depth < 1 or self.mlp_hidden < 1:
            raise ValueError("depth and mlp_hidden must be >= 1")

    def to_dict(self) -> dict:
        return {
            "scheme": str(self.scheme),
            "d_model": self.d_model,
            "heads": self.heads,
            "depth": self.depth,
            "mlp_hidden": self.mlp_hidden,
            "use_positional": self.use_positional,
        }


def sinusoidal_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(np.float32)


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    # resample until every draw lies within two standard deviations
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(np.float32)


def init_vit(config: ViTConfig, image_shape: tuple[int, int, int], seed: int = 0) -> dict[str, Tensor]:
    c, h, w = image_shape
    n = token_count(config.scheme, h, w)
    draw = token_dim(config.scheme, c, h, w)
    d, hid = config.d_model, config.mlp_hidden
    rng = np.random.default_rng(seed)
    P = T.parameter
    zeros = lambda *s: np.zeros(s, dtype=np.float32)  # noqa: E731

    params = {
        "embed.w": P(_trunc_normal(rng, (draw, d))),
        "embed.b": P(zeros(d)),
        "pos": Tensor(sinusoidal_table(n, d)),
    }
    for layer in range(config.depth):
        pre = f"block{layer}."
        for proj in ("q", "k", "v", "o"):
            params[pre + proj + ".w"] = P(_trunc_normal(rng, (d, d)))
            params[pre + proj + ".b"] = P(zeros(d))
        params[pre + "ln1.g"] = P(np.ones(d, dtype=np.float32))
        params[pre + "ln1.b"] = P(zeros(d))
        params[pre + "ln2.g"] = P(np.ones(d, dtype=np.float32))
        params[pre + "ln2.b"] = P(zeros(d))
        params[pre + "mlp1.w"] = P(_trunc_normal(rng, (d, hid)))
        params[pre + "mlp1.b"] = P(zeros(hid))
        params[pre + "mlp2.w"] = P(_trunc_normal(rng, (hid, d)))
        params[pre + "mlp2.b"] = P(zeros(d))
    params["decode.w"] = P(_trunc_normal(rng, (d, draw)))
    params["decode.b"] = P(zeros(draw))
    for name, t in params.items():
        t.name = name
    return params


def trainable(params: dict[str, Tensor]) -> list[Tensor]:
    return [t for t in params.values() if t.requires_grad]


def attention_block(tokens: Tensor, layer: dict[str, Tensor], heads: int) -> tuple[Tensor, np.ndarray]:
    """``t + MHSA(LN(t))`` followed by ``+ MLP(LN(.))``.

    ``layer`` maps short names (``q.w``, ``ln1.g``, ...) to tensors. Returns the
    new tokens and the ``[B x] heads x N x N`` attention weights.
    """
    lead = tuple(tokens.shape[:-2])
    n, d = tokens.shape[-2:]
    if layer["q.w"].shape != (d, d):
        raise T.DimensionError(f"attention_block: tokens {tokens.shape} vs projection {layer['q.w'].shape}")
    dh = d // heads
    nl = len(lead)

    x = T.layer_norm(tokens, layer["ln1.g"], layer["ln1.b"])

    def split_heads(t):
        t = t.reshape(lead + (n, heads, dh))
        return t.transpose(tuple(range(nl)) + (nl + 1, nl, nl + 2))

    q = split_heads(x @ layer["q.w"] + layer["q.b"])
    k = split_heads(x @ layer["k.w"] + layer["k.b"])
    v = split_heads(x @ layer["v.w"] + layer["v.b"])
    kt = k.transpose(tuple(range(nl + 1)) + (nl + 2, nl + 1))
    att = T.softmax_rows(T.scale(q @ kt, 1.0 / math.sqrt(dh)))
    mixed = (att @ v).transpose(tuple(range(nl)) + (nl + 1, nl, nl + 2)).reshape(lead + (n, d))
    tokens = tokens + (mixed @ layer["o.w"] + layer["o.b"])

    y = T.layer_norm(tokens, layer["ln2.g"], layer["ln2.b"])
    y = T.gelu(y @ layer["mlp1.w"] + layer["mlp1.b"]) @ layer["mlp2.w"] + layer["mlp2.b"]
    return tokens + y, att.data


def _layer(params: dict[str, Tensor], i: int) -> dict[str, Tensor]:
    pre = f"block{i}."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def vit_forward(x, params: dict[str, Tensor], config: ViTConfig) -> tuple[Tensor, list[np.ndarray]]:
    """Map a masked image ``[B x] C x H x W`` to a same-shaped raw feature fill.

    The output is left unclamped; clamping happens where it is composed with
    the known pixels.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    grid = patchify(x, config.scheme)
    if grid.tokens.shape[-1] != params["embed.w"].shape[0]:
        raise T.DimensionError(
            f"vit_forward: {config.scheme} on {tuple(x.shape)} gives {grid.tokens.shape[-1]}-dim tokens, "
            f"params expect {params['embed.w'].shape[0]}"
        )
    h = grid.tokens @ params["embed.w"] + params["embed.b"]
    if config.use_positional:
        h = h + params["pos"]
    maps = []
    for i in range(config.depth):
        h, att = attention_block(h, _layer(params, i), config.heads)
        maps.append(att)
    out = h @ params["decode.w"] + params["decode.b"]
    return depatchify(type(grid)(out, grid.scheme, grid.shape)), maps

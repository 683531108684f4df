"""Square, column-strip and row-strip tokenisation of ``C x H x W`` images.

Both directions are pure reshape/transpose plans, so the same code serves
NumPy arrays and differentiable :class:`~vitfill.tensor.Tensor` values, with
any number of leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

__all__ = ["PatchScheme", "TokenGrid", "PatchError", "token_count", "token_dim", "patchify", "depatchify"]

KINDS = ("square", "column", "row")


class PatchError(ValueError):
    pass


@dataclass(frozen=True)
class PatchScheme:
    """``square`` uses ``size x size`` blocks; ``column``/``row`` use full-length
    strips ``size`` pixels thick."""

    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PatchError(f"unknown patch kind {self.kind!r}; expected one of {KINDS}")
        if int(self.size) != self.size or self.size < 1:
            raise PatchError(f"patch size must be a positive integer, got {self.size!r}")

    @classmethod
    def parse(cls, text: str) -> "PatchScheme":
        kind, sep, size = text.strip().partition(":")
        if not sep or not size.isdigit():
            raise PatchError(f"patch scheme must look like 'square:16', 'column:2' or 'row:4', got {text!r}")
        return cls(kind.lower(), int(size))

    def __str__(self) -> str:
        return f"{self.kind}:{self.size}"

    def check(self, h: int, w: int) -> None:
        k = self.size
        bad = (
            (self.kind == "square" and (h % k or w % k))
            or (self.kind == "column" and w % k)
            or (self.kind == "row" and h % k)
        )
        if bad:
            raise PatchError(f"scheme {self} does not evenly divide a {h}x{w} image")


def token_count(scheme: PatchScheme, h: int, w: int) -> int:
    scheme.check(h, w)
    k = scheme.size
    if scheme.kind == "square":
        return (h // k) * (w // k)
    if scheme.kind == "column":
        return w // k
    return h // k


def token_dim(scheme: PatchScheme, c: int, h: int, w: int) -> int:
    scheme.check(h, w)
    k = scheme.size
    if scheme.kind == "square":
        return c * k * k
    if scheme.kind == "column":
        return c * h * k
    return c * k * w


def _plan(scheme: PatchScheme, c: int, h: int, w: int):
    """(split shape, axis permutation) over the trailing image axes."""
    k = scheme.size
    if scheme.kind == "square":
        return (c, h // k, k, w // k, k), (1, 3, 0, 2, 4)
    if scheme.kind == "column":
        return (c, h, w // k, k), (2, 0, 1, 3)
    return (c, h // k, k, w), (1, 0, 2, 3)


@dataclass
class TokenGrid:
    tokens: Any  # [B x] N x D_raw, ndarray or Tensor
    scheme: PatchScheme
    shape: tuple[int, int, int]


def patchify(x, scheme: PatchScheme) -> TokenGrid:
    """Tokens in raster order; each token flattened channel-major then row-major."""
    if x.ndim < 3:
        raise PatchError(f"patchify expects [B x] C x H x W, got shape {x.shape}")
    lead = tuple(x.shape[:-3])
    c, h, w = x.shape[-3:]
    n = token_count(scheme, h, w)
    split, perm = _plan(scheme, c, h, w)
    nl = len(lead)
    y = x.reshape(lead + split).transpose(tuple(range(nl)) + tuple(p + nl for p in perm))
    return TokenGrid(y.reshape(lead + (n, token_dim(scheme, c, h, w))), scheme, (c, h, w))


def depatchify(grid: TokenGrid):
    """Exact inverse of :func:`patchify`."""
    c, h, w = grid.shape
    t = grid.tokens
    n, d = token_count(grid.scheme, h, w), token_dim(grid.scheme, c, h, w)
    if t.ndim < 2 or tuple(t.shape[-2:]) != (n, d):
        raise PatchError(f"token matrix {t.shape} inconsistent with {grid.scheme} on {grid.shape}: want {n}x{d}")
    lead = tuple(t.shape[:-2])
    split, perm = _plan(grid.scheme, c, h, w)
    permuted = tuple(split[p] for p in perm)
    inv = tuple(int(i) for i in np.argsort(perm))
    nl = len(lead)
    y = t.reshape(lead + permuted).transpose(tuple(range(nl)) + tuple(p + nl for p in inv))
    return y.reshape(lead + (c, h, w))

"""Mask-replacement algebra.

``prefill`` builds the generator input ``X_R = X_vit*M + Y*(1-M)``;
``finalize`` forms ``Y_hat = X_vit*M + Y*(1-M) + G*M`` (or, with
``composition="replace"``, lets ``G`` stand in for the ViT fill inside the
hole). Known pixels pass through untouched in both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .masking import broadcast_mask

COMPOSITIONS = ("residual", "replace")


@dataclass
class ComposedInput:
    x_r: np.ndarray
    mask: np.ndarray


@dataclass
class Prediction:
    y_hat: np.ndarray
    composition: str


def _check(op: str, *images) -> None:
    ref = np.shape(images[0])
    for im in images[1:]:
        if np.shape(im) != ref:
            raise T.DimensionError(f"{op}: image shapes {ref} and {np.shape(im)} differ")


def prefill(x_vit, y, m) -> ComposedInput:
    x_vit, y = np.asarray(x_vit), np.asarray(y)
    _check("prefill", x_vit, y)
    mc = broadcast_mask(m, y.shape, "prefill")
    x_r = np.clip(x_vit, 0.0, 1.0) * mc + y * (1 - mc)
    return ComposedInput(x_r.astype(y.dtype, copy=False), np.asarray(m))


def finalize(x_vit, y, m, g_residual, composition: str = "residual") -> Prediction:
    if composition not in COMPOSITIONS:
        raise ValueError(f"composition must be one of {COMPOSITIONS}, got {composition!r}")
    x_vit, y, g_residual = np.asarray(x_vit), np.asarray(y), np.asarray(g_residual)
    _check("finalize", x_vit, y, g_residual)
    mc = broadcast_mask(m, y.shape, "finalize")
    if composition == "residual":
        y_hat = x_vit * mc + y * (1 - mc) + g_residual * mc
    else:
        y_hat = y * (1 - mc) + g_residual * mc
    return Prediction(np.clip(y_hat, 0.0, 1.0).astype(y.dtype, copy=False), composition)


def compose_for_training(x_vit: T.Tensor, y: np.ndarray, m: np.ndarray):
    """Differentiable ``X_R``; the fill is clamped before entering the generator."""
    mc = broadcast_mask(m, y.shape, "prefill")
    return T.clip(x_vit) * mc + y * (1 - mc)


def predict_for_training(x_vit, y: np.ndarray, m: np.ndarray, g_residual: T.Tensor, composition="residual"):
    """Unclamped ``Y_hat`` used by the loss so gradients never vanish at the clamp."""
    mc = broadcast_mask(m, y.shape, "finalize")
    known = y * (1 - mc)
    if composition == "replace" or x_vit is None:
        return T.add(T.mul(g_residual, mc), known)
    return T.mul(x_vit, mc) + known + T.mul(g_residual, mc)

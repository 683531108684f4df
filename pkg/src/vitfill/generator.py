"""Small all-convolutional inpainting generator and the reconstruction loss."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .masking import broadcast_mask
from .tensor import Tensor

WIDTHS = (32, 64, 32)


def init_generator(channels: int, seed: int = 0, widths=WIDTHS) -> dict[str, Tensor]:
    """Four 3x3 convs ``(C+1) -> w0 -> w1 -> w2 -> C`` with He-normal weights."""
    rng = np.random.default_rng(seed)
    sizes = [channels + 1, *widths, channels]
    params = {}
    for i, (cin, cout) in enumerate(zip(sizes[:-1], sizes[1:])):
        std = np.sqrt(2.0 / (cin * 9))
        params[f"conv{i}.w"] = T.parameter((rng.standard_normal((cout, cin, 3, 3)) * std).astype(np.float32))
        params[f"conv{i}.b"] = T.parameter(np.zeros(cout, dtype=np.float32))
    for name, t in params.items():
        t.name = name
    return params


def g_forward(x_r, mask, params: dict[str, Tensor]) -> Tensor:
    """Residual image from ``X_R`` with the mask appended as an extra plane."""
    x_r = x_r if isinstance(x_r, Tensor) else Tensor(np.asarray(x_r))
    m = broadcast_mask(mask, x_r.shape, "g_forward").astype(x_r.dtype)
    h = T.concat([x_r, m], axis=-3)
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = T.conv2d(h, params[f"conv{i}.w"], params[f"conv{i}.b"])
        if i < n_layers - 1:
            h = T.relu(h)
    return h


def reconstruction_loss(y_hat, y, m, lambda_known: float = 0.1) -> Tensor:
    """Masked-region MSE plus ``lambda_known`` times known-region MSE.

    Each term averages over its own pixel-channel entries; an empty region
    contributes 0.
    """
    if lambda_known < 0:
        raise ValueError("lambda_known must be >= 0")
    y_hat = y_hat if isinstance(y_hat, Tensor) else Tensor(np.asarray(y_hat))
    y = np.asarray(y)
    if y_hat.shape != y.shape:
        raise T.DimensionError(f"reconstruction_loss: prediction {y_hat.shape} vs target {y.shape}")
    mc = broadcast_mask(m, y.shape, "reconstruction_loss")
    channels = y.shape[-3]
    n_hole = float(np.sum(mc, dtype=np.float64)) * channels
    n_known = float(y.size) - n_hole
    err = T.square(y_hat - y)
    dt = y_hat.dtype.type
    w = np.zeros_like(mc, dtype=y_hat.dtype)
    if n_hole > 0:
        w = w + mc * dt(1.0 / n_hole)
    if n_known > 0 and lambda_known > 0:
        w = w + (1 - mc) * dt(lambda_known / n_known)
    return T.sum_all(T.mul(err, w))

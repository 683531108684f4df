"""Rectangular hole masks (1 = unknown pixel) and the zero-fill masking step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError


@dataclass(frozen=True)
class MaskSpec:
    max_h: int = 128
    max_w: int = 128
    min_h: int | None = None
    min_w: int | None = None
    count: int = 1

    def __post_init__(self):
        # resolve defaults so equal specs compare and serialise equal
        if self.min_h is None:
            object.__setattr__(self, "min_h", max(1, self.max_h // 4))
        if self.min_w is None:
            object.__setattr__(self, "min_w", max(1, self.max_w // 4))

    @property
    def lo_h(self) -> int:
        return self.min_h if self.min_h is not None else max(1, self.max_h // 4)

    @property
    def lo_w(self) -> int:
        return self.min_w if self.min_w is not None else max(1, self.max_w // 4)

    def validate(self, h: int, w: int) -> None:
        if self.count != 1:
            raise ValueError("only one hole per image is supported")
        if not (0 < self.lo_h <= self.max_h <= h and 0 < self.lo_w <= self.max_w <= w):
            raise ValueError(
                f"mask spec {self.lo_h}..{self.max_h} x {self.lo_w}..{self.max_w} invalid for a {h}x{w} image"
            )

    def to_dict(self) -> dict:
        return {"max_h": self.max_h, "max_w": self.max_w, "min_h": self.lo_h, "min_w": self.lo_w, "count": self.count}


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_mask(seed, h: int, w: int, spec: MaskSpec) -> np.ndarray:
    """One axis-aligned hole; size uniform in [min, max], top-left uniform.

    ``seed`` may be an int, a sequence of ints, or a ``Generator``.
    """
    spec.validate(h, w)
    rng = _rng(seed)
    hh = int(rng.integers(spec.lo_h, spec.max_h + 1))
    hw = int(rng.integers(spec.lo_w, spec.max_w + 1))
    top = int(rng.integers(0, h - hh + 1))
    left = int(rng.integers(0, w - hw + 1))
    m = np.zeros((h, w), dtype=np.float32)
    m[top : top + hh, left : left + hw] = 1.0
    return m


def apply_mask(y: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``X = Y * (1 - M)`` with ``M`` broadcast over channels."""
    y = np.asarray(y)
    mc = broadcast_mask(m, y.shape, "apply_mask")
    return y * (1 - mc)


def broadcast_mask(m, image_shape: tuple[int, ...], op: str = "mask") -> np.ndarray:
    """View an ``[B x] H x W`` mask as ``[B x] 1 x H x W`` after checking it fits the image."""
    m = np.asarray(m)
    if len(image_shape) < 3 or m.ndim != len(image_shape) - 1 or m.shape[:-2] != tuple(image_shape[:-3]) \
            or m.shape[-2:] != tuple(image_shape[-2:]):
        raise DimensionError(f"{op}: image {tuple(image_shape)} and mask {m.shape} disagree")
    return m[..., None, :, :]


def mask_to_png_bytes(m: np.ndarray) -> np.ndarray:
    return (np.asarray(m) > 0.5).astype(np.uint8) * 255

"""PNG loading/saving and deterministic corpus ingestion.

Images live in memory as float32 ``C x H x W`` arrays with values in [0, 1].
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

__all__ = [
    "ImageError",
    "ImageNotFoundError",
    "ImageDecodeError",
    "UnsupportedImageError",
    "CorpusError",
    "load_image",
    "save_image",
    "quantize",
    "resize_bilinear",
    "center_crop16",
    "Corpus",
    "CorpusItem",
    "ingest_corpus",
]


class ImageError(Exception):
    pass


class ImageNotFoundError(ImageError, FileNotFoundError):
    pass


class ImageDecodeError(ImageError):
    pass


class UnsupportedImageError(ImageError):
    pass


class CorpusError(ValueError):
    pass


_MODES = {"L": 1, "RGB": 3}


def load_image(path) -> np.ndarray:
    """Decode an 8-bit grayscale or RGB PNG into a ``C x H x W`` float32 array."""
    path = Path(path)
    if not path.is_file():
        raise ImageNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise UnsupportedImageError(f"{path}: expected PNG, got {im.format}")
            if im.mode not in _MODES:
                raise UnsupportedImageError(f"{path}: unsupported mode/bit depth {im.mode!r}")
            arr = np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, ImageError):
            raise
        raise ImageDecodeError(f"{path}: cannot decode ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return (arr.astype(np.float64) / 255.0).astype(np.float32)


def quantize(img: np.ndarray) -> np.ndarray:
    """Bytes that :func:`save_image` writes: round-half-up of ``v*255``, clamped."""
    v = np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in _MODES.values():
        raise ValueError(f"save_image: expected 1xHxW or 3xHxW, got {img.shape}")
    q = quantize(img)
    pil = Image.fromarray(q[0], "L") if q.shape[0] == 1 else Image.fromarray(q.transpose(1, 2, 0), "RGB")
    path = Path(path)
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling (first/last pixels map exactly)."""
    c, h, w = img.shape
    oh, ow = out_hw
    src = np.asarray(img, dtype=np.float64)

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(h, oh)
    x0, x1, fx = coords(w, ow)
    top = src[:, y0][:, :, x0] * (1 - fx) + src[:, y0][:, :, x1] * fx
    bot = src[:, y1][:, :, x0] * (1 - fx) + src[:, y1][:, :, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def center_crop16(img: np.ndarray) -> np.ndarray:
    """Centred crop to the largest region whose sides are multiples of 16."""
    _, h, w = img.shape
    ch, cw = (h // 16) * 16, (w // 16) * 16
    if ch == 0 or cw == 0:
        raise CorpusError(f"image {h}x{w} is smaller than 16x16")
    top, left = (h - ch) // 2, (w - cw) // 2
    return img[:, top : top + ch, left : left + cw]


@dataclass(frozen=True)
class CorpusItem:
    id: str
    path: str
    split: str


@dataclass
class Corpus:
    seed: int
    target: tuple[int, int]
    items: list[CorpusItem] = field(default_factory=list)

    def split(self, name: str) -> list[CorpusItem]:
        return [it for it in self.items if it.split == name]

    def load(self, name: str, channels: int = 3) -> tuple[list[str], np.ndarray]:
        """Decode one split to an ``N x C x H x W`` float32 batch."""
        items = self.split(name)
        batch = np.zeros((len(items), channels, *self.target), dtype=np.float32)
        for i, it in enumerate(items):
            batch[i] = prepare_image(load_image(it.path), self.target, channels)
        return [it.id for it in items], batch

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "target": list(self.target),
            "items": [{"id": it.id, "path": it.path, "split": it.split} for it in self.items],
        }
        return json.dumps(doc, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "Corpus":
        doc = json.loads(text)
        if set(doc) != {"seed", "target", "items"}:
            raise CorpusError(f"manifest keys must be seed/target/items, got {sorted(doc)}")
        items = [CorpusItem(d["id"], d["path"], d["split"]) for d in doc["items"]]
        return cls(int(doc["seed"]), tuple(doc["target"]), items)

    @classmethod
    def load_manifest(cls, path) -> "Corpus":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def prepare_image(img: np.ndarray, target: tuple[int, int], channels: int = 3) -> np.ndarray:
    img = resize_bilinear(center_crop16(img), target)
    if img.shape[0] == channels:
        return img
    if channels == 3:
        return np.repeat(img, 3, axis=0)
    luma = np.tensordot(np.array([0.299, 0.587, 0.114]), img.astype(np.float64), axes=1)
    return luma[None].astype(np.float32)


def ingest_corpus(
    directory,
    target_hw: tuple[int, int] = (64, 64),
    seed: int = 0,
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Corpus:
    """Sort PNGs lexicographically, shuffle with ``seed``, split train/val/test.

    Every file is decoded once so unreadable images fail here rather than
    mid-training.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError(f"not a directory: {directory}")
    if len(split_fractions) != 3 or any(f < 0 for f in split_fractions):
        raise CorpusError(f"split fractions must be three non-negative numbers, got {split_fractions}")
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise CorpusError(f"split fractions must sum to 1, got {sum(split_fractions)}")
    th, tw = target_hw
    if th <= 0 or tw <= 0 or th % 16 or tw % 16:
        raise CorpusError(f"target size {target_hw} must be positive multiples of 16")

    files = sorted(p for p in os.listdir(directory) if p.lower().endswith(".png"))
    if len(files) < 3:
        raise CorpusError(f"{directory}: need at least 3 PNG images, found {len(files)}")
    for name in files:
        img = load_image(directory / name)
        center_crop16(img)

    order = np.random.default_rng(seed).permutation(len(files))
    n = len(files)
    n_train = int(round(split_fractions[0] * n))
    n_val = min(int(round(split_fractions[1] * n)), n - n_train)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)
    items = [
        CorpusItem(Path(files[j]).stem, str(directory / files[j]), splits[k]) for k, j in enumerate(order)
    ]
    return Corpus(seed, (th, tw), items)

"""Procedural street/landscape scenes used as the bundled toy corpus.

Each image is a sky gradient over a ground band, with a skyline of window-grid
buildings, so both vertical and horizontal structure are present.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import save_image


def make_scene(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    h = w = size
    yy = np.linspace(0.0, 1.0, h)[:, None]
    img = np.zeros((3, h, w))
    sky_top = rng.uniform(0.35, 0.9, 3)
    sky_bot = np.clip(sky_top + rng.uniform(-0.3, 0.3, 3), 0, 1)
    for c in range(3):
        img[c] = sky_top[c] * (1 - yy) + sky_bot[c] * yy

    horizon = int(rng.integers(h // 2, 3 * h // 4))
    ground = rng.uniform(0.1, 0.6, 3)
    img[:, horizon:, :] = ground[:, None, None]
    # ground furrows
    period = int(rng.integers(3, 7))
    img[:, horizon::period, :] *= 0.8

    x = 0
    while x < w:
        bw = int(rng.integers(6, 17))
        top = int(rng.integers(size // 8, horizon - 4))
        wall = rng.uniform(0.15, 0.85, 3)
        img[:, top:horizon, x : x + bw] = wall[:, None, None]
        win = np.clip(wall + rng.choice([-0.35, 0.35]), 0, 1)
        step_y, step_x = int(rng.integers(3, 6)), int(rng.integers(3, 6))
        for wy in range(top + 2, horizon - 2, step_y):
            for wx in range(x + 1, min(x + bw, w) - 1, step_x):
                img[:, wy : wy + 1, wx : wx + 1] = win[:, None, None]
        x += bw + int(rng.integers(0, 6))

    img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def write_toy_corpus(directory, n: int = 200, seed: int = 0, size: int = 64) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        path = directory / f"scene_{i:03d}.png"
        save_image(make_scene(rng, size), path)
        paths.append(path)
    return paths

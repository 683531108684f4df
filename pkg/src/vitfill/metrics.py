"""PSNR, masked-region PSNR and Gaussian-window SSIM, plus CSV reports.

All reductions run in float64. Identical inputs give ``math.inf`` PSNR, which
is written as ``inf`` in reports and left out of the aggregate means.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .tensor import DimensionError

IDENTICAL = math.inf

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b, op):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _psnr_from_mse(mse: float, peak: float) -> float:
    if mse == 0:
        return IDENTICAL
    return 10.0 * math.log10(peak * peak / mse)


def psnr(a, b, peak: float = 1.0) -> float:
    if peak <= 0:
        raise ValueError("peak must be positive")
    a, b = _pair(a, b, "psnr")
    return _psnr_from_mse(float(np.mean((a - b) ** 2)), peak)


def psnr_masked(a, b, m, peak: float = 1.0) -> float:
    """PSNR with the MSE restricted to pixels where ``m`` is set (all channels)."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    a, b = _pair(a, b, "psnr_masked")
    sel = np.asarray(m) > 0.5
    if sel.shape != a.shape[-2:]:
        raise DimensionError(f"psnr_masked: mask {sel.shape} vs image {a.shape}")
    if not sel.any():
        raise ValueError("psnr_masked: mask has no set pixels")
    diff = (a - b)[..., sel]
    return _psnr_from_mse(float(np.mean(diff**2)), peak)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _ssim_plane(x: np.ndarray, y: np.ndarray, g: np.ndarray) -> float:
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    pad = len(g) // 2

    def blur(z):
        z = correlate1d(z, g, axis=0, mode="reflect")
        z = correlate1d(z, g, axis=1, mode="reflect")
        return z[pad:-pad, pad:-pad]

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Mean local SSIM over the valid region of an 11x11, sigma 1.5 Gaussian window.

    Accepts ``H x W`` or ``C x H x W`` in [0, 1]; multi-channel input is the mean
    of per-channel SSIM.
    """
    a, b = _pair(a, b, "ssim")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise DimensionError(f"ssim: expected H x W or C x H x W, got {a.shape}")
    if min(a.shape[-2:]) < SSIM_WIN:
        raise ValueError(f"ssim: image {a.shape[-2:]} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    g = gaussian_window()
    return float(np.mean([_ssim_plane(a[c], b[c], g) for c in range(a.shape[0])]))


@dataclass
class MetricsReport:
    ids: list[str] = field(default_factory=list)
    psnr_db: list[float] = field(default_factory=list)
    psnr_masked_db: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    fingerprint: str = ""

    def add(self, image_id: str, p: float, pm: float, s: float) -> None:
        self.ids.append(image_id)
        self.psnr_db.append(p)
        self.psnr_masked_db.append(pm)
        self.ssim.append(s)

    def __len__(self) -> int:
        return len(self.ids)

    @staticmethod
    def _stats(values) -> tuple[float, float]:
        finite = [v for v in values if math.isfinite(v)]
        if not finite:
            return IDENTICAL, 0.0
        arr = np.asarray(finite, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    def aggregate(self) -> dict[str, float]:
        out = {}
        for key in ("psnr_db", "psnr_masked_db", "ssim"):
            mean, std = self._stats(getattr(self, key))
            out[f"mean_{key}"] = mean
            out[f"std_{key}"] = std
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("id,psnr_db,psnr_masked_db,ssim\n")
        for row in zip(self.ids, self.psnr_db, self.psnr_masked_db, self.ssim):
            buf.write(",".join([row[0]] + [_fmt(v) for v in row[1:]]) + "\n")
        for key, value in self.aggregate().items():
            buf.write(f"# {key}={_fmt(value)}\n")
        buf.write(f"# count={len(self)}\n")
        if self.fingerprint:
            buf.write(f"# config={self.fingerprint}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"


def read_csv(path) -> MetricsReport:
    report = MetricsReport()
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "id,psnr_db,psnr_masked_db,ssim":
        raise ValueError(f"{path}: not a metrics CSV")
    for line in lines[1:]:
        if line.startswith("#"):
            if line.startswith("# config="):
                report.fingerprint = line[len("# config="):]
            continue
        image_id, p, pm, s = line.split(",")
        report.add(image_id, float(p), float(pm), float(s))
    return report

"""Image comparison metrics: SSIM, PSNR, Pearson correlation, contrast."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeMismatch
from .fields import RealImage


def _arr(img) -> np.ndarray:
    a = img.data if isinstance(img, RealImage) else np.asarray(img, dtype=np.float64)
    return a[:, :, None] if a.ndim == 2 else a


def _gaussian_taps(window: int, sigma: float) -> np.ndarray:
    r = np.arange(window) - (window - 1) / 2
    g = np.exp(-r * r / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(a: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = correlate1d(correlate1d(a, taps, axis=0, mode="constant"), taps, axis=1, mode="constant")
    r = len(taps) // 2
    return out[r:a.shape[0] - r, r:a.shape[1] - r]


def ssim_map(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
             k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> np.ndarray:
    taps = _gaussian_taps(window, sigma)
    c1, c2 = (k1 * dynamic_range) ** 2, (k2 * dynamic_range) ** 2
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    saa = _filter_valid(a * a, taps) - mu_a * mu_a
    sbb = _filter_valid(b * b, taps) - mu_b * mu_b
    sab = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    """Mean SSIM with an 11-tap Gaussian window (sigma 1.5), averaged over channels."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim needs equal shapes, got {a.shape} and {b.shape}")
    if min(a.shape[:2]) < window:
        raise ShapeMismatch(f"image smaller than the {window}px SSIM window")
    vals = [ssim_map(a[:, :, c], b[:, :, c], window, 1.5, k1, k2, dynamic_range).mean()
            for c in range(a.shape[2])]
    return float(np.mean(vals))


def psnr(a, b, dynamic_range: float = 1.0) -> float:
    """PSNR in dB; identical images give ``inf``."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr needs equal shapes, got {a.shape} and {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return float(10 * np.log10(dynamic_range ** 2 / mse))


def pearson(a, b) -> float:
    a, b = _arr(a).ravel(), _arr(b).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch("pearson needs equal shapes")
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / den, -1.0, 1.0))


def contrast(img) -> float:
    """std / mean over all pixels and channels."""
    a = _arr(img)
    m = a.mean()
    if m <= 0:
        raise ValueError("contrast needs a positive mean")
    return float(a.std() / m)


@dataclass(frozen=True)
class MetricReport:
    plane: str
    stage: str
    ssim: float
    psnr_db: float
    pearson_r: float
    contrast: float
    ssim_rgb: tuple
    contrast_rgb: tuple

    HEADER = ("plane,stage,ssim,psnr_db,pearson_r,contrast,"
              "ssim_r,ssim_g,ssim_b,contrast_r,contrast_g,contrast_b")

    def row(self) -> str:
        vals = [self.ssim, self.psnr_db, self.pearson_r, self.contrast, *self.ssim_rgb, *self.contrast_rgb]
        return ",".join([self.plane, self.stage] + [repr(float(v)) for v in vals])


def report(plane: str, stage: str, img, target) -> MetricReport:
    a, b = _arr(img), _arr(target)
    if a.shape[2] == 1 and b.shape[2] == 3:
        a = np.repeat(a, 3, axis=2)
    per_ssim = tuple(ssim(a[:, :, c], b[:, :, c]) for c in range(a.shape[2]))
    per_con = tuple(contrast(a[:, :, c]) for c in range(a.shape[2]))
    return MetricReport(plane, stage, ssim(a, b), psnr(a, b), pearson(a, b), contrast(a), per_ssim, per_con)


def reports_csv(reports) -> str:
    out = io.StringIO()
    out.write(MetricReport.HEADER + "\n")
    for r in reports:
        out.write(r.row() + "\n")
    return out.getvalue()

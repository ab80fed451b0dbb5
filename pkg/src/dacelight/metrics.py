"""Evaluation metrics: PSNR, SSIM, and mean CIEDE2000 color difference.

These run on plain arrays with no gradient tracking. The color pipeline
is 8-bit-normalized sRGB with the D65 white point, the universal default
when none is stated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import losses
from .tensor import Tensor


@dataclass
class MetricReport:
    psnr: float  # dB; inf when the images are identical
    ssim: float
    ciede2000: float


def _to_array(img) -> np.ndarray:
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    return arr.astype(np.float64, copy=False)


def psnr(a, b) -> float:
    """10*log10(1/MSE) for [0,1]-normalized images (peak = 1.0)."""
    a, b = _to_array(a), _to_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim_eval(a, b) -> float:
    """Same computation as the training SSIM, without gradient tracking."""
    return losses.ssim(Tensor(_to_array(a), dtype=np.float64),
                       Tensor(_to_array(b), dtype=np.float64)).item()


# -- CIEDE2000 ---------------------------------------------------------------

_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """[..., 3] sRGB in [0,1] -> CIE L*a*b* under D65."""
    rgb = np.asarray(rgb, dtype=np.float64)
    lin = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = lin @ _SRGB_TO_XYZ.T
    t = xyz / _D65_WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(t > eps, np.cbrt(t), t / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def delta_e_2000(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """CIEDE2000 color difference between [..., 3] Lab arrays.

    Follows the standard implementation notes (hue handling in degrees,
    the G chroma correction, and the rotation term).
    """
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    l1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    l2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    cbar7 = ((c1 + c2) / 2.0) ** 7
    pow25_7 = 25.0 ** 7
    g = 0.5 * (1.0 - np.sqrt(cbar7 / (cbar7 + pow25_7)))
    a1p, a2p = (1.0 + g) * a1, (1.0 + g) * a2
    c1p, c2p = np.hypot(a1p, b1), np.hypot(a2p, b2)

    def hue(ap, b):
        h = np.degrees(np.arctan2(b, ap))
        h = np.where(h < 0, h + 360.0, h)
        return np.where((ap == 0) & (b == 0), 0.0, h)

    h1p, h2p = hue(a1p, b1), hue(a2p, b2)
    zero_chroma = (c1p * c2p) == 0

    dl = l2 - l1
    dc = c2p - c1p
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(zero_chroma, 0.0, dh)
    dbig_h = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh / 2.0))

    lbar = (l1 + l2) / 2.0
    cbar = (c1p + c2p) / 2.0
    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    hbar = np.where(habs <= 180.0, hsum / 2.0,
                    np.where(hsum < 360.0, hsum / 2.0 + 180.0, hsum / 2.0 - 180.0))
    hbar = np.where(zero_chroma, hsum, hbar)

    t = (1.0 - 0.17 * np.cos(np.radians(hbar - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * hbar))
         + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0)))
    dtheta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    rc = 2.0 * np.sqrt(cbar ** 7 / (cbar ** 7 + pow25_7))
    sl = 1.0 + 0.015 * (lbar - 50.0) ** 2 / np.sqrt(20.0 + (lbar - 50.0) ** 2)
    sc = 1.0 + 0.045 * cbar
    sh = 1.0 + 0.015 * cbar * t
    rt = -np.sin(np.radians(2.0 * dtheta)) * rc

    return np.sqrt((dl / sl) ** 2 + (dc / sc) ** 2 + (dbig_h / sh) ** 2
                   + rt * (dc / sc) * (dbig_h / sh))


def ciede2000(a, b) -> float:
    """Mean per-pixel CIEDE2000 between two [3,H,W] sRGB images."""
    a, b = _to_array(a), _to_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    lab_a = srgb_to_lab(np.moveaxis(a, 0, -1))
    lab_b = srgb_to_lab(np.moveaxis(b, 0, -1))
    return float(delta_e_2000(lab_a, lab_b).mean())


def evaluate_pair(pred, gt) -> MetricReport:
    return MetricReport(psnr=psnr(pred, gt), ssim=ssim_eval(pred, gt),
                        ciede2000=ciede2000(pred, gt))


def write_report(rows: Iterable[tuple[str, MetricReport]], path) -> None:
    """CSV with one row per image pair plus a mean summary row."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "psnr", "ssim", "ciede2000"])
        for name, rep in rows:
            writer.writerow([name, repr(rep.psnr), repr(rep.ssim),
                             repr(rep.ciede2000)])
        if rows:
            writer.writerow([
                "mean",
                repr(float(np.mean([r.psnr for _, r in rows]))),
                repr(float(np.mean([r.ssim for _, r in rows]))),
                repr(float(np.mean([r.ciede2000 for _, r in rows]))),
            ])

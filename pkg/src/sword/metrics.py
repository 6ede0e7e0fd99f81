"""Image quality metrics: MSE, PSNR and Gaussian-window SSIM."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgument

SSIM_SIGMA = 1.5
SSIM_WIN = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    mse: float
    data_range: float

    def as_dict(self):
        d = asdict(self)
        if math.isinf(d["psnr_db"]):
            d["psnr_db"] = "inf"
        return d


def _pair(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _range(ref, data_range):
    if data_range is None:
        data_range = float(ref.max() - ref.min())
    if not data_range > 0:
        raise InvalidArgument(f"data_range must be positive, got {data_range}")
    return float(data_range)


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, data_range=None) -> float:
    """PSNR in dB; ``b`` is the reference whose range is used by default."""
    a, b = _pair(a, b)
    data_range = _range(b, data_range)
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / err)


def ssim(a, b, data_range=None) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over valid positions."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WIN:
        raise InvalidArgument(f"SSIM needs 2-D images of at least {SSIM_WIN} pixels per side")
    data_range = _range(b, data_range)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    truncate = (SSIM_WIN // 2) / SSIM_SIGMA

    def blur(x):
        return gaussian_filter(x, SSIM_SIGMA, truncate=truncate, mode="constant")

    mu_a, mu_b = blur(a), blur(b)
    saa = blur(a * a) - mu_a**2
    sbb = blur(b * b) - mu_b**2
    sab = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    pad = SSIM_WIN // 2
    smap = (num / den)[pad:-pad, pad:-pad]
    return float(smap.mean())


def evaluate(recon, ref, data_range=None) -> MetricReport:
    ref_arr = np.asarray(getattr(ref, "data", ref), dtype=np.float64)
    dr = _range(ref_arr, data_range)
    return MetricReport(psnr(recon, ref, dr), ssim(recon, ref, dr), mse(recon, ref), dr)

"""Reconstruction quality and throughput summaries."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

__all__ = ["mse", "psnr", "ssim", "video_ssim", "summarize_chunk_times"]

PSNR_CAP_DB = 100.0
_SSIM_WIN = 7
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE), capped at 100 dB for near-exact matches."""
    err = mse(a, b)
    if err < 1e-10:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(peak * peak / err)))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity of two single-channel images, uniform 7x7
    window, standard stability constants, reflect-padded boundaries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"want matching 2-d images, got {a.shape} vs {b.shape}")
    mu_a = uniform_filter(a, _SSIM_WIN)
    mu_b = uniform_filter(b, _SSIM_WIN)
    var_a = uniform_filter(a * a, _SSIM_WIN) - mu_a * mu_a
    var_b = uniform_filter(b * b, _SSIM_WIN) - mu_b * mu_b
    cov = uniform_filter(a * b, _SSIM_WIN) - mu_a * mu_b
    num = (2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return float(np.mean(num / den))


def video_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over frames and channels of [T, H, W, C] videos."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 4:
        raise ValueError(f"want matching [T,H,W,C] videos, got {a.shape} vs {b.shape}")
    vals = [ssim(a[t, :, :, c], b[t, :, :, c])
            for t in range(a.shape[0]) for c in range(a.shape[3])]
    return float(np.mean(vals))


def summarize_chunk_times(times_s, frames_per_chunk: int, warmup: int = 0) -> dict:
    """Latency summary with the first ``warmup`` chunks discarded."""
    times = np.asarray(times_s, dtype=np.float64)[warmup:]
    if times.size == 0:
        raise ValueError("no chunk timings left after warmup discard")
    mean_s = float(times.mean())
    return {
        "chunk_ms_mean": mean_s * 1e3,
        "chunk_ms_p95": float(np.percentile(times, 95)) * 1e3,
        "fps": frames_per_chunk / mean_s,
        "n": int(times.size),
    }

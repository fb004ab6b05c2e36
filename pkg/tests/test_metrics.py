"""Metric definitions checked against closed forms and a naive SSIM oracle."""

import numpy as np
import pytest

from streamfx import metrics as M
from streamfx.rng import stream


def test_mse_and_psnr_closed_forms():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    assert M.mse(a, b) == pytest.approx(0.01)
    assert M.psnr(a, b) == pytest.approx(20.0)  # 10 log10(1 / 0.01)
    assert M.psnr(a, b, peak=2.0) == pytest.approx(20.0 + 10 * np.log10(4.0))


def test_psnr_caps_at_100db_for_identical_inputs():
    a = stream(60, "psnr").random((8, 8))
    assert M.psnr(a, a) == 100.0
    assert M.psnr(a, a + 1e-9) == 100.0  # mse ~1e-18 under the cap threshold


def test_psnr_monotone_in_error():
    rng = stream(61, "mono")
    a = rng.random((16, 16))
    last = np.inf
    for scale in (0.01, 0.05, 0.2):
        p = M.psnr(a, a + scale)
        assert p < last
        last = p


def test_mismatched_shapes_rejected():
    with pytest.raises(ValueError):
        M.mse(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        M.ssim(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(ValueError):
        M.video_ssim(np.zeros((2, 8, 8, 3)), np.zeros((2, 8, 8)))


def _ssim_reference(a, b, win=7):
    """Naive loop over padded windows; independent of the scipy path.

    numpy's "symmetric" padding (edge pixel duplicated) is what scipy's
    uniform_filter calls "reflect"."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    pad = win // 2
    ap = np.pad(a, pad, mode="symmetric")
    bp = np.pad(b, pad, mode="symmetric")
    vals = np.empty_like(a, dtype=np.float64)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            wa = ap[i:i + win, j:j + win]
            wb = bp[i:i + win, j:j + win]
            ma, mb = wa.mean(), wb.mean()
            va, vb = wa.var(), wb.var()
            cov = ((wa - ma) * (wb - mb)).mean()
            vals[i, j] = ((2 * ma * mb + c1) * (2 * cov + c2)
                          / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(vals.mean())


def test_ssim_matches_naive_window_oracle():
    rng = stream(62, "ssimref")
    a = rng.random((12, 14))
    b = np.clip(a + 0.15 * rng.standard_normal((12, 14)), 0, 1)
    assert M.ssim(a, b) == pytest.approx(_ssim_reference(a, b), abs=1e-9)


def test_ssim_identity_and_degradation():
    rng = stream(63, "ssimdeg")
    a = rng.random((16, 16))
    assert M.ssim(a, a) == pytest.approx(1.0)
    light = M.ssim(a, np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1))
    heavy = M.ssim(a, np.clip(a + 0.5 * rng.standard_normal(a.shape), 0, 1))
    assert heavy < light < 1.0


def test_video_ssim_averages_frames_and_channels():
    rng = stream(64, "vssim")
    a = rng.random((3, 16, 16, 2))
    assert M.video_ssim(a, a) == pytest.approx(1.0)
    b = a.copy()
    b[1, :, :, 0] = rng.random((16, 16))
    per = [M.ssim(a[t, :, :, c], b[t, :, :, c]) for t in range(3) for c in range(2)]
    assert M.video_ssim(a, b) == pytest.approx(np.mean(per))


def test_chunk_time_summary_discards_warmup():
    times = [1.0, 1.0, 0.1, 0.1, 0.1, 0.1]  # slow warmup chunks
    out = M.summarize_chunk_times(times, frames_per_chunk=2, warmup=2)
    assert out["n"] == 4
    assert out["chunk_ms_mean"] == pytest.approx(100.0)
    assert out["fps"] == pytest.approx(20.0)
    assert out["chunk_ms_p95"] >= out["chunk_ms_mean"]
    with pytest.raises(ValueError):
        M.summarize_chunk_times([1.0], frames_per_chunk=2, warmup=5)

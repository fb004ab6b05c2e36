"""Synthetic paired videos: moving Gaussian blobs plus deterministic effects.

Source videos are closed-form in the absolute frame index, so any frame
range of a given seed can be rendered independently and bitwise-matches the
same range of the full clip. Every effect is a per-frame map (some indexed
by absolute frame number), which keeps effect application commutative with
temporal cropping; the streaming path depends on both properties.

Pixel values live in [0, 1]; the flow model works on latents in [-1, 1]
(``to_latent``/``from_latent``). The latent space IS pixel space here, by
design; there is no learned autoencoder in the desk-scale setup.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import stream

__all__ = ["WorldConfig", "N_EFFECTS", "EFFECT_NAMES", "make_video",
           "make_frames", "apply_effect", "make_pair", "pick_reference",
           "to_latent", "from_latent", "dump_dataset", "read_index",
           "load_sample"]

N_EFFECTS = 4
EFFECT_NAMES = ("invert", "ring", "pulse", "checker")

_RING_COLOR = np.array([0.9, 0.2, 0.1], dtype=np.float32)
_RING_RADIUS = 4.0
_RING_WIDTH = 1.2
_PULSE_FREQ = 0.15
_CHECKER_OPACITY = 0.3


@dataclass(frozen=True)
class WorldConfig:
    height: int = 8
    width: int = 8
    channels: int = 3
    n_frames: int = 10
    n_blobs: int = 3

    def __post_init__(self):
        if self.channels != 3:
            raise ValueError("effects are defined for 3-channel video")


def _video_params(cfg: WorldConfig, seed: int) -> dict:
    """All stochastic choices for one source clip, in one named stream."""
    rng = stream(seed, "world")
    blobs = []
    for _ in range(cfg.n_blobs):
        blobs.append({
            "color": rng.uniform(0.3, 1.0, size=3),
            "sigma": rng.uniform(1.5, 3.0),
            "p0": rng.uniform(0, [cfg.height, cfg.width]),
            "vel": rng.uniform(-1.5, 1.5, size=2),
            "amp": rng.uniform(0.0, 3.0, size=2),
            "freq": rng.uniform(0.05, 0.3, size=2),
            "phase": rng.uniform(0.0, 2 * np.pi, size=2),
        })
    lo = rng.uniform(0.05, 0.3, size=3)
    hi = rng.uniform(0.2, 0.45, size=3)
    mix = rng.uniform(0.0, 1.0, size=3)
    return {"blobs": blobs, "bg": (lo, hi, mix)}


def _background(cfg: WorldConfig, bg_params) -> np.ndarray:
    lo, hi, mix = bg_params
    yy = np.linspace(0.0, 1.0, cfg.height)[:, None]
    xx = np.linspace(0.0, 1.0, cfg.width)[None, :]
    out = np.empty((cfg.height, cfg.width, 3), dtype=np.float32)
    for c in range(3):
        ramp = mix[c] * yy + (1.0 - mix[c]) * xx
        out[:, :, c] = lo[c] + (hi[c] - lo[c]) * ramp
    return out


def _reflect(p: np.ndarray, extent: float) -> np.ndarray:
    """Triangle-wave reflection keeps trajectories inside [0, extent)."""
    m = np.mod(p, 2.0 * extent)
    return np.where(m < extent, m, 2.0 * extent - m)


def make_frames(cfg: WorldConfig, seed: int, t_start: int, t_stop: int) -> np.ndarray:
    """Render frames [t_start, t_stop) of clip ``seed``; [N, H, W, 3] in [0, 1]."""
    params = _video_params(cfg, seed)
    bg = _background(cfg, params["bg"])
    yy = np.arange(cfg.height, dtype=np.float32)[:, None]
    xx = np.arange(cfg.width, dtype=np.float32)[None, :]
    frames = np.empty((t_stop - t_start, cfg.height, cfg.width, 3), dtype=np.float32)
    for i, t in enumerate(range(t_start, t_stop)):
        frame = bg.copy()
        for blob in params["blobs"]:
            pos = (blob["p0"] + blob["vel"] * t
                   + blob["amp"] * np.sin(blob["freq"] * t + blob["phase"]))
            cy = _reflect(pos[0], cfg.height - 1.0)
            cx = _reflect(pos[1], cfg.width - 1.0)
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            brush = np.exp(-d2 / (2.0 * blob["sigma"] ** 2)).astype(np.float32)
            frame += brush[:, :, None] * blob["color"].astype(np.float32)
        frames[i] = np.clip(frame, 0.0, 1.0)
    return frames


def make_video(cfg: WorldConfig, seed: int, n_frames: int | None = None) -> np.ndarray:
    return make_frames(cfg, seed, 0, cfg.n_frames if n_frames is None else n_frames)


def _effect_invert(video: np.ndarray, frame_offset: int) -> np.ndarray:
    return 1.0 - video


def _effect_ring(video: np.ndarray, frame_offset: int) -> np.ndarray:
    """Additive ring around the brightest pixel of each frame."""
    out = video.copy()
    h, w = video.shape[1:3]
    yy = np.arange(h, dtype=np.float32)[:, None]
    xx = np.arange(w, dtype=np.float32)[None, :]
    for i in range(video.shape[0]):
        lum = video[i].mean(axis=-1)
        cy, cx = np.unravel_index(int(lum.argmax()), lum.shape)
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        ring = np.exp(-((dist - _RING_RADIUS) ** 2) / (2.0 * _RING_WIDTH ** 2))
        out[i] = np.clip(out[i] + ring[:, :, None] * _RING_COLOR, 0.0, 1.0)
    return out


def _effect_pulse(video: np.ndarray, frame_offset: int) -> np.ndarray:
    """Global brightness oscillation driven by the absolute frame index."""
    t = np.arange(video.shape[0], dtype=np.float32) + frame_offset
    gain = 0.75 + 0.25 * np.sin(2.0 * np.pi * _PULSE_FREQ * t)
    return (video * gain[:, None, None, None]).astype(np.float32)


def _effect_checker(video: np.ndarray, frame_offset: int) -> np.ndarray:
    h, w = video.shape[1:3]
    tiles = ((np.arange(h)[:, None] // 2 + np.arange(w)[None, :] // 2) % 2)
    board = tiles.astype(np.float32)[None, :, :, None]
    return ((1.0 - _CHECKER_OPACITY) * video + _CHECKER_OPACITY * board).astype(np.float32)


_EFFECTS = (_effect_invert, _effect_ring, _effect_pulse, _effect_checker)


def apply_effect(video: np.ndarray, effect_id: int, frame_offset: int = 0) -> np.ndarray:
    """Transform a [N, H, W, 3] clip; ``frame_offset`` is the absolute index
    of the first frame so chunked application matches whole-clip application."""
    if not 0 <= effect_id < N_EFFECTS:
        raise ValueError(f"effect_id must be in [0, {N_EFFECTS}), got {effect_id}")
    out = _EFFECTS[effect_id](np.asarray(video, dtype=np.float32), frame_offset)
    return out.astype(np.float32)


def make_pair(cfg: WorldConfig, seed: int, effect_id: int) -> tuple[np.ndarray, np.ndarray]:
    x = make_video(cfg, seed)
    return x, apply_effect(x, effect_id)


def pick_reference(y: np.ndarray, seed: int, eval_mode: bool = False) -> np.ndarray:
    """Reference frame: first output frame at eval time, a uniformly random
    output frame during training (its own RNG stream)."""
    if eval_mode:
        return y[0]
    rng = stream(seed, "refpick")
    return y[int(rng.integers(0, y.shape[0]))]


def to_latent(video: np.ndarray) -> np.ndarray:
    return (2.0 * np.asarray(video, dtype=np.float32) - 1.0).astype(np.float32)


def from_latent(z: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(z, dtype=np.float32) + 1.0) / 2.0, 0.0, 1.0)


# ---- on-disk dataset -----------------------------------------------------------


def dump_dataset(cfg: WorldConfig, out_dir, n_samples: int, base_seed: int,
                 effects=None) -> Path:
    """Write paired clips as .npz plus an index CSV (seed, effect_id, path)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    effects = list(range(N_EFFECTS)) if effects is None else list(effects)
    index = out / "index.csv"
    with open(index, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", "effect_id", "path"])
        for i in range(n_samples):
            seed = base_seed + i
            effect = effects[i % len(effects)]
            x, y = make_pair(cfg, seed, effect)
            rel = f"sample_{i:05d}.npz"
            np.savez(out / rel, x=x, y=y)
            writer.writerow([seed, effect, rel])
    return index


def read_index(index_path) -> list[dict]:
    with open(index_path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["effect_id"] = int(r["effect_id"])
    return rows


def load_sample(index_path, row: dict) -> tuple[np.ndarray, np.ndarray]:
    with np.load(Path(index_path).parent / row["path"]) as d:
        return d["x"], d["y"]

"""Streaming inference: a stateful session turning input chunks into output
chunks in arrival order, with online effect switching at chunk boundaries.

The session owns a detached KV cache (reference pinned, rolling window of
finished super-chunks) and never sees ground-truth outputs; everything it
attends to beyond the reference is its own history.
"""

from __future__ import annotations

import time

import numpy as np

from . import tensor as T
from .distill import CFG_SCALE, SHIFTED_SCHEDULE, sample_chunk, zero_reference
from .layout import patchify, unpatchify
from .model import (DenoiserConfig, KVCache, encode_chunk, encode_reference)
from .rng import stream
from .tensor import Tensor
from .toyworld import WorldConfig, apply_effect, from_latent, make_frames, to_latent

__all__ = ["StreamSession", "offline_generate", "bench_stream", "world_for"]


def world_for(cfg: DenoiserConfig, n_frames: int) -> WorldConfig:
    return WorldConfig(height=cfg.height, width=cfg.width, n_frames=n_frames)


class StreamSession:
    """Chunk-in, chunk-out generation against a rolling KV cache.

    ``set_effect`` takes hold at the next chunk boundary: the pinned
    conditional reference entry is re-encoded under the new label while the
    generated history stays as it was, matching how a live stream would
    experience a condition switch.
    """

    def __init__(self, params, cfg: DenoiserConfig, ref_frame: np.ndarray,
                 effect_id: int, schedule=SHIFTED_SCHEDULE,
                 guidance: float = CFG_SCALE, noise_seed: int = 0,
                 window: int | None = None):
        if not 0 <= effect_id < cfg.n_effects:
            raise ValueError(f"effect_id {effect_id} out of range")
        window = cfg.window if window is None else int(window)
        if not 1 <= window <= cfg.window:
            # position slots are allocated per cfg.window; a larger cache
            # would alias two live chunks onto one slot id
            raise ValueError(f"window must be in [1, {cfg.window}], got {window}")
        self.params = params
        self.cfg = cfg
        self.schedule = tuple(schedule)
        self.guidance = float(guidance)
        self.noise_seed = noise_seed
        self.effect_id = int(effect_id)
        self.chunk_index = 0
        self.chunk_times: list[float] = []
        self.cache = KVCache(window)
        with T.no_grad():
            self.cache.ref_uncond = encode_reference(params, cfg,
                                                     zero_reference(cfg),
                                                     cfg.null_label)
        self._set_ref_tokens(ref_frame)
        self.cache.detach_all()

    def _set_ref_tokens(self, ref_frame: np.ndarray) -> None:
        ref_frame = np.asarray(ref_frame, dtype=np.float32)
        if ref_frame.shape != (self.cfg.height, self.cfg.width, self.cfg.channels):
            raise ValueError(f"reference frame shape {ref_frame.shape} != "
                             f"{(self.cfg.height, self.cfg.width, self.cfg.channels)}")
        self._ref_tokens = self._to_tokens(ref_frame[None], is_ref=True)
        with T.no_grad():
            self.cache.ref_cond = encode_reference(self.params, self.cfg,
                                                   self._ref_tokens, self.effect_id)

    def _to_tokens(self, frames: np.ndarray, is_ref: bool = False) -> Tensor:
        with T.no_grad():
            tok = patchify(Tensor(to_latent(frames)))
            n = self.cfg.n_ref if is_ref else self.cfg.chunk_tokens
            return T.reshape(tok, (1, n, self.cfg.token_dim))

    def set_effect(self, effect_id: int) -> None:
        effect_id = int(effect_id)
        if not 0 <= effect_id < self.cfg.n_effects:
            raise ValueError(f"effect_id {effect_id} out of range")
        if effect_id == self.effect_id:
            return
        self.effect_id = effect_id
        with T.no_grad():
            self.cache.ref_cond = encode_reference(self.params, self.cfg,
                                                   self._ref_tokens, effect_id)
        self.cache.detach_all()

    def set_reference(self, ref_frame: np.ndarray) -> None:
        """Swap the reference keyframe; takes effect from the next chunk."""
        self._set_ref_tokens(ref_frame)
        self.cache.detach_all()

    def push_chunk(self, frames: np.ndarray) -> np.ndarray:
        """Generate the output chunk for one [chunk_frames, H, W, C] input."""
        cfg = self.cfg
        frames = np.asarray(frames, dtype=np.float32)
        want = (cfg.chunk_frames, cfg.height, cfg.width, cfg.channels)
        if frames.shape != want:
            raise ValueError(f"chunk shape {frames.shape} != {want}")
        started = time.perf_counter()
        idx = self.chunk_index
        x_tok = self._to_tokens(frames)
        noise = stream(self.noise_seed, "stream-noise", idx).standard_normal(
            (1, cfg.chunk_tokens, cfg.token_dim)).astype(np.float32)
        with T.no_grad():
            y_tok, _, _ = sample_chunk(self.params, cfg, self.cache, x_tok,
                                       self.effect_id, idx, noise,
                                       self.schedule, self.guidance)
            entry = encode_chunk(self.params, cfg, self.cache, x_tok, y_tok,
                                 self.effect_id, idx)
            self.cache.append_chunk(entry.detach())
            out = unpatchify(T.reshape(y_tok, (cfg.chunk_tokens, cfg.token_dim)),
                             cfg.chunk_frames, cfg.height, cfg.width,
                             cfg.channels).data
        self.chunk_index = idx + 1
        self.chunk_times.append(time.perf_counter() - started)
        return from_latent(out)


def offline_generate(params, cfg: DenoiserConfig, world: WorldConfig,
                     clip_seed: int, effect_id: int, schedule=SHIFTED_SCHEDULE,
                     guidance: float = CFG_SCALE, noise_seed: int = 0) -> dict:
    """Run a whole paired clip through a fresh session (evaluation path).

    The reference is the first ground-truth output frame; the model sees only
    that single frame plus the input chunks.
    """
    x = make_frames(world, clip_seed, 0, world.n_frames)
    y_true = apply_effect(x, effect_id)
    session = StreamSession(params, cfg, y_true[0], effect_id,
                            schedule=schedule, guidance=guidance,
                            noise_seed=noise_seed)
    chunks = []
    for i in range(world.n_frames // cfg.chunk_frames):
        chunks.append(session.push_chunk(
            x[i * cfg.chunk_frames:(i + 1) * cfg.chunk_frames]))
    return {"x": x, "y_true": y_true, "y_hat": np.concatenate(chunks, axis=0),
            "session": session}


def bench_stream(params, cfg: DenoiserConfig, n_chunks: int,
                 schedule=SHIFTED_SCHEDULE, guidance: float = CFG_SCALE,
                 clip_seed: int = 777, effect_id: int = 0) -> list[float]:
    """Per-chunk wall times for a long synthetic stream (source rendering is
    excluded from the timed section by pre-rendering each chunk)."""
    world = world_for(cfg, cfg.chunk_frames)
    first = make_frames(world, clip_seed, 0, 1)
    ref = apply_effect(first, effect_id)[0]
    session = StreamSession(params, cfg, ref, effect_id, schedule=schedule,
                            guidance=guidance)
    for i in range(n_chunks):
        frames = make_frames(world, clip_seed, i * cfg.chunk_frames,
                             (i + 1) * cfg.chunk_frames)
        session.push_chunk(frames)
    return session.chunk_times

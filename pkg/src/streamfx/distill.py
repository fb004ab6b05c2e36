"""Training objectives: flow matching, causal forcing, on-policy distillation.

Three phases share the denoiser weights:

* teacher: bidirectional flow matching, one timestep per clip;
* stage 1: block-causal forcing with independent per-super-chunk timesteps
  (some chunks held clean so the model learns to read finished context);
* stage 2: the model runs its own few-step guided sampler chunk by chunk,
  cache and all, and every intermediate x0 prediction is pulled toward the
  paired target with SNR weighting. Gradients flow through the rollout,
  including cached history; only the classifier-free unconditional branch
  is stopped.

With one super-chunk and no clean-context draws, the stage-1 objective is
definitionally the teacher objective; the RNG streams are tagged so that
reduction is exact and tested.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .flow import TIME_HI, TIME_LO, euler_step, x0_from_velocity
from .layout import Layout, bidirectional_mask, block_causal_mask, patchify
from .model import (DenoiserConfig, KVCache, denoise_forward, encode_chunk,
                    encode_reference, forward_chunk, full_context_meta)
from .rng import stream
from .tensor import Tensor
from .toyworld import (WorldConfig, apply_effect, make_video, pick_reference,
                       to_latent)

__all__ = ["SHIFTED_SCHEDULE", "CFG_SCALE", "P_DROP_REF", "P_DROP_LABEL",
           "P_CLEAN", "snr_weights", "condition_dropout_draws",
           "draw_chunk_time", "build_batch", "teacher_loss", "stage1_loss",
           "dual_pass_cfg", "sample_chunk", "self_forcing_rollout",
           "stage2_loss", "uniform_schedule", "zero_reference"]

# few-step sampling grid, noise-heavy end stretched toward t=1
SHIFTED_SCHEDULE = (0.999, 0.937, 0.833, 0.624, 0.0)
CFG_SCALE = 5.0
P_DROP_REF = 0.5
P_DROP_LABEL = 0.1
P_CLEAN = 0.2


def snr_weights(ts) -> np.ndarray:
    """Per-timestep loss weight (1-t)^2 / t^2: late (low-noise) predictions
    dominate, the near-pure-noise step is effectively free."""
    ts = np.asarray(ts, dtype=np.float64)
    return ((1.0 - ts) / ts) ** 2


def uniform_schedule(n_steps: int) -> tuple[float, ...]:
    """Evenly spaced sampling grid from TIME_HI down to 0 (many-step baseline)."""
    return tuple(np.linspace(TIME_HI, 0.0, n_steps + 1).tolist())


def condition_dropout_draws(seed: int, step: int, sample: int) -> tuple[bool, bool]:
    """Independent reference / label ablation decisions for one sample."""
    drop_ref = stream(seed, "drop-ref", step, sample).random() < P_DROP_REF
    drop_label = stream(seed, "drop-label", step, sample).random() < P_DROP_LABEL
    return bool(drop_ref), bool(drop_label)


def draw_chunk_time(seed: int, step: int, sample: int, chunk: int) -> float:
    rng = stream(seed, "t", step, sample, chunk)
    return float(rng.uniform(TIME_LO, TIME_HI))


def zero_reference(cfg: DenoiserConfig, batch_size: int = 1,
                   dtype=np.float32) -> Tensor:
    return Tensor(np.zeros((batch_size, cfg.n_ref, cfg.token_dim), dtype=dtype))


def _pdtype(params) -> np.dtype:
    """Parameter dtype; float64 only in finite-difference test mode."""
    return params["embed.w"].data.dtype


# ---- data assembly -------------------------------------------------------------


def sample_tokens(cfg: DenoiserConfig, world: WorldConfig, seed: int,
                  effect_id: int, eval_mode: bool = False) -> dict:
    """One paired clip as latent tokens, split into super-chunks."""
    if world.n_frames % cfg.chunk_frames:
        raise ValueError(f"{world.n_frames} frames not divisible into "
                         f"{cfg.chunk_frames}-frame chunks")
    m = world.n_frames // cfg.chunk_frames
    x = make_video(world, seed)
    y = apply_effect(x, effect_id)
    ref = pick_reference(y, seed, eval_mode=eval_mode)
    with T.no_grad():
        ref_tok = patchify(Tensor(to_latent(ref[None]))).data
        xs = np.stack([patchify(Tensor(to_latent(
            x[i * cfg.chunk_frames:(i + 1) * cfg.chunk_frames]))).data
            for i in range(m)])
        ys = np.stack([patchify(Tensor(to_latent(
            y[i * cfg.chunk_frames:(i + 1) * cfg.chunk_frames]))).data
            for i in range(m)])
    return {"seed": seed, "effect": effect_id, "ref": ref_tok, "xs": xs, "ys": ys}


def build_batch(cfg: DenoiserConfig, world: WorldConfig, seeds, effects,
                eval_mode: bool = False) -> list[dict]:
    return [sample_tokens(cfg, world, s, e, eval_mode)
            for s, e in zip(seeds, effects)]


# ---- forcing losses ------------------------------------------------------------


def _forcing_loss(params, cfg: DenoiserConfig, batch, *, seed: int, step: int,
                  per_chunk_t: bool, causal: bool, p_clean: float):
    b_n = len(batch)
    m = batch[0]["xs"].shape[0]
    layout = Layout(cfg.n_ref, cfg.chunk_tokens, m)
    L = layout.total_tokens
    dt = cfg.token_dim

    fdt = _pdtype(params)
    tokens = np.zeros((b_n, L, dt), dtype=fdt)
    target = np.zeros((b_n, L, dt), dtype=fdt)
    weight = np.zeros((b_n, L, 1), dtype=fdt)
    t_tok = np.zeros((b_n, L), dtype=np.float32)
    labels = np.zeros(b_n, dtype=np.int64)
    t_drawn = np.zeros((b_n, m), dtype=np.float32)

    for i, sample in enumerate(batch):
        drop_ref, drop_label = condition_dropout_draws(seed, step, i)
        labels[i] = cfg.null_label if drop_label else sample["effect"]
        if not drop_ref:
            tokens[i, layout.ref_slice()] = sample["ref"]
        clip_t = draw_chunk_time(seed, step, i, 0)
        for c in range(m):
            tokens[i, layout.x_slice(c)] = sample["xs"][c]
            t_c = draw_chunk_time(seed, step, i, c) if per_chunk_t else clip_t
            if p_clean > 0.0 and stream(seed, "clean", step, i, c).random() < p_clean:
                t_c = 0.0
            t_drawn[i, c] = t_c
            y_c = sample["ys"][c]
            if t_c == 0.0:
                # finished-context chunk: clean tokens, no supervision
                tokens[i, layout.y_slice(c)] = y_c
                continue
            eps = stream(seed, "eps", step, i, c).standard_normal(
                y_c.shape).astype(fdt)
            tokens[i, layout.y_slice(c)] = (1.0 - t_c) * y_c + t_c * eps
            target[i, layout.y_slice(c)] = eps - y_c
            weight[i, layout.y_slice(c)] = 1.0
            t_tok[i, layout.y_slice(c)] = t_c

    seg, slot, within = full_context_meta(cfg, m)
    mask = block_causal_mask(layout) if causal else bidirectional_mask(layout)
    v = denoise_forward(params, cfg, Tensor(tokens), seg, slot, within,
                        t_tok, labels, mask)
    diff = T.sub(v, Tensor(target))
    w3 = np.broadcast_to(weight, (b_n, L, dt)).copy()
    total = float(w3.sum())
    loss = T.scale(T.sum_all(T.mul(T.mul(diff, diff), Tensor(w3))), 1.0 / total)
    return loss, {"t": t_drawn, "labels": labels, "supervised": total}


def teacher_loss(params, cfg: DenoiserConfig, batch, *, seed: int, step: int):
    """Bidirectional flow matching: one shared timestep per clip, velocity
    MSE on the output tokens, reference/label ablated independently."""
    return _forcing_loss(params, cfg, batch, seed=seed, step=step,
                         per_chunk_t=False, causal=False, p_clean=0.0)


def stage1_loss(params, cfg: DenoiserConfig, batch, *, seed: int, step: int,
                p_clean: float = P_CLEAN):
    """Block-causal forcing: independent timestep per super-chunk, a fraction
    of chunks presented clean (and excluded from the loss)."""
    return _forcing_loss(params, cfg, batch, seed=seed, step=step,
                         per_chunk_t=True, causal=True, p_clean=p_clean)


# ---- guided chunk sampling -------------------------------------------------------


def dual_pass_cfg(params, cfg: DenoiserConfig, cache: KVCache, x_tok: Tensor,
                  z_t: Tensor, t: float, label_id, chunk_index: int,
                  guidance: float = CFG_SCALE,
                  uncond_override: np.ndarray | None = None):
    """Classifier-free guided velocity (1+w) v_cond - w v_uncond.

    The unconditional branch never carries gradient: it is either a detached
    live pass or a replayed constant (``uncond_override``), which is what
    makes the training surrogate finite-difference checkable.
    """
    v_c = forward_chunk(params, cfg, cache, x_tok, z_t, t, label_id,
                        chunk_index, uncond=False)
    if guidance == 0.0:
        return v_c, None
    if uncond_override is not None:
        v_u_value = np.asarray(uncond_override, dtype=_pdtype(params))
    else:
        with T.no_grad():
            v_u_value = forward_chunk(params, cfg, cache, x_tok, z_t, t,
                                      label_id, chunk_index, uncond=True).data
    v = T.sub(T.scale(v_c, 1.0 + guidance), T.scale(Tensor(v_u_value), guidance))
    return v, v_u_value


def sample_chunk(params, cfg: DenoiserConfig, cache: KVCache, x_tok: Tensor,
                 label_id, chunk_index: int, noise: np.ndarray,
                 schedule=SHIFTED_SCHEDULE, guidance: float = CFG_SCALE,
                 uncond_override: list | None = None):
    """Few-step guided generation of one super-chunk against the cache.

    Returns (y_hat, x0 predictions at each non-terminal step, recorded
    unconditional velocities). Does not touch the cache; callers encode the
    finished chunk themselves.
    """
    if x_tok.tainted:
        raise ValueError("model input x is flagged as ground-truth derived")
    z = Tensor(np.asarray(noise, dtype=_pdtype(params)))
    preds, recorded = [], []
    for k in range(len(schedule) - 1):
        t_k, t_next = schedule[k], schedule[k + 1]
        override = None if uncond_override is None else uncond_override[k]
        v, v_u = dual_pass_cfg(params, cfg, cache, x_tok, z, t_k, label_id,
                               chunk_index, guidance, override)
        recorded.append(v_u)
        preds.append(x0_from_velocity(z, v, t_k))
        z = euler_step(z, v, t_k, t_next)
    return z, preds, recorded


def self_forcing_rollout(params, cfg: DenoiserConfig, batch, *, seed: int,
                         step: int, schedule=SHIFTED_SCHEDULE,
                         guidance: float = CFG_SCALE,
                         uncond_override: dict | None = None):
    """Run the model's own chunked sampler over a whole batch of clips.

    The cache is built from the model's outputs (never the targets), so the
    trajectory matches what streaming inference would produce for the same
    noise draws. Returns per-chunk x0 predictions for the distillation loss
    plus the recorded unconditional velocities keyed by (chunk, step).
    """
    b_n = len(batch)
    m = batch[0]["xs"].shape[0]
    fdt = _pdtype(params)
    labels = np.array([s["effect"] for s in batch], dtype=np.int64)
    ref = Tensor(np.stack([s["ref"] for s in batch]).astype(fdt))
    if ref.tainted:
        raise ValueError("reference tokens are flagged as ground-truth derived")

    cache = KVCache(cfg.window)
    cache.ref_cond = encode_reference(params, cfg, ref, labels)
    cache.ref_uncond = encode_reference(params, cfg,
                                        zero_reference(cfg, b_n, fdt),
                                        cfg.null_label)
    chunk_preds, y_hats, recorded = [], [], {}
    for c in range(m):
        x_tok = Tensor(np.stack([s["xs"][c] for s in batch]).astype(fdt))
        noise = stream(seed, "rollout-noise", step, c).standard_normal(
            (b_n, cfg.chunk_tokens, cfg.token_dim)).astype(fdt)
        override = None
        if uncond_override is not None:
            override = [uncond_override[(c, k)] for k in range(len(schedule) - 1)]
        y_hat, preds, rec = sample_chunk(params, cfg, cache, x_tok, labels, c,
                                         noise, schedule, guidance, override)
        for k, v_u in enumerate(rec):
            recorded[(c, k)] = v_u
        assert not y_hat.tainted, "rollout output contaminated by targets"
        cache.append_chunk(encode_chunk(params, cfg, cache, x_tok, y_hat,
                                        labels, c))
        chunk_preds.append(preds)
        y_hats.append(y_hat)
    return {"preds": chunk_preds, "y_hat": y_hats, "cache": cache,
            "recorded_uncond": recorded, "schedule": tuple(schedule)}


def stage2_loss(params, cfg: DenoiserConfig, batch, *, seed: int, step: int,
                schedule=SHIFTED_SCHEDULE, guidance: float = CFG_SCALE,
                uncond_override: dict | None = None,
                weight_scale: float = 1.0):
    """SNR-weighted distance between every rollout x0 prediction and the
    paired target, normalized by the total weight.

    ``weight_scale`` multiplies every w_k uniformly; the normalization must
    make the loss invariant to it, which tests rely on.
    """
    out = self_forcing_rollout(params, cfg, batch, seed=seed, step=step,
                               schedule=schedule, guidance=guidance,
                               uncond_override=uncond_override)
    ts = np.asarray(schedule[:-1])
    ws = snr_weights(ts) * float(weight_scale)
    m = batch[0]["xs"].shape[0]
    terms = []
    for c in range(m):
        y_true = Tensor(np.stack([s["ys"][c] for s in batch]).astype(_pdtype(params)),
                        tainted=True)
        for k, pred in enumerate(out["preds"][c]):
            d = T.sub(pred, y_true)
            terms.append(T.scale(T.mean_all(T.mul(d, d)), float(ws[k])))
    total = terms[0]
    for term in terms[1:]:
        total = T.add(total, term)
    loss = T.scale(total, 1.0 / (float(ws.sum()) * m))
    return loss, out

"""Block-causal denoising transformer over interleaved effect contexts.

Two execution paths share one set of weights:

* full-context: the whole ``[r | x_1 | y_1 | ... | x_M | y_M]`` sequence in
  one pass under an explicit attention mask (teacher and forcing losses);
* chunk-by-chunk: queries are the current super-chunk only, keys come from
  a KV cache holding the reference plus recent super-chunks (streaming and
  on-policy rollouts).

The two must agree; tests/test_model.py checks them against each other.
Cache entries hold graph-carrying tensors so on-policy training can
backpropagate through history; call ``KVCache.detach_all`` when serving.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .layout import SEG_REF, SEG_X, SEG_Y, token_dim
from .rng import stream
from .tensor import Tensor

__all__ = ["DenoiserConfig", "init_params", "param_hash", "time_features",
           "denoise_forward", "forward_chunk", "encode_chunk",
           "encode_reference", "CacheEntry", "KVCache", "full_context_meta"]

TIME_FEATURES = 16


@dataclass(frozen=True)
class DenoiserConfig:
    height: int = 8
    width: int = 8
    channels: int = 3
    chunk_frames: int = 2
    n_layers: int = 2
    dim: int = 64
    n_heads: int = 4
    ffn_dim: int = 128
    window: int = 5      # super-chunk capacity of the cache and position table
    n_effects: int = 4

    def __post_init__(self):
        if self.height % 2 or self.width % 2:
            raise ValueError(f"height/width must be even, got {self.height}x{self.width}")
        if self.dim % self.n_heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.n_heads} heads")

    @property
    def tokens_per_frame(self) -> int:
        return (self.height // 2) * (self.width // 2)

    @property
    def n_ref(self) -> int:
        return self.tokens_per_frame

    @property
    def chunk_tokens(self) -> int:
        return self.chunk_frames * self.tokens_per_frame

    @property
    def token_dim(self) -> int:
        return token_dim(self.channels)

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads

    @property
    def null_label(self) -> int:
        return self.n_effects

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


def init_params(cfg: DenoiserConfig, seed: int) -> dict[str, Tensor]:
    """Fresh parameter dict; every tensor gets its own named RNG stream."""
    p: dict[str, Tensor] = {}

    def normal(name, shape, scale=0.02):
        rng = stream(seed, "init", name)
        p[name] = Tensor(rng.normal(0.0, scale, size=shape).astype(np.float32),
                         requires_grad=True)

    def zeros(name, shape):
        p[name] = Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    def ones(name, shape):
        p[name] = Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)

    d, dt = cfg.dim, cfg.token_dim
    normal("embed.w", (dt, d))
    zeros("embed.b", (d,))
    normal("pos.table", (3 * cfg.window * cfg.chunk_tokens, d))
    normal("label.table", (cfg.n_effects + 1, d))
    normal("time.w1", (TIME_FEATURES, d))
    zeros("time.b1", (d,))
    normal("time.w2", (d, d))
    zeros("time.b2", (d,))
    for i in range(cfg.n_layers):
        b = f"blocks.{i}"
        ones(f"{b}.ln1.g", (d,))
        zeros(f"{b}.ln1.b", (d,))
        for nm in ("wq", "wk", "wv", "wo"):
            normal(f"{b}.attn.{nm}", (d, d))
        for nm in ("bq", "bk", "bv", "bo"):
            zeros(f"{b}.attn.{nm}", (d,))
        ones(f"{b}.ln2.g", (d,))
        zeros(f"{b}.ln2.b", (d,))
        normal(f"{b}.ffn.w1", (d, cfg.ffn_dim))
        zeros(f"{b}.ffn.b1", (cfg.ffn_dim,))
        normal(f"{b}.ffn.w2", (cfg.ffn_dim, d))
        zeros(f"{b}.ffn.b2", (d,))
    ones("head.ln.g", (d,))
    zeros("head.ln.b", (d,))
    normal("head.w", (d, dt))
    zeros("head.b", (dt,))
    return p


def param_hash(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(params[name].data.tobytes())
    return h.hexdigest()


def save_params(path, cfg: DenoiserConfig, params: dict[str, Tensor],
                extra: dict | None = None) -> None:
    """Write weights plus config (and optional metadata) as one container."""
    from .container import save_checkpoint
    config = {"model": cfg.to_dict()}
    if extra:
        config.update(extra)
    save_checkpoint(path, config, {k: v.data for k, v in params.items()})


def load_params(path):
    """Read a checkpoint back as (config dict, DenoiserConfig, live params)."""
    from .container import load_checkpoint
    config, tensors = load_checkpoint(path)
    cfg = DenoiserConfig.from_dict(config["model"])
    params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
    return config, cfg, params


def time_features(t: np.ndarray) -> np.ndarray:
    """Sinusoidal features of flow time, log-spaced frequencies in [1, 1000]."""
    half = TIME_FEATURES // 2
    freqs = np.exp(np.linspace(0.0, math.log(1000.0), half)).astype(np.float32)
    ang = np.asarray(t, dtype=np.float32)[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def _pos_index(cfg: DenoiserConfig, seg, slot, within) -> np.ndarray:
    return (np.asarray(seg) * cfg.window + np.asarray(slot)) * cfg.chunk_tokens + np.asarray(within)


def full_context_meta(cfg: DenoiserConfig, n_chunks: int, first_chunk: int = 0):
    """(seg, slot, within) arrays for a full interleaved context."""
    from .layout import Layout, token_meta
    layout = Layout(n_ref=cfg.n_ref, chunk_tokens=cfg.chunk_tokens, n_chunks=n_chunks)
    return token_meta(layout, window_slots=cfg.window, first_chunk=first_chunk)


def _embed(params, cfg: DenoiserConfig, tokens: Tensor, seg, slot, within,
           t_tok: np.ndarray, label_ids: np.ndarray) -> Tensor:
    """Token embedding: projection + position + label + flow-time terms.

    ``tokens`` is [B, L, token_dim]; ``t_tok`` is [B, L] flow time per token
    (0 for clean tokens); ``label_ids`` is [B] effect ids, ``cfg.null_label``
    for the ablated condition.
    """
    B, L, _ = tokens.shape
    d = cfg.dim
    h = T.add(T.matmul(tokens, params["embed.w"]), params["embed.b"])
    pos = T.gather_rows(params["pos.table"], _pos_index(cfg, seg, slot, within))
    h = T.add(h, T.expand(T.reshape(pos, (1, L, d)), (B, L, d)))
    lab = T.gather_rows(params["label.table"], np.asarray(label_ids, dtype=np.int64))
    h = T.add(h, T.expand(T.reshape(lab, (B, 1, d)), (B, L, d)))
    feats = Tensor(time_features(np.broadcast_to(t_tok, (B, L))))
    temb = T.add(T.matmul(T.gelu(T.add(T.matmul(feats, params["time.w1"]),
                                       params["time.b1"])),
                          params["time.w2"]), params["time.b2"])
    return T.add(h, temb)


def _split_heads(cfg: DenoiserConfig, x: Tensor) -> Tensor:
    B, L, _ = x.shape
    return T.transpose(T.reshape(x, (B, L, cfg.n_heads, cfg.head_dim)), (0, 2, 1, 3))


def _join_heads(cfg: DenoiserConfig, x: Tensor) -> Tensor:
    B, _, L, _ = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (B, L, cfg.dim))


def _block(params, cfg: DenoiserConfig, i: int, h: Tensor, mask,
           cached_kv: list[tuple[Tensor, Tensor]] | None):
    """Pre-LN transformer block; returns (h, (k_new, v_new)) with the fresh
    key/value stacks so callers can cache them."""
    b = f"blocks.{i}"
    hn = T.layer_norm(h, params[f"{b}.ln1.g"], params[f"{b}.ln1.b"])
    q = _split_heads(cfg, T.add(T.matmul(hn, params[f"{b}.attn.wq"]), params[f"{b}.attn.bq"]))
    k_new = _split_heads(cfg, T.add(T.matmul(hn, params[f"{b}.attn.wk"]), params[f"{b}.attn.bk"]))
    v_new = _split_heads(cfg, T.add(T.matmul(hn, params[f"{b}.attn.wv"]), params[f"{b}.attn.bv"]))
    if cached_kv:
        k = T.concat([kv[0] for kv in cached_kv] + [k_new], axis=2)
        v = T.concat([kv[1] for kv in cached_kv] + [v_new], axis=2)
    else:
        k, v = k_new, v_new
    att = _join_heads(cfg, T.attention(q, k, v, mask=mask))
    h = T.add(h, T.add(T.matmul(att, params[f"{b}.attn.wo"]), params[f"{b}.attn.bo"]))
    hn2 = T.layer_norm(h, params[f"{b}.ln2.g"], params[f"{b}.ln2.b"])
    ff = T.add(T.matmul(T.gelu(T.add(T.matmul(hn2, params[f"{b}.ffn.w1"]),
                                     params[f"{b}.ffn.b1"])),
                        params[f"{b}.ffn.w2"]), params[f"{b}.ffn.b2"])
    return T.add(h, ff), (k_new, v_new)


def _head(params, h: Tensor) -> Tensor:
    hn = T.layer_norm(h, params["head.ln.g"], params["head.ln.b"])
    return T.add(T.matmul(hn, params["head.w"]), params["head.b"])


def denoise_forward(params, cfg: DenoiserConfig, tokens: Tensor, seg, slot,
                    within, t_tok: np.ndarray, label_ids: np.ndarray,
                    mask: np.ndarray | None) -> Tensor:
    """Full-context velocity prediction, [B, L, token_dim] over all tokens.

    Callers slice out the y rows they supervise; predictions at reference
    and x rows are computed but unused.
    """
    h = _embed(params, cfg, tokens, seg, slot, within, t_tok, label_ids)
    for i in range(cfg.n_layers):
        h, _ = _block(params, cfg, i, h, mask, None)
    return _head(params, h)


# ---- chunked path ------------------------------------------------------------


@dataclass
class CacheEntry:
    """Per-layer key/value stacks for one context block."""

    chunk_index: int                 # -1 for the reference entry
    k: list[Tensor] = field(default_factory=list)   # per layer [B, heads, L, dh]
    v: list[Tensor] = field(default_factory=list)

    def detach(self) -> "CacheEntry":
        return CacheEntry(self.chunk_index,
                          [t.detach() for t in self.k],
                          [t.detach() for t in self.v])


class KVCache:
    """Reference entries are pinned; super-chunk entries roll with a window.

    Two reference variants are kept because the classifier-free pass swaps
    the reference while sharing the super-chunk history.
    """

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must hold at least one super-chunk")
        self.window = window
        self.ref_cond: CacheEntry | None = None
        self.ref_uncond: CacheEntry | None = None
        self.chunks: list[CacheEntry] = []

    def append_chunk(self, entry: CacheEntry) -> None:
        if self.chunks and entry.chunk_index <= self.chunks[-1].chunk_index:
            raise ValueError(
                f"chunk {entry.chunk_index} appended after {self.chunks[-1].chunk_index}")
        self.chunks.append(entry)
        while len(self.chunks) > self.window:
            self.chunks.pop(0)  # oldest non-reference entry goes first

    def layer_kv(self, layer: int, uncond: bool) -> list[tuple[Tensor, Tensor]]:
        ref = self.ref_uncond if uncond else self.ref_cond
        if ref is None:
            raise ValueError("reference entry missing; call encode_reference first")
        entries = [ref] + self.chunks
        return [(e.k[layer], e.v[layer]) for e in entries]

    def next_chunk_index(self) -> int:
        return self.chunks[-1].chunk_index + 1 if self.chunks else 0

    def detach_all(self) -> None:
        if self.ref_cond is not None:
            self.ref_cond = self.ref_cond.detach()
        if self.ref_uncond is not None:
            self.ref_uncond = self.ref_uncond.detach()
        self.chunks = [e.detach() for e in self.chunks]


def _label_array(label_id, batch: int, null_label: int | None = None) -> np.ndarray:
    """Normalize a scalar or per-sample effect id to an int64 [B] array."""
    if null_label is not None:
        return np.full(batch, null_label, dtype=np.int64)
    return np.broadcast_to(np.asarray(label_id, dtype=np.int64), (batch,))


def _chunk_meta(cfg: DenoiserConfig, chunk_index: int):
    ct = cfg.chunk_tokens
    seg = np.concatenate([np.full(ct, SEG_X), np.full(ct, SEG_Y)])
    slot = np.full(2 * ct, chunk_index % cfg.window, dtype=np.int64)
    within = np.concatenate([np.arange(ct), np.arange(ct)])
    return seg, slot, within


def _run_blocks(params, cfg, h, cache: KVCache | None, uncond: bool):
    entry_k, entry_v = [], []
    for i in range(cfg.n_layers):
        cached = cache.layer_kv(i, uncond) if cache is not None else None
        h, (k_new, v_new) = _block(params, cfg, i, h, None, cached)
        entry_k.append(k_new)
        entry_v.append(v_new)
    return h, entry_k, entry_v


def encode_reference(params, cfg: DenoiserConfig, ref_tokens: Tensor,
                     label_id: int) -> CacheEntry:
    """Build the pinned reference entry from [B, n_ref, token_dim] tokens.

    The ablated condition is zero tokens with ``cfg.null_label``. The
    reference attends only to itself, so this pass sees an empty cache."""
    B, n_ref, _ = ref_tokens.shape
    seg = np.full(n_ref, SEG_REF)
    slot = np.zeros(n_ref, dtype=np.int64)
    within = np.arange(n_ref)
    t_tok = np.zeros((B, n_ref), dtype=np.float32)
    labels = _label_array(label_id, B)
    h = _embed(params, cfg, ref_tokens, seg, slot, within, t_tok, labels)
    _, entry_k, entry_v = _run_blocks(params, cfg, h, None, False)
    return CacheEntry(-1, entry_k, entry_v)


def forward_chunk(params, cfg: DenoiserConfig, cache: KVCache, x_tokens: Tensor,
                  y_tokens: Tensor, t: float, label_id: int, chunk_index: int,
                  uncond: bool = False) -> Tensor:
    """Velocity prediction for the y half of one super-chunk, [B, ct, d_tok].

    Queries are ``[x_i | y_i]`` attending bidirectionally to themselves and
    to everything in the cache; no mask is needed because the cache already
    contains exactly the allowed prefix.
    """
    ct = cfg.chunk_tokens
    block = T.concat([x_tokens, y_tokens], axis=1)
    B = block.shape[0]
    seg, slot, within = _chunk_meta(cfg, chunk_index)
    t_tok = np.concatenate([np.zeros((B, ct), dtype=np.float32),
                            np.full((B, ct), t, dtype=np.float32)], axis=1)
    labels = _label_array(label_id, B, cfg.null_label if uncond else None)
    h = _embed(params, cfg, block, seg, slot, within, t_tok, labels)
    h, _, _ = _run_blocks(params, cfg, h, cache, uncond)
    return T.slice_axis(_head(params, h), 1, ct, 2 * ct)


def encode_chunk(params, cfg: DenoiserConfig, cache: KVCache, x_tokens: Tensor,
                 y_clean: Tensor, label_id: int, chunk_index: int) -> CacheEntry:
    """Key/value entry for a finished super-chunk (clean y, t = 0).

    Encoded once under the conditional label; the classifier-free pass
    shares these history entries and swaps only the reference.
    """
    ct = cfg.chunk_tokens
    block = T.concat([x_tokens, y_clean], axis=1)
    B = block.shape[0]
    seg, slot, within = _chunk_meta(cfg, chunk_index)
    t_tok = np.zeros((B, 2 * ct), dtype=np.float32)
    labels = _label_array(label_id, B)
    h = _embed(params, cfg, block, seg, slot, within, t_tok, labels)
    _, entry_k, entry_v = _run_blocks(params, cfg, h, cache, False)
    return CacheEntry(chunk_index, entry_k, entry_v)

"""Token layout for interleaved conditional video contexts.

A context is ordered ``[r | x_1 | y_1 | ... | x_M | y_M]`` where ``r`` is the
reference frame, ``x_i`` an input chunk and ``y_i`` the matching output
chunk. The pair ``(x_i, y_i)`` forms super-chunk ``i``. Frames become
tokens through non-overlapping 1x2x2 patches (frame, height, width), raster
ordered by (frame, row, col) with the 2x2xC patch flattened channel-last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError, reshape, transpose

__all__ = ["Layout", "patchify", "unpatchify", "token_dim",
           "block_causal_mask", "bidirectional_mask",
           "prefix_lengths", "mask_row_prefix_lengths", "token_meta",
           "SEG_REF", "SEG_X", "SEG_Y"]

PATCH_H = 2
PATCH_W = 2

SEG_REF, SEG_X, SEG_Y = 0, 1, 2


def token_dim(channels: int) -> int:
    return PATCH_H * PATCH_W * channels


def patchify(frames: Tensor) -> Tensor:
    """[T, H, W, C] frames -> [T*(H/2)*(W/2), 4C] tokens (differentiable)."""
    if frames.data.ndim != 4:
        raise ShapeError(f"patchify: want [T, H, W, C], got {frames.shape}")
    t, h, w, c = frames.shape
    if h % PATCH_H or w % PATCH_W:
        raise ShapeError(f"patchify: H={h}, W={w} not divisible by {PATCH_H}x{PATCH_W}")
    g = reshape(frames, (t, h // PATCH_H, PATCH_H, w // PATCH_W, PATCH_W, c))
    g = transpose(g, (0, 1, 3, 2, 4, 5))
    return reshape(g, (t * (h // PATCH_H) * (w // PATCH_W), PATCH_H * PATCH_W * c))


def unpatchify(tokens: Tensor, t: int, h: int, w: int, c: int) -> Tensor:
    """Inverse of :func:`patchify` back to [T, H, W, C]."""
    expect = (t * (h // PATCH_H) * (w // PATCH_W), PATCH_H * PATCH_W * c)
    if tuple(tokens.shape) != expect:
        raise ShapeError(f"unpatchify: tokens {tokens.shape} != expected {expect}")
    g = reshape(tokens, (t, h // PATCH_H, w // PATCH_W, PATCH_H, PATCH_W, c))
    g = transpose(g, (0, 1, 3, 2, 4, 5))
    return reshape(g, (t, h, w, c))


@dataclass(frozen=True)
class Layout:
    """Token bookkeeping for one interleaved context."""

    n_ref: int          # reference tokens
    chunk_tokens: int   # tokens per x block (= per y block)
    n_chunks: int       # number of super-chunks M

    @property
    def total_tokens(self) -> int:
        return self.n_ref + self.n_chunks * 2 * self.chunk_tokens

    def ref_slice(self) -> slice:
        return slice(0, self.n_ref)

    def x_slice(self, i: int) -> slice:
        start = self.n_ref + i * 2 * self.chunk_tokens
        return slice(start, start + self.chunk_tokens)

    def y_slice(self, i: int) -> slice:
        start = self.n_ref + i * 2 * self.chunk_tokens + self.chunk_tokens
        return slice(start, start + self.chunk_tokens)

    def segment_ids(self) -> np.ndarray:
        seg = np.empty(self.total_tokens, dtype=np.int64)
        seg[self.ref_slice()] = SEG_REF
        for i in range(self.n_chunks):
            seg[self.x_slice(i)] = SEG_X
            seg[self.y_slice(i)] = SEG_Y
        return seg

    def chunk_ids(self) -> np.ndarray:
        """Super-chunk index per token; -1 marks reference tokens."""
        cid = np.full(self.total_tokens, -1, dtype=np.int64)
        for i in range(self.n_chunks):
            cid[self.x_slice(i)] = i
            cid[self.y_slice(i)] = i
        return cid


def block_causal_mask(layout: Layout) -> np.ndarray:
    """Allowed-attention matrix: bidirectional inside a super-chunk, causal
    across super-chunks, every query sees the reference, and reference
    queries see only the reference. Each row is a contiguous key prefix."""
    pl = prefix_lengths(layout)
    keys = np.arange(layout.total_tokens)
    return keys[None, :] < pl[:, None]


def prefix_lengths(layout: Layout) -> np.ndarray:
    """Allowed-key prefix length per query row under the block-causal rule."""
    cid = layout.chunk_ids()
    pl = np.empty(layout.total_tokens, dtype=np.int64)
    ref = cid < 0
    pl[ref] = layout.n_ref
    pl[~ref] = layout.n_ref + (cid[~ref] + 1) * 2 * layout.chunk_tokens
    return pl


def bidirectional_mask(layout: Layout) -> np.ndarray:
    """Full attention among chunk tokens; reference still sees only itself."""
    n = layout.total_tokens
    mask = np.ones((n, n), dtype=bool)
    mask[layout.ref_slice(), layout.n_ref:] = False
    return mask


def mask_row_prefix_lengths(mask: np.ndarray) -> np.ndarray:
    """Per-row prefix length if every row is a contiguous key prefix.

    Raises ValueError when some row has an allowed key after a disallowed
    one; callers use this to certify the prefix-attention fast path.
    """
    counts = mask.sum(axis=1)
    keys = np.arange(mask.shape[1])
    if not np.array_equal(mask, keys[None, :] < counts[:, None]):
        raise ValueError("mask rows are not contiguous key prefixes")
    return counts.astype(np.int64)


def token_meta(layout: Layout, window_slots: int, first_chunk: int = 0):
    """Position identity per token: (segment, slot, within-block offset).

    ``slot`` wraps the absolute super-chunk index modulo ``window_slots`` so
    a finite embedding table can serve an unbounded stream; ``first_chunk``
    shifts the layout onto absolute stream positions.
    """
    n = layout.total_tokens
    seg = layout.segment_ids()
    slot = np.zeros(n, dtype=np.int64)
    within = np.zeros(n, dtype=np.int64)
    within[layout.ref_slice()] = np.arange(layout.n_ref)
    for i in range(layout.n_chunks):
        s = (first_chunk + i) % window_slots
        for sl in (layout.x_slice(i), layout.y_slice(i)):
            slot[sl] = s
            within[sl] = np.arange(layout.chunk_tokens)
    return seg, slot, within

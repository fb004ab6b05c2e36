"""Layout module: patch conversion, masking rules, position metadata."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamfx import layout as L
from streamfx import tensor as T
from streamfx.rng import stream


def test_patchify_shapes_and_round_trip():
    rng = stream(21, "patch")
    frames = rng.standard_normal((3, 8, 6, 3)).astype(np.float32)
    tokens = L.patchify(T.Tensor(frames))
    assert tokens.shape == (3 * 4 * 3, 12)
    back = L.unpatchify(tokens, 3, 8, 6, 3)
    np.testing.assert_array_equal(back.data, frames)


def test_patchify_raster_order():
    # encode (frame, row, col, channel) into the value and check one token
    t_n, h, w, c = 2, 4, 4, 3
    frames = np.zeros((t_n, h, w, c), dtype=np.float32)
    for t in range(t_n):
        for y in range(h):
            for x in range(w):
                for ch in range(c):
                    frames[t, y, x, ch] = t * 1000 + y * 100 + x * 10 + ch
    tokens = L.patchify(T.Tensor(frames)).data
    # token index = t * (H/2 * W/2) + row * (W/2) + col, patch flattened
    # as (patch_row, patch_col, channel)
    tok = tokens[1 * 4 + 1 * 2 + 0]  # frame 1, patch row 1, patch col 0
    expect = [1000 + 200 + 0 + ch for ch in range(3)]
    expect += [1000 + 200 + 10 + ch for ch in range(3)]
    expect += [1000 + 300 + 0 + ch for ch in range(3)]
    expect += [1000 + 300 + 10 + ch for ch in range(3)]
    np.testing.assert_array_equal(tok, expect)


def test_patchify_gradient_is_unpatchify():
    rng = stream(22, "patchgrad")
    frames = T.Tensor(rng.standard_normal((2, 4, 6, 3)), requires_grad=True)
    weights = rng.standard_normal((2 * 2 * 3, 12))
    T.sum_all(T.mul(L.patchify(frames), T.Tensor(weights))).backward()
    expect = L.unpatchify(T.Tensor(weights), 2, 4, 6, 3).data
    np.testing.assert_allclose(frames.grad, expect, rtol=1e-12)


def test_mse_is_invariant_under_patchify():
    rng = stream(23, "mse")
    a = rng.standard_normal((4, 8, 8, 3))
    b = rng.standard_normal((4, 8, 8, 3))
    pixel = np.mean((a - b) ** 2)
    ta = L.patchify(T.Tensor(a)).data
    tb = L.patchify(T.Tensor(b)).data
    token = np.mean((ta - tb) ** 2)
    assert pixel == pytest.approx(token, rel=0, abs=0)  # pure permutation


def test_patchify_rejects_bad_shapes():
    with pytest.raises(T.ShapeError):
        L.patchify(T.Tensor(np.zeros((4, 4, 3), dtype=np.float32)))
    with pytest.raises(T.ShapeError):
        L.patchify(T.Tensor(np.zeros((1, 5, 4, 3), dtype=np.float32)))
    with pytest.raises(T.ShapeError):
        L.unpatchify(T.Tensor(np.zeros((7, 12), dtype=np.float32)), 2, 4, 4, 3)


# ---- masks -------------------------------------------------------------------


def _naive_block_causal(layout: L.Layout) -> np.ndarray:
    """Rule-by-rule oracle, independent of the prefix arithmetic."""
    cid = layout.chunk_ids()
    n = layout.total_tokens
    mask = np.zeros((n, n), dtype=bool)
    for q in range(n):
        for k in range(n):
            if cid[q] < 0:
                mask[q, k] = cid[k] < 0        # reference sees only itself
            elif cid[k] < 0:
                mask[q, k] = True              # everyone sees the reference
            else:
                mask[q, k] = cid[k] <= cid[q]  # bidirectional within, causal across
    return mask


@pytest.mark.parametrize("n_ref,ct,m", [(4, 6, 1), (4, 6, 3), (2, 2, 5), (1, 1, 2)])
def test_block_causal_mask_matches_rule_oracle(n_ref, ct, m):
    layout = L.Layout(n_ref=n_ref, chunk_tokens=ct, n_chunks=m)
    np.testing.assert_array_equal(L.block_causal_mask(layout),
                                  _naive_block_causal(layout))


def test_block_causal_rows_are_contiguous_prefixes():
    layout = L.Layout(n_ref=3, chunk_tokens=4, n_chunks=4)
    mask = L.block_causal_mask(layout)
    pl = L.mask_row_prefix_lengths(mask)
    np.testing.assert_array_equal(pl, L.prefix_lengths(layout))
    # x and y rows of chunk i see ref plus chunks 0..i in full
    for i in range(4):
        q = layout.x_slice(i).start
        assert pl[q] == 3 + (i + 1) * 2 * 4


def test_non_prefix_mask_is_rejected():
    mask = np.ones((3, 3), dtype=bool)
    mask[1, 0] = False  # hole before an allowed key
    with pytest.raises(ValueError, match="prefix"):
        L.mask_row_prefix_lengths(mask)


def test_bidirectional_mask_restricts_only_reference_rows():
    layout = L.Layout(n_ref=2, chunk_tokens=3, n_chunks=2)
    mask = L.bidirectional_mask(layout)
    assert mask[layout.ref_slice(), layout.ref_slice()].all()
    assert not mask[0, layout.n_ref:].any()
    assert mask[layout.n_ref:, :].all()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
def test_mask_properties(n_ref, ct, m):
    layout = L.Layout(n_ref=n_ref, chunk_tokens=ct, n_chunks=m)
    mask = L.block_causal_mask(layout)
    cid = layout.chunk_ids()
    assert mask.shape == (layout.total_tokens,) * 2
    # no token ever sees a later super-chunk
    later = cid[None, :] > np.where(cid < 0, m, cid)[:, None]
    assert not (mask & later).any()
    # every non-reference token sees the reference and its own super-chunk
    chunk_rows = cid >= 0
    assert mask[np.ix_(chunk_rows, cid < 0)].all()
    same = cid[:, None] == cid[None, :]
    assert mask[chunk_rows][same[chunk_rows]].all()
    # every row is a usable prefix row
    L.mask_row_prefix_lengths(mask)


# ---- position metadata ---------------------------------------------------------


def test_token_meta_segments_and_slots():
    layout = L.Layout(n_ref=2, chunk_tokens=3, n_chunks=4)
    seg, slot, within = L.token_meta(layout, window_slots=3)
    assert list(seg[:2]) == [L.SEG_REF] * 2
    assert list(within[:2]) == [0, 1]
    for i in range(4):
        assert set(seg[layout.x_slice(i)]) == {L.SEG_X}
        assert set(seg[layout.y_slice(i)]) == {L.SEG_Y}
        assert set(slot[layout.x_slice(i)]) == {i % 3}
        assert list(within[layout.y_slice(i)]) == [0, 1, 2]


def test_token_meta_first_chunk_offset():
    layout = L.Layout(n_ref=1, chunk_tokens=2, n_chunks=2)
    _, slot, _ = L.token_meta(layout, window_slots=5, first_chunk=7)
    assert set(slot[layout.x_slice(0)]) == {7 % 5}
    assert set(slot[layout.x_slice(1)]) == {8 % 5}

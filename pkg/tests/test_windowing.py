import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinfree.errors import ConfigError, DimensionError
from swinfree.windowing import (
    NEG,
    build_shift_mask,
    cyclic_shift,
    relative_position_index,
    window_partition,
    window_reverse,
)


@pytest.mark.parametrize("side,M,N", [(56, 7, 64), (28, 14, 4), (28, 7, 16), (14, 14, 1), (7, 7, 1)])
def test_window_counts(side, M, N):
    ws = window_partition(np.zeros((1, side, side, 2)), M)
    assert ws.num_windows == N
    assert ws.windows.shape == (N, M * M, 2)


def test_single_window_is_row_major_flatten(rng):
    g = rng.standard_normal((1, 5, 5, 3))
    ws = window_partition(g, 5)
    assert np.array_equal(ws.windows[0], g[0].reshape(25, 3))
    assert np.array_equal(window_reverse(ws, 5, 5), g)


def test_partition_token_order():
    # exhaustive index check on the 56x56 / M=7 geometry
    H = W = 56
    M = 7
    ids = np.arange(H * W).reshape(1, H, W, 1)
    ws = window_partition(ids, M)
    for w in range(ws.windows.shape[0]):
        wy, wx = divmod(w, W // M)
        for t in range(M * M):
            ty, tx = divmod(t, M)
            assert ws.windows[w, t, 0] == (wy * M + ty) * W + wx * M + tx
    assert np.array_equal(window_reverse(ws, H, W), ids)


def test_partition_rejects_non_divisible():
    with pytest.raises(ConfigError):
        window_partition(np.zeros((1, 10, 10, 1)), 7)


def test_reverse_rejects_inconsistent_extents():
    ws = window_partition(np.zeros((1, 8, 8, 1)), 4)
    with pytest.raises(DimensionError):
        window_reverse(ws, 8, 12)


grid_cases = st.tuples(
    st.integers(1, 2), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**31)
)


@settings(max_examples=1000, deadline=None)
@given(grid_cases)
def test_partition_and_shift_roundtrip_property(case):
    B, nh, nw, C, M, seed = case
    g = np.random.default_rng(seed).standard_normal((B, nh * M, nw * M, C))
    assert np.array_equal(window_reverse(window_partition(g, M), nh * M, nw * M), g)
    dy, dx = seed % 17 - 8, seed % 13 - 6
    assert np.array_equal(cyclic_shift(cyclic_shift(g, dy, dx), -dy, -dx), g)


def test_cyclic_shift_hand_case():
    g = np.array([[1, 2], [3, 4]]).reshape(1, 2, 2, 1)
    assert cyclic_shift(g, 1, 1)[0, :, :, 0].tolist() == [[4, 3], [2, 1]]
    assert np.array_equal(cyclic_shift(g, 0, 0), g)


def test_cyclic_shift_definition(rng):
    g = rng.standard_normal((1, 5, 6, 1))
    out = cyclic_shift(g, 2, -3)
    for y in range(5):
        for x in range(6):
            assert out[0, y, x, 0] == g[0, (y + 2) % 5, (x - 3) % 6, 0]


def enumerate_regions(H, W, M, s):
    """Region ids by direct enumeration of the 3x3 slicing."""
    def band(v, n):
        if v < n - M:
            return 0
        return 1 if v < n - s else 2

    return np.array([[band(y, H) * 3 + band(x, W) for x in range(W)] for y in range(H)])


def test_shift_mask_regions_14():
    sm = build_shift_mask(14, 14, 7, 3)
    assert np.array_equal(sm.region_ids, enumerate_regions(14, 14, 7, 3))
    assert sm.mask.shape == (4, 49, 49)
    per_window = [len(np.unique(sm.region_ids[y:y + 7, x:x + 7])) for y in (0, 7) for x in (0, 7)]
    # top-left, top-right, bottom-left, bottom-right (rolled corner)
    assert per_window == [1, 2, 2, 4]
    assert len(np.unique(sm.region_ids)) == 9


def test_shift_mask_entries(rng):
    sm = build_shift_mask(14, 14, 7, 3)
    ids = window_partition(sm.region_ids[None, :, :, None], 7).windows[..., 0]
    same = ids[:, :, None] == ids[:, None, :]
    assert np.all(sm.mask[same] == 0)
    assert np.all(sm.mask[~same] == NEG)
    assert np.array_equal(sm.mask, sm.mask.transpose(0, 2, 1))
    assert np.all(np.diagonal(sm.mask, axis1=1, axis2=2) == 0)


def test_shift_zero_mask_is_empty():
    sm = build_shift_mask(14, 14, 7, 0)
    assert not sm.mask.any()
    assert len(np.unique(sm.region_ids)) == 1


def test_shift_mask_rejects_large_shift():
    with pytest.raises(ConfigError):
        build_shift_mask(14, 14, 7, 7)


@pytest.mark.parametrize("M,size", [(1, 1), (7, 169), (14, 729)])
def test_relative_position_table_size(M, size):
    rp = relative_position_index(M)
    assert rp.table_size == size
    assert rp.index.min() >= 0 and rp.index.max() < size


def test_relative_position_index_m1():
    assert relative_position_index(1).index.tolist() == [[0]]


@pytest.mark.parametrize("M", range(1, 8))
def test_relative_position_translation_invariant(M):
    idx = relative_position_index(M).index
    diag = np.diagonal(idx)
    assert np.all(diag == diag[0])
    by_offset = {}
    for i in range(M * M):
        for j in range(M * M):
            off = (i // M - j // M, i % M - j % M)
            assert by_offset.setdefault(off, idx[i, j]) == idx[i, j]
    assert len(set(by_offset.values())) == (2 * M - 1) ** 2

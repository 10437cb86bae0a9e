"""Window partitioning, cyclic shifts, shift masks and relative-position lookup.

Feature grids are channel-last arrays ``[B, H, W, C]``. Windows are laid out
batch-major: window ``i`` of a partition belongs to image ``i // N`` and sits
at window-grid position ``i % N`` (row-major over the window grid).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._trace import timed
from .errors import ConfigError, DimensionError

NEG = -1e4


@dataclass(frozen=True)
class WindowSet:
    windows: np.ndarray  # [B*N, M*M, C]
    M: int
    grid_h: int
    grid_w: int

    @property
    def num_windows(self) -> int:
        """Windows per image."""
        return self.grid_h * self.grid_w

    @property
    def batch(self) -> int:
        return self.windows.shape[0] // self.num_windows


@dataclass(frozen=True)
class ShiftMask:
    mask: np.ndarray  # [N, M*M, M*M], entries 0 or NEG
    region_ids: np.ndarray  # [H, W]
    M: int
    shift: int


@dataclass(frozen=True)
class RelPosIndex:
    index: np.ndarray  # [M*M, M*M] into a (2M-1)^2 table
    M: int

    @property
    def table_size(self) -> int:
        return (2 * self.M - 1) ** 2


def check_window_fits(H: int, W: int, M: int):
    if M < 1:
        raise ConfigError(f"window size must be >= 1, got {M}")
    if H % M or W % M:
        raise ConfigError(f"window size {M} does not divide grid {H}x{W}")


def window_partition(g: np.ndarray, M: int) -> WindowSet:
    if g.ndim != 4:
        raise DimensionError(f"expected a [B, H, W, C] grid, got shape {g.shape}")
    B, H, W, C = g.shape
    check_window_fits(H, W, M)
    gh, gw = H // M, W // M
    with timed("partition"):
        w = g.reshape(B, gh, M, gw, M, C).transpose(0, 1, 3, 2, 4, 5).reshape(B * gh * gw, M * M, C)
    return WindowSet(w, M, gh, gw)


def window_reverse(ws: WindowSet, H: int, W: int) -> np.ndarray:
    M = ws.M
    if ws.grid_h * M != H or ws.grid_w * M != W:
        raise DimensionError(f"{ws.grid_h}x{ws.grid_w} windows of side {M} do not tile a {H}x{W} grid")
    n, t, C = ws.windows.shape
    if t != M * M or n % ws.num_windows:
        raise DimensionError(f"window tensor {ws.windows.shape} inconsistent with M={M}, N={ws.num_windows}")
    B = n // ws.num_windows
    with timed("partition"):
        g = ws.windows.reshape(B, ws.grid_h, ws.grid_w, M, M, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)
    return g


def cyclic_shift(g: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Torus roll with ``out[:, y, x] = g[:, (y + dy) % H, (x + dx) % W]``."""
    with timed("shift"):
        return np.roll(g, (-dy, -dx), axis=(1, 2))


def _region_ids(H: int, W: int, M: int, shift: int) -> np.ndarray:
    ids = np.zeros((H, W), dtype=np.int64)
    if shift == 0:
        return ids
    cuts_h = (slice(0, H - M), slice(H - M, H - shift), slice(H - shift, H))
    cuts_w = (slice(0, W - M), slice(W - M, W - shift), slice(W - shift, W))
    rid = 0
    for sh in cuts_h:
        for sw in cuts_w:
            ids[sh, sw] = rid
            rid += 1
    return ids


@lru_cache(maxsize=64)
def build_shift_mask(H: int, W: int, M: int, shift: int) -> ShiftMask:
    """Additive attention mask for windows of the rolled grid.

    Tokens of one window may attend to each other only if they carry the same
    region id, i.e. they were contiguous before the roll.
    """
    check_window_fits(H, W, M)
    if not 0 <= shift < M:
        raise ConfigError(f"shift must satisfy 0 <= shift < M={M}, got {shift}")
    ids = _region_ids(H, W, M, shift)
    win_ids = window_partition(ids[None, :, :, None], M).windows[..., 0]
    mask = np.where(win_ids[:, :, None] != win_ids[:, None, :], NEG, 0.0).astype(np.float32)
    mask.flags.writeable = False
    ids.flags.writeable = False
    return ShiftMask(mask, ids, M, shift)


@lru_cache(maxsize=64)
def relative_position_index(M: int) -> RelPosIndex:
    if M < 1:
        raise ConfigError(f"window size must be >= 1, got {M}")
    ys, xs = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    coords = np.stack([ys.ravel(), xs.ravel()])  # [2, T]
    rel = coords[:, :, None] - coords[:, None, :] + (M - 1)
    index = rel[0] * (2 * M - 1) + rel[1]
    index.flags.writeable = False
    return RelPosIndex(index, M)

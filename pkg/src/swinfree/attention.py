"""Windowed multi-head self-attention, MLP and the Transformer block.

Linear weights are stored as ``[in, out]``. The attention scale is
``head_dim ** -0.5`` and the relative-position bias is looked up per head
from a ``(2M - 1)^2`` table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from ._trace import current, timed
from .errors import ConfigError, DimensionError
from .windowing import (
    RelPosIndex,
    ShiftMask,
    WindowSet,
    build_shift_mask,
    cyclic_shift,
    relative_position_index,
    window_partition,
    window_reverse,
)

SHIFTED = "shifted_baseline"
SIZE_VARYING = "size_varying"
MODES = (SHIFTED, SIZE_VARYING)
MLP_RATIO = 4


@dataclass
class NormParams:
    kind: str  # "layer" or "batch"
    weight: np.ndarray
    bias: np.ndarray
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    eps: float = 1e-5

    @classmethod
    def identity(cls, kind: str, C: int, dtype=numerics.INFER_DTYPE) -> "NormParams":
        if kind == "layer":
            return cls("layer", np.ones(C, dtype), np.zeros(C, dtype))
        if kind == "batch":
            return cls("batch", np.ones(C, dtype), np.zeros(C, dtype), np.zeros(C, dtype), np.ones(C, dtype))
        raise ConfigError(f"unknown norm kind {kind!r}")


def apply_norm(x: np.ndarray, norm: NormParams) -> np.ndarray:
    with timed("norm"):
        if norm.kind == "layer":
            return numerics.layer_norm(x, norm.weight, norm.bias, norm.eps)
        return numerics.batch_norm_infer(x, norm.running_mean, norm.running_var, norm.weight, norm.bias, norm.eps)


@dataclass
class AttentionParams:
    qkv_weight: np.ndarray  # [C, 3C]
    qkv_bias: np.ndarray  # [3C]
    proj_weight: np.ndarray  # [C, C]
    proj_bias: np.ndarray  # [C]
    bias_table: np.ndarray  # [(2M-1)^2, heads]
    num_heads: int
    rel_index: RelPosIndex = field(init=False, repr=False)

    def __post_init__(self):
        C = self.qkv_weight.shape[0]
        if C % self.num_heads:
            raise ConfigError(f"channels {C} not divisible by {self.num_heads} heads")
        if self.qkv_weight.shape != (C, 3 * C) or self.proj_weight.shape != (C, C):
            raise DimensionError(f"bad attention weights {self.qkv_weight.shape}, {self.proj_weight.shape}")
        side = math.isqrt(self.bias_table.shape[0])
        if side * side != self.bias_table.shape[0] or side % 2 == 0:
            raise DimensionError(f"bias table length {self.bias_table.shape[0]} is not (2M-1)^2")
        if self.bias_table.shape[1] != self.num_heads:
            raise DimensionError(f"bias table has {self.bias_table.shape[1]} columns for {self.num_heads} heads")
        self.rel_index = relative_position_index((side + 1) // 2)

    @property
    def dim(self) -> int:
        return self.qkv_weight.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    @property
    def M(self) -> int:
        return self.rel_index.M

    @classmethod
    def init(cls, C: int, num_heads: int, M: int, rng: np.random.Generator, dtype=numerics.INFER_DTYPE):
        return cls(
            qkv_weight=numerics.trunc_normal_init((C, 3 * C), rng, dtype=dtype),
            qkv_bias=np.zeros(3 * C, dtype),
            proj_weight=numerics.trunc_normal_init((C, C), rng, dtype=dtype),
            proj_bias=np.zeros(C, dtype),
            bias_table=numerics.trunc_normal_init(((2 * M - 1) ** 2, num_heads), rng, dtype=dtype),
            num_heads=num_heads,
        )

    def position_bias(self) -> np.ndarray:
        """Per-head bias ``[heads, T, T]`` gathered from the table."""
        T = self.M * self.M
        return self.bias_table[self.rel_index.index.reshape(-1)].reshape(T, T, -1).transpose(2, 0, 1)


@dataclass
class MlpParams:
    fc1_weight: np.ndarray  # [C, rC]
    fc1_bias: np.ndarray
    fc2_weight: np.ndarray  # [rC, C]
    fc2_bias: np.ndarray

    @classmethod
    def init(cls, C: int, rng: np.random.Generator, ratio: int = MLP_RATIO, dtype=numerics.INFER_DTYPE):
        return cls(
            numerics.trunc_normal_init((C, ratio * C), rng, dtype=dtype),
            np.zeros(ratio * C, dtype),
            numerics.trunc_normal_init((ratio * C, C), rng, dtype=dtype),
            np.zeros(C, dtype),
        )


@dataclass
class BlockParams:
    norm1: NormParams
    attn: AttentionParams
    norm2: NormParams
    mlp: MlpParams
    M: int
    shift_flag: bool = False
    act: str = "gelu"


def _windows_array(w: WindowSet | np.ndarray) -> np.ndarray:
    return w.windows if isinstance(w, WindowSet) else w


def _attention_core(x: np.ndarray, p: AttentionParams, mask: ShiftMask | np.ndarray | None):
    nw, T, C = x.shape
    if T != p.M * p.M:
        raise DimensionError(f"windows hold {T} tokens but the bias table is for M={p.M}")
    if C != p.dim:
        raise DimensionError(f"windows have {C} channels, attention expects {p.dim}")
    h, d = p.num_heads, p.head_dim
    scale = d ** -0.5

    qkv = numerics.linear(x, p.qkv_weight, p.qkv_bias)
    qkv = qkv.reshape(nw, T, 3, h, d).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0] * scale, qkv[1], qkv[2]
    logits = numerics.matmul(q, k.swapaxes(-1, -2))
    logits += p.position_bias()
    if mask is not None:
        m = mask.mask if isinstance(mask, ShiftMask) else mask
        n = m.shape[0]
        if nw % n or m.shape[1:] != (T, T):
            raise DimensionError(f"mask {m.shape} incompatible with {nw} windows of {T} tokens")
        logits = logits.reshape(nw // n, n, h, T, T)
        logits += m[None, :, None]
        logits = logits.reshape(nw, h, T, T)
    attn = numerics.softmax_lastdim(logits)
    o = numerics.matmul(attn, v).transpose(0, 2, 1, 3).reshape(nw, T, C)
    out = numerics.linear(o, p.proj_weight, p.proj_bias)
    cache = (x, q, k, v, attn, o, scale)
    return out, cache


def window_attention_forward(
    w: WindowSet | np.ndarray,
    p: AttentionParams,
    mask: ShiftMask | np.ndarray | None = None,
    return_weights: bool = False,
):
    """Attention inside every window: ``proj(softmax(QK^T/sqrt(d) + bias + mask) V)``.

    Returns a :class:`WindowSet` when given one, else a bare array. With
    ``return_weights`` also returns the attention weights ``[B*N, heads, T, T]``.
    """
    with timed("attention"):
        out, cache = _attention_core(_windows_array(w), p, mask)
    tracer = current()
    if tracer is not None:
        tracer.count(f"stage{tracer.stage}.windows", out.shape[0])
        tracer.count(f"stage{tracer.stage}.attention_calls")
    if isinstance(w, WindowSet):
        out = WindowSet(out, w.M, w.grid_h, w.grid_w)
    if return_weights:
        return out, cache[4]
    return out


def window_attention_backward(
    w: WindowSet | np.ndarray,
    p: AttentionParams,
    mask: ShiftMask | np.ndarray | None,
    upstream: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradients of ``sum(upstream * forward(w))``.

    Keys: ``x``, ``qkv_weight``, ``qkv_bias``, ``proj_weight``, ``proj_bias``,
    ``bias_table`` and ``logits`` (the pre-softmax scores, mask included).
    """
    x = _windows_array(w)
    _, (x, q, k, v, attn, o, scale) = _attention_core(x, p, mask)
    nw, T, C = x.shape
    h, d = p.num_heads, p.head_dim
    upstream = upstream.reshape(nw, T, C)

    g_proj_w = o.reshape(-1, C).T @ upstream.reshape(-1, C)
    g_proj_b = upstream.sum(axis=(0, 1))
    g_o = (upstream @ p.proj_weight.T).reshape(nw, T, h, d).transpose(0, 2, 1, 3)

    g_attn = g_o @ v.swapaxes(-1, -2)
    g_v = attn.swapaxes(-1, -2) @ g_o
    g_logits = attn * (g_attn - np.sum(g_attn * attn, axis=-1, keepdims=True))

    g_bias = g_logits.sum(axis=0)  # [h, T, T]
    g_table = np.zeros_like(p.bias_table)
    np.add.at(g_table, p.rel_index.index.reshape(-1), g_bias.reshape(h, -1).T)

    g_q = (g_logits @ k) * scale
    g_k = g_logits.swapaxes(-1, -2) @ q
    g_qkv = np.stack([g_q, g_k, g_v]).transpose(1, 3, 0, 2, 4).reshape(nw, T, 3 * C)

    return {
        "x": g_qkv @ p.qkv_weight.T,
        "qkv_weight": x.reshape(-1, C).T @ g_qkv.reshape(-1, 3 * C),
        "qkv_bias": g_qkv.sum(axis=(0, 1)),
        "proj_weight": g_proj_w,
        "proj_bias": g_proj_b,
        "bias_table": g_table,
        "logits": g_logits,
    }


def effective_shift(M: int, H: int, W: int, shift_flag: bool) -> int:
    """Roll amount for a block: half a window when on, zero for a single full-grid window."""
    if not shift_flag or (H == M and W == M):
        return 0
    return M // 2


def shifted_window_attention(x: np.ndarray, p: AttentionParams, shift: int) -> np.ndarray:
    """Grid-level attention: roll, partition, masked window attention, reverse, unroll."""
    _, H, W, _ = x.shape
    M = p.M
    mask = None
    if shift:
        mask = build_shift_mask(H, W, M, shift)
        x = cyclic_shift(x, shift, shift)
    ws = window_attention_forward(window_partition(x, M), p, mask)
    x = window_reverse(ws, H, W)
    if shift:
        x = cyclic_shift(x, -shift, -shift)
    return x


def mlp_forward(x: np.ndarray, mlp: MlpParams, act: str = "gelu") -> np.ndarray:
    if act not in ("gelu", "relu"):
        raise ConfigError(f"unknown activation {act!r}")
    with timed("mlp"):
        hid = numerics.linear(x, mlp.fc1_weight, mlp.fc1_bias)
    with timed("activation"):
        hid = numerics.gelu(hid) if act == "gelu" else numerics.relu(hid)
    with timed("mlp"):
        return numerics.linear(hid, mlp.fc2_weight, mlp.fc2_bias)


def block_forward(g: np.ndarray, bp: BlockParams, mode: str = SIZE_VARYING) -> np.ndarray:
    """Pre-norm residual block: ``x + attn(norm1(x))`` then ``+ mlp(norm2(.))``."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == SIZE_VARYING and bp.shift_flag:
        raise ConfigError("shifted windows are not allowed in size_varying mode")
    _, H, W, C = g.shape
    if bp.M != bp.attn.M:
        raise DimensionError(f"block window size {bp.M} disagrees with its bias table (M={bp.attn.M})")
    shift = effective_shift(bp.M, H, W, bp.shift_flag)
    x = shifted_window_attention(apply_norm(g, bp.norm1), bp.attn, shift)
    with timed("residual"):
        x = g + x
    y = mlp_forward(apply_norm(x, bp.norm2), bp.mlp, bp.act)
    with timed("residual"):
        return x + y

"""Dense kernels and elementary layers.

Tensors are plain ``numpy.ndarray`` objects. Inference paths use float32,
verification paths float64; every kernel here preserves the dtype of its
input. Random draws go through :func:`make_rng`, a PCG64 generator, which
numpy guarantees to be stream-stable across platforms for a fixed seed.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import ndtr

from .errors import DimensionError

INFER_DTYPE = np.float32
VERIFY_DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]``.

    Leading batch extents must agree or broadcast from 1.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents differ: {a.shape} x {b.shape}") from None
    return np.matmul(a, b)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``x @ weight + bias`` with ``weight`` laid out as [in, out]."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear input width {x.shape} does not match weight {weight.shape}")
    y = x @ weight
    if bias is not None:
        y += bias
    return y


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps) * gamma + beta


def batch_norm_infer(
    x: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Inference-mode batch norm over the last (channel) axis with fixed statistics."""
    scale = gamma / np.sqrt(var + eps)
    return (x - mean) * scale + beta


def gelu(x: np.ndarray) -> np.ndarray:
    # exact Gaussian-CDF form, not the tanh approximation
    return x * ndtr(x).astype(x.dtype, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def trunc_normal_init(
    shape: tuple[int, ...],
    rng: np.random.Generator,
    std: float = 0.02,
    dtype=INFER_DTYPE,
) -> np.ndarray:
    """Draw N(0, std^2) truncated to [-2 std, 2 std] by resampling the tails."""
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    draw_dtype = np.float32 if np.dtype(dtype) == np.float32 else np.float64
    out = rng.standard_normal(shape, dtype=draw_dtype)
    flat = out.reshape(-1)
    idx = np.flatnonzero(np.abs(flat) > 2.0)
    while idx.size:
        flat[idx] = rng.standard_normal(idx.size, dtype=draw_dtype)
        idx = idx[np.abs(flat[idx]) > 2.0]
    out *= std
    return out.astype(dtype, copy=False)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=VERIFY_DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad

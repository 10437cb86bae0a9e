"""Model configuration, parameter construction and the forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics
from ._trace import current, timed
from .attention import (
    MLP_RATIO,
    MODES,
    SHIFTED,
    SIZE_VARYING,
    AttentionParams,
    BlockParams,
    MlpParams,
    NormParams,
    apply_norm,
    block_forward,
)
from .errors import ConfigError, DimensionError

NUM_STAGES = 4


@dataclass(frozen=True)
class StageConfig:
    depth: int
    M: int
    num_heads: int
    shift_pattern: tuple[bool, ...]
    resolution: int  # grid side at the start of the stage
    dim: int

    @property
    def num_windows(self) -> int:
        return (self.resolution // self.M) ** 2


@dataclass(frozen=True)
class ModelConfig:
    img_size: int = 224
    patch_size: int = 4
    embed_dim: int = 96
    depths: tuple[int, ...] = (2, 2, 6, 2)
    heads: tuple[int, ...] = (3, 6, 12, 24)
    window_sizes: tuple[int, ...] = (7, 7, 7, 7)
    mode: str = SHIFTED
    shift: tuple[bool, ...] = (True, True, True, True)
    norm: str = "layer"
    act: str = "gelu"
    num_classes: int = 1000
    in_chans: int = 3
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        for attr in ("depths", "heads", "window_sizes", "shift"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        object.__setattr__(self, "shift", tuple(bool(s) for s in self.shift))

    def validate(self) -> "ModelConfig":
        problems = []
        for attr in ("depths", "heads", "window_sizes", "shift"):
            if len(getattr(self, attr)) != NUM_STAGES:
                problems.append(f"{attr} must list {NUM_STAGES} stages, got {len(getattr(self, attr))}")
        if problems:
            raise ConfigError("; ".join(problems))
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.norm not in ("layer", "batch"):
            problems.append(f"norm must be 'layer' or 'batch', got {self.norm!r}")
        if self.act not in ("gelu", "relu"):
            problems.append(f"act must be 'gelu' or 'relu', got {self.act!r}")
        if self.mode == SIZE_VARYING and any(self.shift):
            problems.append("size_varying mode forbids shifted windows")
        if self.img_size < 1 or self.patch_size < 1 or self.img_size % self.patch_size:
            problems.append(f"patch_size {self.patch_size} does not divide img_size {self.img_size}")
        if self.embed_dim < 1 or self.num_classes < 1:
            problems.append("embed_dim and num_classes must be positive")
        res = self.img_size // max(self.patch_size, 1)
        for s in range(NUM_STAGES):
            if self.depths[s] < 0:
                problems.append(f"stage {s + 1} depth must be non-negative")
            M, h = self.window_sizes[s], self.heads[s]
            dim = self.embed_dim * 2**s
            if M < 1 or res < 1 or res % M:
                problems.append(f"stage {s + 1}: window size {M} does not divide grid {res}x{res}")
            if h < 1 or dim % h:
                problems.append(f"stage {s + 1}: {dim} channels not divisible by {h} heads")
            if s < NUM_STAGES - 1:
                if res % 2:
                    problems.append(f"stage {s + 1}: odd grid {res} cannot be merged")
                res //= 2
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @property
    def resolutions(self) -> list[int]:
        base = self.img_size // self.patch_size
        return [base // 2**s for s in range(NUM_STAGES)]

    @property
    def dims(self) -> list[int]:
        return [self.embed_dim * 2**s for s in range(NUM_STAGES)]

    def stages(self) -> list[StageConfig]:
        out = []
        for s, (res, dim) in enumerate(zip(self.resolutions, self.dims)):
            pattern = tuple(self.shift[s] and i % 2 == 1 for i in range(self.depths[s]))
            out.append(StageConfig(self.depths[s], self.window_sizes[s], self.heads[s], pattern, res, dim))
        return out

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def stage_trace(cfg: ModelConfig) -> list[tuple[int, int, int]]:
    """(grid side P, window size M, windows per image N) for every stage."""
    cfg.validate()
    return [(st.resolution, st.M, st.num_windows) for st in cfg.stages()]


@dataclass
class MergeParams:
    norm: NormParams  # over the 4C concatenation
    reduction: np.ndarray  # [4C, 2C], no bias


@dataclass
class StageParams:
    blocks: list[BlockParams]
    merge: MergeParams | None


@dataclass
class ModelParams:
    cfg: ModelConfig
    patch_weight: np.ndarray  # [in_chans * p * p, C]
    patch_bias: np.ndarray
    patch_norm: NormParams
    stages: list[StageParams]
    norm: NormParams
    head_weight: np.ndarray  # [8C, num_classes]
    head_bias: np.ndarray

    def named_tensors(self, buffers: bool = True) -> list[tuple[str, np.ndarray]]:
        """Every tensor in a fixed order; ``buffers`` adds batch-norm running statistics."""
        out = [("patch_embed.weight", self.patch_weight), ("patch_embed.bias", self.patch_bias)]
        out += _norm_tensors("patch_embed.norm", self.patch_norm, buffers)
        for s, stage in enumerate(self.stages):
            for b, bp in enumerate(stage.blocks):
                pre = f"stages.{s}.blocks.{b}"
                out += _norm_tensors(f"{pre}.norm1", bp.norm1, buffers)
                a = bp.attn
                out += [
                    (f"{pre}.attn.qkv.weight", a.qkv_weight),
                    (f"{pre}.attn.qkv.bias", a.qkv_bias),
                    (f"{pre}.attn.proj.weight", a.proj_weight),
                    (f"{pre}.attn.proj.bias", a.proj_bias),
                    (f"{pre}.attn.bias_table", a.bias_table),
                ]
                out += _norm_tensors(f"{pre}.norm2", bp.norm2, buffers)
                out += [
                    (f"{pre}.mlp.fc1.weight", bp.mlp.fc1_weight),
                    (f"{pre}.mlp.fc1.bias", bp.mlp.fc1_bias),
                    (f"{pre}.mlp.fc2.weight", bp.mlp.fc2_weight),
                    (f"{pre}.mlp.fc2.bias", bp.mlp.fc2_bias),
                ]
            if stage.merge is not None:
                out += _norm_tensors(f"stages.{s}.merge.norm", stage.merge.norm, buffers)
                out.append((f"stages.{s}.merge.reduction", stage.merge.reduction))
        out += _norm_tensors("norm", self.norm, buffers)
        out += [("head.weight", self.head_weight), ("head.bias", self.head_bias)]
        return out


def _norm_tensors(prefix: str, norm: NormParams, buffers: bool):
    out = [(f"{prefix}.weight", norm.weight), (f"{prefix}.bias", norm.bias)]
    if buffers and norm.kind == "batch":
        out += [(f"{prefix}.running_mean", norm.running_mean), (f"{prefix}.running_var", norm.running_var)]
    return out


def param_shapes(cfg: ModelConfig, buffers: bool = False) -> list[tuple[str, tuple[int, ...]]]:
    """Tensor names and shapes implied by ``cfg``, without allocating anything."""
    cfg.validate()
    C0, p = cfg.embed_dim, cfg.patch_size
    norm_names = ["weight", "bias"] + (["running_mean", "running_var"] if buffers and cfg.norm == "batch" else [])

    def norm(prefix, C):
        return [(f"{prefix}.{n}", (C,)) for n in norm_names]

    out = [("patch_embed.weight", (cfg.in_chans * p * p, C0)), ("patch_embed.bias", (C0,))]
    out += norm("patch_embed.norm", C0)
    for s, st in enumerate(cfg.stages()):
        C = st.dim
        for b in range(st.depth):
            pre = f"stages.{s}.blocks.{b}"
            out += norm(f"{pre}.norm1", C)
            out += [
                (f"{pre}.attn.qkv.weight", (C, 3 * C)),
                (f"{pre}.attn.qkv.bias", (3 * C,)),
                (f"{pre}.attn.proj.weight", (C, C)),
                (f"{pre}.attn.proj.bias", (C,)),
                (f"{pre}.attn.bias_table", ((2 * st.M - 1) ** 2, st.num_heads)),
            ]
            out += norm(f"{pre}.norm2", C)
            out += [
                (f"{pre}.mlp.fc1.weight", (C, MLP_RATIO * C)),
                (f"{pre}.mlp.fc1.bias", (MLP_RATIO * C,)),
                (f"{pre}.mlp.fc2.weight", (MLP_RATIO * C, C)),
                (f"{pre}.mlp.fc2.bias", (C,)),
            ]
        if s < NUM_STAGES - 1:
            out += norm(f"stages.{s}.merge.norm", 4 * C)
            out.append((f"stages.{s}.merge.reduction", (4 * C, 2 * C)))
    Cf = cfg.dims[-1]
    out += norm("norm", Cf)
    out += [("head.weight", (Cf, cfg.num_classes)), ("head.bias", (cfg.num_classes,))]
    return out


def count_params(params: ModelParams | ModelConfig) -> int:
    """Learnable scalars: weights, biases, norm affines and bias tables."""
    if isinstance(params, ModelConfig):
        return sum(int(np.prod(shape)) for _, shape in param_shapes(params))
    return sum(t.size for _, t in params.named_tensors(buffers=False))


def build_model(cfg: ModelConfig, seed: int | np.random.Generator = 0, dtype=numerics.INFER_DTYPE) -> ModelParams:
    """Initialise every tensor of ``cfg`` deterministically from ``seed``.

    Weights and bias tables are truncated normal (std 0.02), biases zero,
    norm gains one, batch-norm running statistics identity.
    """
    cfg.validate()
    rng = seed if isinstance(seed, np.random.Generator) else numerics.make_rng(seed)
    C0, p = cfg.embed_dim, cfg.patch_size

    patch_weight = numerics.trunc_normal_init((cfg.in_chans * p * p, C0), rng, dtype=dtype)
    stages = []
    for s, st in enumerate(cfg.stages()):
        C = st.dim
        blocks = []
        for b in range(st.depth):
            blocks.append(
                BlockParams(
                    norm1=NormParams.identity(cfg.norm, C, dtype),
                    attn=AttentionParams.init(C, st.num_heads, st.M, rng, dtype),
                    norm2=NormParams.identity(cfg.norm, C, dtype),
                    mlp=MlpParams.init(C, rng, dtype=dtype),
                    M=st.M,
                    shift_flag=st.shift_pattern[b],
                    act=cfg.act,
                )
            )
        merge = None
        if s < NUM_STAGES - 1:
            merge = MergeParams(
                NormParams.identity(cfg.norm, 4 * C, dtype),
                numerics.trunc_normal_init((4 * C, 2 * C), rng, dtype=dtype),
            )
        stages.append(StageParams(blocks, merge))
    Cf = cfg.dims[-1]
    return ModelParams(
        cfg=cfg,
        patch_weight=patch_weight,
        patch_bias=np.zeros(C0, dtype),
        patch_norm=NormParams.identity(cfg.norm, C0, dtype),
        stages=stages,
        norm=NormParams.identity(cfg.norm, Cf, dtype),
        head_weight=numerics.trunc_normal_init((Cf, cfg.num_classes), rng, dtype=dtype),
        head_bias=np.zeros(cfg.num_classes, dtype),
    )


def patchify(img: np.ndarray, patch_size: int) -> np.ndarray:
    """``[B, C, H, W]`` image to ``[B, H/p, W/p, C*p*p]`` patch vectors, (c, ky, kx) order."""
    if img.ndim != 4:
        raise DimensionError(f"expected a [B, C, H, W] image, got shape {img.shape}")
    B, C, H, W = img.shape
    p = patch_size
    if H % p or W % p:
        raise ConfigError(f"patch size {p} does not divide image {H}x{W}")
    return img.reshape(B, C, H // p, p, W // p, p).transpose(0, 2, 4, 1, 3, 5).reshape(B, H // p, W // p, C * p * p)


def patch_embed(img: np.ndarray, params: ModelParams) -> np.ndarray:
    with timed("embed"):
        if img.shape[1] * params.cfg.patch_size**2 != params.patch_weight.shape[0]:
            raise DimensionError(f"image {img.shape} does not match patch projection {params.patch_weight.shape}")
        x = numerics.linear(patchify(img, params.cfg.patch_size), params.patch_weight, params.patch_bias)
    return apply_norm(x, params.patch_norm)


def patch_merge(g: np.ndarray, merge: MergeParams) -> np.ndarray:
    """Concatenate each 2x2 neighbourhood (4C), normalise, reduce to 2C."""
    B, H, W, C = g.shape
    if H % 2 or W % 2:
        raise ConfigError(f"cannot merge odd grid {H}x{W}")
    with timed("merge"):
        x = np.concatenate([g[:, 0::2, 0::2], g[:, 1::2, 0::2], g[:, 0::2, 1::2], g[:, 1::2, 1::2]], axis=-1)
    x = apply_norm(x, merge.norm)
    with timed("merge"):
        return x @ merge.reduction


def model_forward(params: ModelParams, img: np.ndarray, return_trace: bool = False):
    """Logits ``[B, num_classes]``; with ``return_trace`` also each stage's block output."""
    cfg = params.cfg
    expect = (cfg.in_chans, cfg.img_size, cfg.img_size)
    if img.ndim != 4 or tuple(img.shape[1:]) != expect:
        raise DimensionError(f"input {img.shape} does not match [B, {expect[0]}, {expect[1]}, {expect[2]}]")
    img = img.astype(params.patch_weight.dtype, copy=False)
    tracer = current()
    x = patch_embed(img, params)
    trace = []
    for s, stage in enumerate(params.stages):
        if tracer is not None:
            tracer.stage = s + 1
        for bp in stage.blocks:
            x = block_forward(x, bp, cfg.mode)
        trace.append(x)
        if stage.merge is not None:
            x = patch_merge(x, stage.merge)
    x = apply_norm(x, params.norm)
    with timed("head"):
        pooled = x.reshape(x.shape[0], -1, x.shape[-1]).mean(axis=1)
        logits = numerics.linear(pooled, params.head_weight, params.head_bias)
    if return_trace:
        return logits, trace
    return logits

"""Hierarchical windowed-attention vision transformers with size-varying windows.

Includes the shifted-window baseline, analytic cost accounting and
brute-force verification oracles. Everything runs on numpy.
"""

from .attention import SHIFTED, SIZE_VARYING, block_forward, window_attention_backward, window_attention_forward
from .errors import ConfigError, DimensionError, FormatError
from .model import ModelConfig, build_model, count_params, model_forward, stage_trace
from .presets import expand_config, resolve_preset
from .profiler import count_flops, count_shift_traffic

__all__ = [
    "SHIFTED",
    "SIZE_VARYING",
    "ConfigError",
    "DimensionError",
    "FormatError",
    "ModelConfig",
    "block_forward",
    "build_model",
    "count_flops",
    "count_params",
    "count_shift_traffic",
    "expand_config",
    "model_forward",
    "resolve_preset",
    "stage_trace",
    "window_attention_backward",
    "window_attention_forward",
]

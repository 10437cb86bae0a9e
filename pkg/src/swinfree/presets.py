"""Named model presets and JSON config-file expansion.

Preset grammar (case-insensitive)::

    swin-{T,S,B}[-BR][-DR<x>]          shifted windows, M = 7 everywhere
    swin-free-{T,S,B}[-BR][-DR<x>]     no shifting, M = 7, 14, 14, 7
    swin-B-shift-<abcd>                per-stage shift on/off, e.g. swin-B-shift-0011
    swin-B-win-<a>-<b>-<c>-<d>         no shifting, per-stage window sizes

``BR`` swaps LayerNorm/GELU for BatchNorm/ReLU; ``DR<x>`` sets stage-3 depth to x.
"""

from __future__ import annotations

import re
from dataclasses import asdict

from .attention import SHIFTED, SIZE_VARYING
from .errors import ConfigError
from .model import ModelConfig

VARIANTS = {
    "T": dict(embed_dim=96, depths=(2, 2, 6, 2), heads=(3, 6, 12, 24)),
    "S": dict(embed_dim=96, depths=(2, 2, 18, 2), heads=(3, 6, 12, 24)),
    "B": dict(embed_dim=128, depths=(2, 2, 18, 2), heads=(4, 8, 16, 32)),
}
SWIN_WINDOWS = (7, 7, 7, 7)
SWIN_FREE_WINDOWS = (7, 14, 14, 7)

MODE_ALIASES = {
    "swin": SHIFTED,
    "swin-free": SIZE_VARYING,
    SHIFTED: SHIFTED,
    SIZE_VARYING: SIZE_VARYING,
}

# (case, preset) rows of the ablations and the model comparison
SHIFT_ABLATION = [
    (1, "swin-B-shift-1111"),
    (2, "swin-B-shift-0111"),
    (3, "swin-B-shift-0011"),
    (4, "swin-B-shift-0001"),
    (5, "swin-B-shift-0010"),
    (6, "swin-B-shift-0100"),
    (7, "swin-B-shift-1000"),
    (8, "swin-B-shift-0000"),
]
WINDOW_ABLATION = [
    (1, "swin-B-win-7-7-7-7"),
    (2, "swin-B-win-7-7-14-7"),
    (3, "swin-B-win-7-14-7-7"),
    (4, "swin-B-win-14-7-7-7"),
    (5, "swin-B-win-7-14-14-7"),
    (6, "swin-B-win-14-7-14-7"),
    (7, "swin-B-win-14-14-7-7"),
    (8, "swin-B-win-14-14-14-7"),
]
MODEL_ZOO = [
    (1, "Swin-B"),
    (2, "Swin-B-BR"),
    (4, "Swin-Free-B"),
    (5, "Swin-Free-T"),
    (6, "Swin-Free-S"),
    (7, "Swin-Free-T-BR"),
    (8, "Swin-Free-S-BR"),
    (9, "Swin-Free-B-BR"),
    (10, "Swin-Free-B-DR10"),
    (11, "Swin-Free-B-DR12"),
    (12, "Swin-Free-B-DR14"),
    (13, "Swin-Free-B-DR16"),
    (14, "Swin-Free-B-BR-DR12"),
    (15, "Swin-Free-B-BR-DR14"),
    (16, "Swin-Free-B-BR-DR16"),
]

_FAMILY = re.compile(r"^(swin|swin-free)-([tsb])(-br)?(?:-dr(\d+))?$", re.IGNORECASE)
_SHIFT = re.compile(r"^swin-([tsb])-shift-([01]{4})$", re.IGNORECASE)
_WIN = re.compile(r"^swin-([tsb])-win-(\d+)-(\d+)-(\d+)-(\d+)$", re.IGNORECASE)


def _base(variant: str, mode: str) -> dict:
    v = VARIANTS[variant.upper()]
    free = mode == SIZE_VARYING
    return dict(
        embed_dim=v["embed_dim"],
        depths=v["depths"],
        heads=v["heads"],
        mode=mode,
        window_sizes=SWIN_FREE_WINDOWS if free else SWIN_WINDOWS,
        shift=(False,) * 4 if free else (True,) * 4,
    )


def resolve_preset(name: str) -> ModelConfig:
    m = _FAMILY.match(name)
    if m:
        family, variant, br, dr = m.groups()
        fields = _base(variant, MODE_ALIASES[family.lower()])
        if br:
            fields.update(norm="batch", act="relu")
        if dr:
            depths = list(fields["depths"])
            depths[2] = int(dr)
            fields["depths"] = tuple(depths)
        return ModelConfig(name=name, **fields).validate()
    m = _SHIFT.match(name)
    if m:
        fields = _base(m.group(1), SHIFTED)
        fields["shift"] = tuple(c == "1" for c in m.group(2))
        return ModelConfig(name=name, **fields).validate()
    m = _WIN.match(name)
    if m:
        fields = _base(m.group(1), SIZE_VARYING)
        fields["window_sizes"] = tuple(int(g) for g in m.groups()[1:])
        return ModelConfig(name=name, **fields).validate()
    raise ConfigError(f"unknown preset {name!r}")


def preset_names() -> list[str]:
    return [n for _, n in SHIFT_ABLATION + WINDOW_ABLATION + MODEL_ZOO]


CONFIG_KEYS = {
    "name", "variant", "mode", "img_size", "patch_size", "embed_dim", "depths", "heads",
    "window_sizes", "shift", "norm", "act", "dr", "num_classes", "seed",
}


def expand_config(doc: dict) -> tuple[ModelConfig, int | None]:
    """Turn a config document into a validated :class:`ModelConfig` plus its seed.

    Preset keys (``variant``, ``mode``, ``dr``) fill defaults; explicit fields win.
    """
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    mode_name = doc.get("mode", "swin")
    if mode_name not in MODE_ALIASES:
        raise ConfigError(f"mode must be 'swin' or 'swin-free', got {mode_name!r}")
    mode = MODE_ALIASES[mode_name]
    variant = doc.get("variant", "T")
    if variant is not None and variant != "custom":
        if str(variant).upper() not in VARIANTS:
            raise ConfigError(f"variant must be T, S, B or custom, got {variant!r}")
        fields = _base(variant, mode)
    else:
        fields = _base("T", mode)
    if doc.get("dr") is not None:
        depths = list(fields["depths"])
        depths[2] = int(doc["dr"])
        fields["depths"] = tuple(depths)
    for key in ("img_size", "patch_size", "embed_dim", "depths", "heads", "window_sizes", "shift",
                "norm", "act", "num_classes", "name"):
        if key in doc:
            fields[key] = doc[key]
    try:
        cfg = ModelConfig(**fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    seed = doc.get("seed")
    return cfg, (int(seed) if seed is not None else None)


def config_to_doc(cfg: ModelConfig, seed: int | None = None) -> dict:
    """Fully explicit config document; expanding it again is a no-op."""
    d = asdict(cfg)
    doc = {
        "name": d["name"],
        "mode": "swin-free" if cfg.mode == SIZE_VARYING else "swin",
        "img_size": d["img_size"],
        "patch_size": d["patch_size"],
        "embed_dim": d["embed_dim"],
        "depths": list(d["depths"]),
        "heads": list(d["heads"]),
        "window_sizes": list(d["window_sizes"]),
        "shift": [int(s) for s in d["shift"]],
        "norm": d["norm"],
        "act": d["act"],
        "num_classes": d["num_classes"],
    }
    if seed is not None:
        doc["seed"] = seed
    return doc

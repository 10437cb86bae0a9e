"""Analytic cost accounting and wall-clock benchmarking.

FLOPs follow the multiply-accumulate convention (one MAC = one FLOP) and
count matrix products only; norms, activations and softmax are tallied
separately in :func:`elementwise_ops` and never enter the headline figure.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from threadpoolctl import threadpool_limits

from . import _trace
from .attention import MLP_RATIO, SIZE_VARYING, effective_shift
from .errors import ConfigError
from .model import NUM_STAGES, ModelConfig, ModelParams, count_params, model_forward

CSV_HEADER = ["name", "params", "flops", "shift_elements", "wall_mean_ms", "wall_std_ms"]
FORMATS = ("json", "csv", "table")
# ops attributed by bench_forward; "partition" holds window reshapes, "shift" only the rolls
OPS = ("embed", "norm", "shift", "partition", "attention", "mlp", "activation", "residual", "merge", "head")


def block_flops(HW: int, C: int, M: int) -> dict[str, int]:
    return {
        "qkv": HW * C * 3 * C,
        "attention_matmul": 2 * HW * M * M * C,
        "proj": HW * C * C,
        "mlp": 2 * HW * MLP_RATIO * C * C,
    }


def stage_flops(cfg: ModelConfig) -> list[dict[str, int]]:
    """Per-stage MAC breakdown; the patch merge closing a stage is charged to it."""
    cfg.validate()
    out = []
    for s, st in enumerate(cfg.stages()):
        HW, C = st.resolution**2, st.dim
        acc = dict.fromkeys(("qkv", "attention_matmul", "proj", "mlp", "merge"), 0)
        for _ in range(st.depth):
            for k, v in block_flops(HW, C, st.M).items():
                acc[k] += v
        if s < NUM_STAGES - 1:
            acc["merge"] = (HW // 4) * 4 * C * 2 * C
        out.append(acc)
    return out


def flop_breakdown(cfg: ModelConfig) -> dict[str, int]:
    cfg.validate()
    HW0 = cfg.resolutions[0] ** 2
    out = {"embed": HW0 * cfg.in_chans * cfg.patch_size**2 * cfg.embed_dim}
    for stage in stage_flops(cfg):
        for k, v in stage.items():
            out[k] = out.get(k, 0) + v
    out["head"] = cfg.dims[-1] * cfg.num_classes
    return out


def count_flops(cfg: ModelConfig) -> int:
    return sum(flop_breakdown(cfg).values())


def elementwise_ops(cfg: ModelConfig) -> dict[str, int]:
    """Element counts touched by norms, activations and softmax (reported, not in FLOPs)."""
    norm = cfg.resolutions[0] ** 2 * cfg.embed_dim
    act = softmax = 0
    for s, st in enumerate(cfg.stages()):
        HW, C = st.resolution**2, st.dim
        norm += st.depth * 2 * HW * C + (HW * C if s < NUM_STAGES - 1 else 0)
        act += st.depth * HW * MLP_RATIO * C
        softmax += st.depth * HW * st.M * st.M * st.num_heads
    norm += cfg.resolutions[-1] ** 2 * cfg.dims[-1]
    return {"norm": norm, "activation": act, "softmax": softmax}


def shift_traffic_by_stage(cfg: ModelConfig) -> list[int]:
    cfg.validate()
    out = []
    for st in cfg.stages():
        n = 0
        if cfg.mode != SIZE_VARYING:
            for flag in st.shift_pattern:
                if effective_shift(st.M, st.resolution, st.resolution, flag):
                    n += 2 * st.resolution**2 * st.dim
        out.append(n)
    return out


def count_shift_traffic(cfg: ModelConfig) -> int:
    """Grid elements moved by cyclic shifts per image, roll and inverse roll both counted."""
    return sum(shift_traffic_by_stage(cfg))


def shift_bytes(elements: int, dtype=np.float32) -> int:
    return elements * np.dtype(dtype).itemsize


@dataclass
class BenchResult:
    mean_ms: float
    std_ms: float
    runs: int
    fractions: dict[str, float]
    windows_per_block: dict[str, float]


def bench_forward(
    params: ModelParams,
    img: np.ndarray,
    runs: int = 5,
    warmup: int = 1,
    threads: int | None = 1,
) -> BenchResult:
    """Time end-to-end forwards and attribute wall-clock to ops.

    ``threads=None`` leaves BLAS threading untouched.
    """
    if runs < 3:
        raise ConfigError(f"need at least 3 runs, got {runs}")
    if warmup < 1:
        raise ConfigError(f"need at least 1 warmup run, got {warmup}")
    with threadpool_limits(limits=threads):
        for _ in range(warmup):
            model_forward(params, img)
        times = []
        op_seconds = dict.fromkeys(OPS, 0.0)
        counters: dict[str, int] = {}
        for _ in range(runs):
            with _trace.tracing() as tr:
                t0 = time.perf_counter()
                model_forward(params, img)
                times.append(time.perf_counter() - t0)
            for op, sec in tr.seconds.items():
                op_seconds[op] = op_seconds.get(op, 0.0) + sec
            counters = dict(tr.counters)
    total = sum(times)
    fractions = {op: sec / total for op, sec in op_seconds.items()}
    batch = img.shape[0]
    windows = {}
    for s in range(1, NUM_STAGES + 1):
        calls = counters.get(f"stage{s}.attention_calls", 0)
        if calls:
            windows[f"stage{s}"] = counters[f"stage{s}.windows"] / calls / batch
    ms = [t * 1e3 for t in times]
    return BenchResult(statistics.fmean(ms), statistics.stdev(ms), runs, fractions, windows)


@dataclass
class ProfileReport:
    name: str
    params: int
    flops: int
    shift_elements: int
    wall_mean_ms: float | None = None
    wall_std_ms: float | None = None
    runs: int = 0
    breakdown: dict[str, float] = field(default_factory=dict)
    windows_per_block: dict[str, float] = field(default_factory=dict)
    flop_breakdown: dict[str, int] = field(default_factory=dict)

    @property
    def shift_fraction(self) -> float:
        return self.breakdown.get("shift", 0.0)

    def shift_bytes(self, dtype=np.float32) -> int:
        return shift_bytes(self.shift_elements, dtype)


def profile_config(cfg: ModelConfig) -> ProfileReport:
    """Analytic report only; no model is built."""
    return ProfileReport(
        name=cfg.name,
        params=count_params(cfg),
        flops=count_flops(cfg),
        shift_elements=count_shift_traffic(cfg),
        flop_breakdown=flop_breakdown(cfg),
    )


def profile_model(params: ModelParams, img: np.ndarray, runs: int = 5, warmup: int = 1, threads: int | None = 1):
    rep = profile_config(params.cfg)
    rep.params = count_params(params)
    b = bench_forward(params, img, runs, warmup, threads)
    rep.wall_mean_ms, rep.wall_std_ms, rep.runs = b.mean_ms, b.std_ms, b.runs
    rep.breakdown, rep.windows_per_block = b.fractions, b.windows_per_block
    return rep


def compare_reports(a: ProfileReport, b: ProfileReport) -> ProfileReport:
    """Difference row ``a - b``."""
    mean = None
    if a.wall_mean_ms is not None and b.wall_mean_ms is not None:
        mean = a.wall_mean_ms - b.wall_mean_ms
    return ProfileReport(
        name=f"delta:{a.name}-{b.name}",
        params=a.params - b.params,
        flops=a.flops - b.flops,
        shift_elements=a.shift_elements - b.shift_elements,
        wall_mean_ms=mean,
    )


def report_from_dict(d: dict) -> ProfileReport:
    known = {f.name for f in fields(ProfileReport)}
    return ProfileReport(**{k: v for k, v in d.items() if k in known})


def parse_json_report(data: bytes | str) -> list[ProfileReport]:
    doc = json.loads(data)
    return [report_from_dict(d) for d in doc["reports"]]


def _fmt_ms(v: float | None) -> str:
    return "" if v is None else f"{v:.4f}"


def emit_report(reports: ProfileReport | list[ProfileReport], fmt: str = "json") -> bytes:
    if isinstance(reports, ProfileReport):
        reports = [reports]
    if fmt == "json":
        doc = {"reports": [asdict(r) for r in reports]}
        return (json.dumps(doc, indent=2) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow([r.name, r.params, r.flops, r.shift_elements, _fmt_ms(r.wall_mean_ms), _fmt_ms(r.wall_std_ms)])
        return buf.getvalue().encode()
    if fmt == "table":
        return render_table(reports).encode()
    raise ConfigError(f"unknown report format {fmt!r}; expected one of {FORMATS}")


def render_table(reports: list[ProfileReport]) -> str:
    width = max([len("Model")] + [len(r.name) for r in reports])
    lines = [f"{'Model':<{width}}  {'FLOPs':>8}  {'# params':>9}  {'shift elems':>12}  {'latency (ms)':>14}"]
    lines.append("-" * len(lines[0]))
    for r in reports:
        lat = "-" if r.wall_mean_ms is None else f"{r.wall_mean_ms:.2f}"
        if r.wall_std_ms is not None:
            lat += f" ±{r.wall_std_ms:.2f}"
        lines.append(
            f"{r.name:<{width}}  {r.flops / 1e9:>7.2f}G  {r.params / 1e6:>8.2f}M  {r.shift_elements:>12,}  {lat:>14}"
        )
    return "\n".join(lines) + "\n"

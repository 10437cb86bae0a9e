"""Brute-force oracles, window connectivity and the property suite.

The oracles are deliberately naive: pure Python loops in float64, with their
own relative-position arithmetic and their own region grouping. They share no
code with the vectorised attention path they check.
"""

from __future__ import annotations

import json
import math
import traceback
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics
from .attention import (
    SHIFTED,
    SIZE_VARYING,
    AttentionParams,
    BlockParams,
    MlpParams,
    NormParams,
    block_forward,
    effective_shift,
    shifted_window_attention,
    window_attention_backward,
    window_attention_forward,
)
from .model import ModelConfig, build_model, model_forward, stage_trace
from .windowing import build_shift_mask, cyclic_shift, relative_position_index, window_partition, window_reverse

ORACLE_TOL = 1e-10
ORACLE_TOL_F32 = 1e-5
GRAD_TOL = 1e-4


def _dense_attention(xs, coords, p: AttentionParams, M: int):
    """Dense attention among the given tokens; ``coords`` are (row, col) inside an M x M window."""
    Wqkv = p.qkv_weight.tolist()
    bqkv = p.qkv_bias.tolist()
    Wp = p.proj_weight.tolist()
    bp = p.proj_bias.tolist()
    table = p.bias_table.tolist()
    C = len(bqkv) // 3
    h = p.num_heads
    d = C // h
    scale = 1.0 / math.sqrt(d)
    T = len(xs)

    qkv = []
    for x in xs:
        row = []
        for j in range(3 * C):
            acc = bqkv[j]
            for i in range(C):
                acc += x[i] * Wqkv[i][j]
            row.append(acc)
        qkv.append(row)

    outs = []
    for t in range(T):
        mixed = [0.0] * C
        for head in range(h):
            lo = head * d
            scores = []
            for u in range(T):
                dot = sum(qkv[t][lo + e] * qkv[u][C + lo + e] for e in range(d))
                dy = coords[t][0] - coords[u][0] + M - 1
                dx = coords[t][1] - coords[u][1] + M - 1
                scores.append(dot * scale + table[dy * (2 * M - 1) + dx][head])
            top = max(scores)
            weights = [math.exp(s - top) for s in scores]
            z = sum(weights)
            for u in range(T):
                w = weights[u] / z
                for e in range(d):
                    mixed[lo + e] += w * qkv[u][2 * C + lo + e]
        out = []
        for j in range(C):
            acc = bp[j]
            for i in range(C):
                acc += mixed[i] * Wp[i][j]
            out.append(acc)
        outs.append(out)
    return outs


def global_attention_oracle(tokens: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Dense attention over all ``T = M*M`` tokens, taken in row-major window order."""
    T, C = tokens.shape
    M = math.isqrt(T)
    if M * M != T or M != p.M:
        raise ValueError(f"{T} tokens do not fill the {p.M}x{p.M} window of the bias table")
    coords = [divmod(t, M) for t in range(T)]
    xs = np.asarray(tokens, dtype=np.float64).tolist()
    return np.array(_dense_attention(xs, coords, p, M))


def masked_group_oracle(g: np.ndarray, M: int, shift: int, p: AttentionParams) -> np.ndarray:
    """Shifted-window attention without a mask.

    Each window of the rolled grid is split into groups of tokens that did
    not wrap around the torus (per axis); every group gets its own dense
    attention and results are written back to unrolled coordinates.
    """
    B, H, W, C = g.shape
    out = np.zeros((B, H, W, C))
    for b in range(B):
        for wy in range(0, H, M):
            for wx in range(0, W, M):
                groups: dict[tuple[bool, bool], list] = {}
                for y in range(wy, wy + M):
                    for x in range(wx, wx + M):
                        key = (y + shift >= H, x + shift >= W)
                        src = ((y + shift) % H, (x + shift) % W)
                        groups.setdefault(key, []).append(((y - wy, x - wx), src))
                for members in groups.values():
                    coords = [c for c, _ in members]
                    xs = [g[b, sy, sx].astype(np.float64).tolist() for _, (sy, sx) in members]
                    for (_, (sy, sx)), o in zip(members, _dense_attention(xs, coords, p, M)):
                        out[b, sy, sx] = o
    return out


@dataclass
class ConnectivityGraph:
    adjacency: np.ndarray  # [H*W, H*W] bool, symmetric and reflexive
    H: int
    W: int

    def components(self) -> list[list[int]]:
        n = self.adjacency.shape[0]
        seen = np.zeros(n, dtype=bool)
        comps = []
        for start in range(n):
            if seen[start]:
                continue
            seen[start] = True
            queue, comp = deque([start]), []
            while queue:
                u = queue.popleft()
                comp.append(u)
                for v in np.flatnonzero(self.adjacency[u] & ~seen):
                    seen[v] = True
                    queue.append(v)
            comps.append(comp)
        return comps

    @property
    def num_components(self) -> int:
        return len(self.components())


def connectivity_graph(stage_blocks: list[tuple[int, bool]], H: int, W: int) -> ConnectivityGraph:
    """Token pairs sharing an attention group in at least one block.

    Shifted blocks group tokens by rolled-window membership, split the way the
    shift mask splits them (tokens that wrapped around vs. those that did not).
    """
    adj = np.eye(H * W, dtype=bool)
    for M, flag in stage_blocks:
        if H % M or W % M:
            raise ValueError(f"window {M} does not divide {H}x{W}")
        s = effective_shift(M, H, W, flag)
        for wy in range(0, H, M):
            for wx in range(0, W, M):
                groups: dict[tuple[bool, bool], list[int]] = {}
                for y in range(wy, wy + M):
                    for x in range(wx, wx + M):
                        key = (y + s >= H, x + s >= W)
                        groups.setdefault(key, []).append(((y + s) % H) * W + (x + s) % W)
                for ids in groups.values():
                    adj[np.ix_(ids, ids)] = True
    return ConnectivityGraph(adj, H, W)


# ---------------------------------------------------------------------------
# property suite


@dataclass
class PropertyResult:
    name: str
    status: str  # "pass" | "fail" | "error"
    max_error: float | None
    seed: int
    detail: str = ""


@dataclass
class SuiteReport:
    scope: str
    seed: int
    results: list[PropertyResult]

    @property
    def ok(self) -> bool:
        return all(r.status == "pass" for r in self.results)

    def failures(self) -> list[PropertyResult]:
        return [r for r in self.results if r.status != "pass"]

    def text(self) -> str:
        lines = []
        for r in self.results:
            err = "-" if r.max_error is None else f"{r.max_error:.3e}"
            line = f"{r.status.upper():5s} {r.name:<40s} max_err={err} seed={r.seed}"
            if r.detail and r.status != "pass":
                line += f"  {r.detail}"
            lines.append(line)
        passed = sum(r.status == "pass" for r in self.results)
        lines.append(f"{passed}/{len(self.results)} properties passed (scope={self.scope}, seed={self.seed})")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {"scope": self.scope, "seed": self.seed, "ok": self.ok, "results": [asdict(r) for r in self.results]}
        return json.dumps(doc, indent=2) + "\n"


_PROPERTIES = []


def _prop(name, scopes=("quick", "full")):
    def register(fn):
        _PROPERTIES.append((name, scopes, fn))
        return fn

    return register


def random_attention_params(rng, C, heads, M, dtype=np.float64, scale=0.5) -> AttentionParams:
    return AttentionParams(
        qkv_weight=(rng.standard_normal((C, 3 * C)) * scale).astype(dtype),
        qkv_bias=(rng.standard_normal(3 * C) * 0.1).astype(dtype),
        proj_weight=(rng.standard_normal((C, C)) * scale).astype(dtype),
        proj_bias=(rng.standard_normal(C) * 0.1).astype(dtype),
        bias_table=(rng.standard_normal(((2 * M - 1) ** 2, heads)) * 0.5).astype(dtype),
        num_heads=heads,
    )


def random_block(rng, C, heads, M, shift_flag=False, norm="layer", act="gelu", dtype=np.float64) -> BlockParams:
    def norm_params():
        n = NormParams.identity(norm, C, dtype)
        n.weight = (1 + 0.1 * rng.standard_normal(C)).astype(dtype)
        n.bias = (0.1 * rng.standard_normal(C)).astype(dtype)
        return n

    mlp = MlpParams(
        (rng.standard_normal((C, 4 * C)) * 0.3).astype(dtype),
        (rng.standard_normal(4 * C) * 0.1).astype(dtype),
        (rng.standard_normal((4 * C, C)) * 0.3).astype(dtype),
        (rng.standard_normal(C) * 0.1).astype(dtype),
    )
    return BlockParams(norm_params(), random_attention_params(rng, C, heads, M, dtype), norm_params(), mlp, M, shift_flag, act)


def _naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


@_prop("matmul_matches_triple_loop")
def _p_matmul(rng, scope):
    err = 0.0
    for _ in range(10 if scope == "quick" else 40):
        m, k, n = rng.integers(1, 8, size=3)
        a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        err = max(err, float(np.abs(numerics.matmul(a, b) - _naive_matmul(a, b)).max()))
        eye = np.eye(m)
        err = max(err, float(np.abs(numerics.matmul(eye, a) - a).max()))
    return err <= 1e-12, err


@_prop("softmax_normalization")
def _p_softmax(rng, scope):
    x = rng.standard_normal((64, int(rng.integers(1, 20)))) * 10
    y = numerics.softmax_lastdim(x)
    err = float(np.abs(y.sum(axis=-1) - 1).max())
    shifted = numerics.softmax_lastdim(x + rng.standard_normal((64, 1)) * 100)
    err = max(err, float(np.abs(shifted - y).max()))
    return err <= 1e-6 and bool((y >= 0).all()), err


@_prop("layer_norm_statistics")
def _p_layer_norm(rng, scope):
    C = int(rng.integers(2, 64))
    x = rng.standard_normal((32, C)) * 5 + 3
    y = numerics.layer_norm(x, np.ones(C), np.zeros(C), eps=1e-12)
    err = max(float(np.abs(y.mean(-1)).max()), float(np.abs(y.var(-1) - 1).max()))
    return err <= 1e-5, err


@_prop("batch_norm_affine_in_input")
def _p_batch_norm(rng, scope):
    C = 16
    mean, var = rng.standard_normal(C), rng.random(C) + 0.1
    gamma, beta = rng.standard_normal(C), rng.standard_normal(C)
    f = lambda x: numerics.batch_norm_infer(x, mean, var, gamma, beta)  # noqa: E731
    x, y = rng.standard_normal((8, C)), rng.standard_normal((8, C))
    a = float(rng.standard_normal())
    err = float(np.abs(f(a * x + (1 - a) * y) - (a * f(x) + (1 - a) * f(y))).max())
    return err <= 1e-10, err


def _random_grid_case(rng):
    M = int(rng.integers(1, 6))
    H, W = M * int(rng.integers(1, 5)), M * int(rng.integers(1, 5))
    B, C = int(rng.integers(1, 3)), int(rng.integers(1, 5))
    return rng.standard_normal((B, H, W, C)), M


@_prop("partition_reverse_roundtrip")
def _p_partition(rng, scope):
    for _ in range(200 if scope == "quick" else 1000):
        g, M = _random_grid_case(rng)
        ws = window_partition(g, M)
        if ws.num_windows != (g.shape[1] // M) * (g.shape[2] // M):
            return False, None
        if not np.array_equal(window_reverse(ws, g.shape[1], g.shape[2]), g):
            return False, None
    return True, 0.0


@_prop("shift_unshift_roundtrip")
def _p_shift(rng, scope):
    for _ in range(200 if scope == "quick" else 1000):
        g, _ = _random_grid_case(rng)
        dy, dx = (int(v) for v in rng.integers(-20, 20, size=2))
        if not np.array_equal(cyclic_shift(cyclic_shift(g, dy, dx), -dy, -dx), g):
            return False, None
    return True, 0.0


@_prop("shift_mask_structure")
def _p_mask(rng, scope):
    for M in range(2, 8):
        for shift in range(1, M):
            sm = build_shift_mask(2 * M, 2 * M, M, shift)
            m = sm.mask
            if not np.array_equal(m, m.transpose(0, 2, 1)):
                return False, None, f"asymmetric mask M={M} shift={shift}"
            if np.any(np.diagonal(m, axis1=1, axis2=2) != 0):
                return False, None, f"nonzero diagonal M={M} shift={shift}"
            regions = len(np.unique(sm.region_ids))
            if not 4 <= regions <= 9:
                return False, None, f"{regions} regions for M={M} shift={shift}"
    return True, 0.0


@_prop("relative_position_translation_invariance")
def _p_relpos(rng, scope):
    for M in range(1, 8 if scope == "full" else 5):
        idx = relative_position_index(M).index
        seen: dict[tuple[int, int], int] = {}
        for i in range(M * M):
            for j in range(M * M):
                off = (i // M - j // M, i % M - j % M)
                if seen.setdefault(off, int(idx[i, j])) != idx[i, j]:
                    return False, None, f"M={M} offset {off} maps to two entries"
        if len(set(seen.values())) != len(seen) or max(seen.values()) >= (2 * M - 1) ** 2:
            return False, None, f"M={M} index is not a bijection onto the table"
    return True, 0.0


@_prop("attention_rows_sum_to_one")
def _p_rows(rng, scope):
    M, C, heads = 4, 8, 2
    p = random_attention_params(rng, C, heads, M)
    g = rng.standard_normal((2, 8, 8, C))
    err = 0.0
    for mask in (None, build_shift_mask(8, 8, M, 2)):
        x = cyclic_shift(g, 2, 2) if mask is not None else g
        _, w = window_attention_forward(window_partition(x, M), p, mask, return_weights=True)
        err = max(err, float(np.abs(w.sum(-1) - 1).max()))
    return err <= 1e-6, err


@_prop("window_permutation_equivariance")
def _p_perm(rng, scope):
    M, C, heads = 3, 6, 3
    p = random_attention_params(rng, C, heads, M)
    x = rng.standard_normal((10, M * M, C))
    perm = rng.permutation(10)
    a = window_attention_forward(x, p)[perm]
    b = window_attention_forward(x[perm], p)
    err = float(np.abs(a - b).max())
    return err == 0.0, err


@_prop("unshifted_baseline_equals_size_varying")
def _p_shift0(rng, scope):
    C, heads, M = 8, 2, 4
    g = rng.standard_normal((1, 8, 8, C))
    bp = random_block(rng, C, heads, M, shift_flag=False)
    a = block_forward(g, bp, SHIFTED)
    b = block_forward(g, bp, SIZE_VARYING)
    # a shift flag on a single full-grid window is suppressed
    g1 = rng.standard_normal((1, M, M, C))
    bp.shift_flag = True
    c = block_forward(g1, bp, SHIFTED)
    bp.shift_flag = False
    d = block_forward(g1, bp, SIZE_VARYING)
    ok = np.array_equal(a, b) and np.array_equal(c, d)
    return ok, float(max(np.abs(a - b).max(), np.abs(c - d).max()))


@_prop("global_attention_oracle")
def _p_global(rng, scope):
    err = 0.0
    for _ in range(5 if scope == "quick" else 20):
        M, C, heads = int(rng.integers(1, 5)), 8, 2
        p = random_attention_params(rng, C, heads, M)
        g = rng.standard_normal((1, M, M, C))
        fast = window_attention_forward(window_partition(g, M), p).windows[0]
        slow = global_attention_oracle(g[0].reshape(M * M, C), p)
        err = max(err, float(np.abs(fast - slow).max()))
    return err <= ORACLE_TOL, err


@_prop("masked_group_oracle")
def _p_masked(rng, scope):
    err = 0.0
    for _ in range(3 if scope == "quick" else 20):
        p = random_attention_params(rng, 8, 2, 7)
        g = rng.standard_normal((1, 14, 14, 8))
        fast = shifted_window_attention(g, p, 3)
        slow = masked_group_oracle(g, 7, 3, p)
        err = max(err, float(np.abs(fast - slow).max()))
    return err <= ORACLE_TOL, err


def gradient_check(rng, M=2, C=4, heads=2, h=1e-5, mask=None) -> float:
    """Max relative error of the analytic attention backward against central differences."""
    p = random_attention_params(rng, C, heads, M)
    x = rng.standard_normal((1 if mask is None else mask.shape[0], M * M, C))
    up = rng.standard_normal(x.shape)
    grads = window_attention_backward(x, p, mask, up)

    def loss_wrt(attr):
        def f(v):
            if attr == "x":
                return float(np.sum(up * window_attention_forward(v, p, mask)))
            saved = getattr(p, attr)
            setattr(p, attr, v)
            try:
                return float(np.sum(up * window_attention_forward(x, p, mask)))
            finally:
                setattr(p, attr, saved)

        return f

    worst = 0.0
    for attr in ("x", "qkv_weight", "qkv_bias", "proj_weight", "proj_bias", "bias_table"):
        ref = numerics.finite_diff_grad(loss_wrt(attr), x if attr == "x" else getattr(p, attr), h)
        rel = np.abs(grads[attr] - ref).max() / max(np.abs(ref).max(), 1e-12)
        worst = max(worst, float(rel))
    return worst


@_prop("attention_gradient_check")
def _p_grad(rng, scope):
    err = max(gradient_check(rng) for _ in range(5 if scope == "quick" else 20))
    return err < GRAD_TOL, err


@_prop("window_connectivity")
def _p_connect(rng, scope):
    checks = [
        ([(7, False)], 14, 4),
        ([(7, False), (14, False)], 14, 1),
        ([(7, False), (7, True)], 14, 1),
        # no-shift constant-window ablation, stage 3
        ([(7, False)] * 18, 14, 4),
    ]
    cfg = ModelConfig(embed_dim=128, depths=(2, 2, 18, 2), heads=(4, 8, 16, 32), window_sizes=(7, 14, 14, 7),
                      mode=SIZE_VARYING, shift=(False,) * 4)
    for side, M, N in stage_trace(cfg):
        if scope == "quick" and side > 28:
            continue
        checks.append(([(M, False)] * 2, side, N))
    for blocks, side, want in checks:
        got = connectivity_graph(blocks, side, side).num_components
        if got != want:
            return False, None, f"{blocks[:2]} on {side}x{side}: {got} components, expected {want}"
    return True, 0.0


@_prop("stage_geometry_trace", scopes=("full",))
def _p_trace(rng, scope):
    from .presets import resolve_preset

    want = {
        "swin-B": [(56, 7, 64), (28, 7, 16), (14, 7, 4), (7, 7, 1)],
        "swin-free-B": [(56, 7, 64), (28, 14, 4), (14, 14, 1), (7, 7, 1)],
    }
    for name, rows in want.items():
        cfg = resolve_preset(name)
        if stage_trace(cfg) != rows:
            return False, None, f"{name}: {stage_trace(cfg)}"
        for st, (side, M, N) in zip(cfg.stages(), rows):
            ws = window_partition(np.zeros((1, side, side, 1)), st.M)
            if ws.num_windows != N:
                return False, None, f"{name}: partition gives {ws.num_windows} windows, expected {N}"
    return True, 0.0


@_prop("shift_traffic_closed_form")
def _p_traffic(rng, scope):
    from .presets import MODEL_ZOO, WINDOW_ABLATION, resolve_preset
    from .profiler import count_shift_traffic

    got = count_shift_traffic(resolve_preset("swin-B"))
    if got != 3_010_560:
        return False, float(abs(got - 3_010_560)), f"swin-B traffic {got}"
    for _, name in MODEL_ZOO + WINDOW_ABLATION:
        cfg = resolve_preset(name)
        if cfg.mode == SIZE_VARYING and count_shift_traffic(cfg) != 0:
            return False, None, f"{name} has shift traffic"
    return True, 0.0


@_prop("forward_determinism")
def _p_determinism(rng, scope):
    cfg = ModelConfig(img_size=32, patch_size=2, embed_dim=8, depths=(2, 2, 2, 2), heads=(1, 2, 2, 4),
                      window_sizes=(4, 4, 4, 2), num_classes=10)
    seed = int(rng.integers(1 << 31))
    img = rng.standard_normal((2, 3, 32, 32)).astype(np.float32)
    a = model_forward(build_model(cfg, seed), img)
    b = model_forward(build_model(cfg, seed), img)
    return np.array_equal(a, b) and bool(np.isfinite(a).all()), 0.0


def property_names(scope: str = "full") -> list[str]:
    return [name for name, scopes, _ in _PROPERTIES if scope in scopes]


def run_property_suite(scope: str = "quick", seed: int = 0) -> SuiteReport:
    """Run every property of ``scope``; failures are collected, never raised."""
    if scope not in ("quick", "full"):
        raise ValueError(f"scope must be 'quick' or 'full', got {scope!r}")
    results = []
    for i, (name, scopes, fn) in enumerate(_PROPERTIES):
        if scope not in scopes:
            continue
        prop_seed = seed * 1000 + i
        rng = numerics.make_rng(prop_seed)
        try:
            out = fn(rng, scope)
            ok, err = bool(out[0]), out[1]
            detail = out[2] if len(out) > 2 else ""
            results.append(PropertyResult(name, "pass" if ok else "fail", err, prop_seed, detail))
        except Exception as exc:  # noqa: BLE001
            tb = traceback.format_exception_only(type(exc), exc)[-1].strip()
            results.append(PropertyResult(name, "error", None, prop_seed, tb))
    return SuiteReport(scope, seed, results)

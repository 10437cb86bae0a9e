"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` or directly with
``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import re
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from swinfree import archive
from swinfree.attention import SIZE_VARYING, shifted_window_attention, window_attention_forward
from swinfree.model import build_model, count_params, stage_trace
from swinfree.presets import MODEL_ZOO, SHIFT_ABLATION, WINDOW_ABLATION, resolve_preset
from swinfree.profiler import count_flops, count_shift_traffic, profile_model
from swinfree.verify import (
    connectivity_graph,
    global_attention_oracle,
    gradient_check,
    masked_group_oracle,
    random_attention_params,
)
from swinfree.windowing import cyclic_shift, window_partition, window_reverse

GEOMETRY = {
    "swin-B": [(56, 7, 64), (28, 7, 16), (14, 7, 4), (7, 7, 1)],
    "swin-free-B": [(56, 7, 64), (28, 14, 4), (14, 14, 1), (7, 7, 1)],
}
SEEDS = range(20)


def _cli(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "swinfree", *args], capture_output=True, text=True)


def check_geometry():
    cells, worst = 0, 0.0
    for name, want in GEOMETRY.items():
        t0 = time.perf_counter()
        proc = _cli("describe", "--preset", name)
        worst = max(worst, time.perf_counter() - t0)
        got = [tuple(map(int, m)) for m in re.findall(r"P=(\d+)x\d+ M=(\d+) N=(\d+)", proc.stdout)]
        cells += sum(a == b for g, w in zip(got, want) for a, b in zip(g, w))
    ok = cells == 24 and worst < 1.0
    return ok, f"{cells}/24 cells match, slowest describe {worst:.2f} s (limit 1 s)"


def check_params():
    base = count_params(resolve_preset("swin-B"))
    rel = base / 88.7e6 - 1
    free = count_params(resolve_preset("swin-free-B"))
    br = count_params(resolve_preset("swin-free-B-BR"))
    dr = [count_params(resolve_preset(f"swin-free-B-DR{x}")) for x in (10, 12, 14, 16)]
    ordered = all(a < b for a, b in zip(dr, dr[1:]))
    ok = abs(rel) <= 0.02 and br == free and ordered
    return ok, (
        f"swin-B {base / 1e6:.2f}M ({rel:+.2%} vs 88.7M), BR == base: {br == free}, "
        f"DR10<12<14<16: {ordered} [{', '.join(f'{d / 1e6:.1f}M' for d in dr)}]; "
        f"swin-free-B {free / 1e6:.2f}M, swin-free-T {count_params(resolve_preset('swin-free-T')) / 1e6:.2f}M (report only)"
    )


def check_flops():
    b = count_flops(resolve_preset("swin-B"))
    t = count_flops(resolve_preset("swin-free-T"))
    delta = count_flops(resolve_preset("swin-free-B")) - b
    ok = abs(b / 15.9e9 - 1) <= 0.10 and abs(t / 5.0e9 - 1) <= 0.10 and 0.5e9 <= delta <= 1.2e9
    return ok, (
        f"swin-B {b / 1e9:.2f}G ({b / 15.9e9 - 1:+.1%} vs 15.9G), swin-free-T {t / 1e9:.2f}G "
        f"({t / 5.0e9 - 1:+.1%} vs 5.0G), free-B minus B {delta / 1e9:.2f}G (window [0.5, 1.2])"
    )


def check_shift_traffic():
    traffic = count_shift_traffic(resolve_preset("swin-B"))
    names = [n for _, n in SHIFT_ABLATION + WINDOW_ABLATION + MODEL_ZOO]
    varying = [n for n in names if resolve_preset(n).mode == SIZE_VARYING]
    nonzero = [n for n in varying if count_shift_traffic(resolve_preset(n))]
    img = np.random.default_rng(0).standard_normal((1, 3, 224, 224)).astype(np.float32)
    fractions = {}
    for name in ("swin-B", "swin-free-B"):
        rep = profile_model(build_model(resolve_preset(name), 0), img, runs=3, warmup=1)
        fractions[name] = rep.shift_fraction
    ok = traffic == 3_010_560 and not nonzero and fractions["swin-free-B"] == 0.0 and fractions["swin-B"] > 0
    return ok, (
        f"swin-B {traffic:,} elements (want 3,010,560), {len(varying)} size-varying presets with zero traffic, "
        f"{len(nonzero)} nonzero; measured shift share swin-B {fractions['swin-B']:.2%} (reported, not asserted), "
        f"swin-free-B {fractions['swin-free-B']:.2%}"
    )


def check_oracles():
    t0 = time.perf_counter()
    g_err = m_err = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        p = random_attention_params(rng, 8, 2, 7)
        g = rng.standard_normal((1, 7, 7, 8))
        fast = window_attention_forward(window_partition(g, 7), p).windows[0]
        g_err = max(g_err, float(np.abs(fast - global_attention_oracle(g[0].reshape(49, 8), p)).max()))
        p = random_attention_params(rng, 8, 2, 7)
        g = rng.standard_normal((1, 14, 14, 8))
        m_err = max(m_err, float(np.abs(shifted_window_attention(g, p, 3) - masked_group_oracle(g, 7, 3, p)).max()))
    elapsed = time.perf_counter() - t0
    ok = g_err <= 1e-10 and m_err <= 1e-10 and elapsed < 30
    return ok, f"N=1 vs global max err {g_err:.1e}, masked vs group oracle max err {m_err:.1e} (tol 1e-10), {elapsed:.1f} s"


def check_gradient():
    worst = max(gradient_check(np.random.default_rng(seed), h=1e-5) for seed in SEEDS)
    return worst < 1e-4, f"max relative error {worst:.2e} over {len(SEEDS)} seeds (tol 1e-4)"


def check_connectivity():
    base = connectivity_graph([(7, False)], 14, 14).num_components
    with_big = connectivity_graph([(7, False), (14, False)], 14, 14).num_components
    with_shift = connectivity_graph([(7, False), (7, True)], 14, 14).num_components
    cfg = resolve_preset("swin-free-B")
    per_stage = []
    for st, (side, M, N) in zip(cfg.stages(), stage_trace(cfg)):
        blocks = [(st.M, flag) for flag in st.shift_pattern]
        per_stage.append((connectivity_graph(blocks, side, side).num_components, N))
    ok = base == 4 and with_big == 1 and with_shift == 1 and all(a == b for a, b in per_stage)
    return ok, (
        f"M=7 alone {base}, +M=14 {with_big}, +shifted M=7 {with_shift}; "
        f"swin-free-B components vs N per stage {per_stage}"
    )


def check_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        img = np.random.default_rng(0).standard_normal((1, 3, 224, 224)).astype(np.float32)
        archive.write_blob(tmp / "in.bin", img)
        blobs = []
        for i in range(2):
            out = tmp / f"logits{i}.bin"
            proc = _cli("infer", "--preset", "swin-free-T", "--random-seed", "0", "--input", str(tmp / "in.bin"),
                        "--output", str(out))
            blobs.append(out.read_bytes() if proc.returncode == 0 else None)
        identical = blobs[0] is not None and blobs[0] == blobs[1]

    rng = np.random.default_rng(2024)
    cases = failures = 0
    for _ in range(1000):
        M = int(rng.integers(1, 8))
        H, W = M * int(rng.integers(1, 5)), M * int(rng.integers(1, 5))
        g = rng.standard_normal((int(rng.integers(1, 3)), H, W, int(rng.integers(1, 5))))
        dy, dx = int(rng.integers(-H, H + 1)), int(rng.integers(-W, W + 1))
        failures += not np.array_equal(window_reverse(window_partition(g, M), H, W), g)
        failures += not np.array_equal(cyclic_shift(cyclic_shift(g, dy, dx), -dy, -dx), g)
        cases += 2
    ok = identical and failures == 0
    return ok, f"seed-pinned infer byte-identical: {identical}; {cases - failures}/{cases} round-trip cases bit-exact"


def check_rows_build():
    names = [n for _, n in SHIFT_ABLATION + WINDOW_ABLATION + MODEL_ZOO]
    distinct, bad = [], []
    for name in names:
        try:
            cfg = resolve_preset(name)
        except Exception as exc:  # noqa: BLE001 - any failure is a criterion failure
            bad.append(f"{name}: {exc}")
            continue
        if cfg not in distinct:
            distinct.append(cfg)
    for cfg in distinct:
        try:
            if count_params(build_model(cfg, 0)) != count_params(cfg):
                bad.append(f"{cfg.name}: built tensor count disagrees")
        except Exception as exc:  # noqa: BLE001
            bad.append(f"{cfg.name}: {exc}")
    return not bad, f"{len(names)} row names, {len(distinct)} distinct configs built" + (f"; failures {bad}" if bad else "")


CRITERIA = [
    (1, "geometry reproduction", check_geometry),
    (2, "parameter count", check_params),
    (3, "FLOP count", check_flops),
    (4, "shift traffic", check_shift_traffic),
    (5, "oracle equivalence", check_oracles),
    (6, "gradient check", check_gradient),
    (7, "connectivity", check_connectivity),
    (8, "determinism and round-trip", check_determinism),
    (9, "table rows build", check_rows_build),
]


def _line(num, title, ok, detail):
    return f"{'PASS' if ok else 'FAIL'} [{num}] {title}: {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("num,title,check", CRITERIA, ids=[f"c{n}_{t.replace(' ', '_')}" for n, t, _ in CRITERIA])
def test_criterion(num, title, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print("\n" + _line(num, title, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for num, title, check in CRITERIA:
        ok, detail = check()
        failed += not ok
        print(_line(num, title, ok, detail), flush=True)
    sys.exit(1 if failed else 0)

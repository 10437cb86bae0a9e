import json

import numpy as np
import pytest

import swinfree.numerics
from swinfree.attention import shifted_window_attention, window_attention_forward
from swinfree.verify import (
    ORACLE_TOL,
    connectivity_graph,
    global_attention_oracle,
    masked_group_oracle,
    property_names,
    random_attention_params,
    run_property_suite,
)
from swinfree.windowing import window_partition, window_reverse


def test_oracle_single_token_is_value_projection(rng):
    p = random_attention_params(rng, 4, 2, 1)
    x = rng.standard_normal((1, 4))
    v = (x @ p.qkv_weight + p.qkv_bias)[:, 8:]
    expected = v @ p.proj_weight + p.proj_bias
    np.testing.assert_allclose(global_attention_oracle(x, p), expected, atol=1e-12)


def test_oracle_uniform_keys_average_values(rng):
    # zero query/key weights and bias table -> uniform weights -> mean of values
    p = random_attention_params(rng, 4, 2, 2)
    p.qkv_weight[:, :8] = 0
    p.qkv_bias[:8] = 0
    p.bias_table[...] = 0
    x = rng.standard_normal((4, 4))
    v = (x @ p.qkv_weight + p.qkv_bias)[:, 8:]
    expected = np.tile(v.mean(0) @ p.proj_weight + p.proj_bias, (4, 1))
    np.testing.assert_allclose(global_attention_oracle(x, p), expected, atol=1e-12)


def test_oracle_rejects_non_square(rng):
    p = random_attention_params(rng, 4, 2, 2)
    with pytest.raises(ValueError):
        global_attention_oracle(np.zeros((3, 4)), p)


@pytest.mark.parametrize("seed", range(4))
def test_global_oracle_agrees(seed):
    rng = np.random.default_rng(seed)
    p = random_attention_params(rng, 6, 3, 3)
    g = rng.standard_normal((1, 3, 3, 6))
    fast = window_attention_forward(window_partition(g, 3), p).windows[0]
    assert np.abs(fast - global_attention_oracle(g[0].reshape(9, 6), p)).max() <= ORACLE_TOL


def test_masked_oracle_shift_zero_equals_plain(rng):
    p = random_attention_params(rng, 4, 2, 2)
    g = rng.standard_normal((1, 4, 4, 4))
    plain = window_attention_forward(window_partition(g, 2), p)
    np.testing.assert_allclose(masked_group_oracle(g, 2, 0, p), window_reverse(plain, 4, 4), atol=1e-12)


@pytest.mark.parametrize("M,H,shift", [(2, 4, 1), (4, 8, 2), (3, 6, 1)])
def test_masked_oracle_agrees(rng, M, H, shift):
    p = random_attention_params(rng, 4, 2, M)
    g = rng.standard_normal((2, H, H, 4))
    err = np.abs(shifted_window_attention(g, p, shift) - masked_group_oracle(g, M, shift, p)).max()
    assert err <= ORACLE_TOL


@pytest.mark.parametrize("blocks,side,want", [
    ([(7, False)], 14, 4),
    ([(7, False), (7, False)], 14, 4),
    ([(14, False)], 14, 1),
    ([(7, False), (14, False)], 14, 1),
    ([(7, False), (7, True)], 14, 1),
    ([(2, False)], 8, 16),
    ([(7, True)], 7, 1),  # shift suppressed when the window covers the grid
])
def test_connectivity(blocks, side, want):
    graph = connectivity_graph(blocks, side, side)
    assert graph.num_components == want
    assert np.array_equal(graph.adjacency, graph.adjacency.T)
    assert sum(len(c) for c in graph.components()) == side * side


def test_connectivity_shifted_single_block_components():
    # one shifted block alone: mask groups are rectangles, never merging
    graph = connectivity_graph([(4, True)], 8, 8)
    assert graph.num_components == 9


def test_connectivity_rejects_bad_window():
    with pytest.raises(ValueError):
        connectivity_graph([(3, False)], 8, 8)


def test_suite_quick_passes():
    report = run_property_suite("quick", 0)
    assert report.ok, report.text()
    assert [r.name for r in report.results] == property_names("quick")
    assert "stage_geometry_trace" not in property_names("quick")
    assert len(property_names("full")) == len(property_names("quick")) + 1


def test_suite_deterministic():
    a = run_property_suite("quick", 3)
    b = run_property_suite("quick", 3)
    assert [(r.name, r.status, r.max_error) for r in a.results] == [(r.name, r.status, r.max_error) for r in b.results]
    doc = json.loads(a.to_json())
    assert doc["ok"] and doc["seed"] == 3 and len(doc["results"]) == len(a.results)


def test_suite_reports_injected_softmax_bug(monkeypatch):
    orig = swinfree.numerics.softmax_lastdim
    monkeypatch.setattr(swinfree.numerics, "softmax_lastdim", lambda x: -orig(x))
    report = run_property_suite("quick", 0)
    assert not report.ok
    failed = {r.name for r in report.failures()}
    assert "softmax_normalization" in failed
    # the suite ran to completion despite the bug
    assert len(report.results) == len(property_names("quick"))
    assert "FAIL" in report.text() or "ERROR" in report.text()


def test_suite_rejects_unknown_scope():
    with pytest.raises(ValueError):
        run_property_suite("everything")


@pytest.mark.slow
def test_suite_full_passes():
    report = run_property_suite("full", 0)
    assert report.ok, report.text()

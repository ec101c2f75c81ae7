import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layervid.attention import (
    GuidanceConfig,
    Projections,
    attention_sharing_kernel,
    box_pixel_mask,
    cross_attention_weights,
    gaussian_weight_map,
    guided_cross_attention,
    isolated_temporal_attention,
    oriented_attention_sharing,
    partition_phi,
    temporal_attention_kernel,
)


def test_guidance_defaults():
    cfg = GuidanceConfig()
    assert (cfg.lam, cfg.gamma_key, cfg.mu1, cfg.mu2) == (2.5, 1.2, 1.5, 2.0)
    assert (cfg.t_eps_fraction, cfg.cross_attn_window, cfg.oas_window) == (0.5, 0.10, 0.50)


@pytest.mark.parametrize("bad", [{"lam": -0.1}, {"gamma_key": 0.9}, {"mu1": 0.5}, {"oas_window": 1.5}])
def test_guidance_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        GuidanceConfig(**bad)


# ----------------------------------------------------------------- phi


def test_phi_labels_by_definition():
    phi = partition_phi((0, 0, 1, 1), {0}, (2, 2), 2)
    assert phi[0, 0] == 2  # in box, FG token
    assert phi[0, 1] == 1  # in box, other token
    assert phi[1, 0] == 1  # outside, FG token
    assert phi[1, 1] == 0


def test_phi_counts_match_enumeration():
    cell_range, grid, n_tokens, fg = (0, 0, 1, 2), (2, 2), 3, {0}
    phi = partition_phi(cell_range, fg, grid, n_tokens)
    counts = {0: 0, 1: 0, 2: 0}
    for r, c in itertools.product(range(2), range(2)):
        in_box = 0 <= r < 1 and 0 <= c < 2
        for j in range(n_tokens):
            counts[int(in_box) + int(j in fg)] += 1
    assert counts == {2: 2, 1: 6, 0: 4}
    assert {n: int((phi == n).sum()) for n in (0, 1, 2)} == counts


# ------------------------------------------------------------- gaussian


def test_gaussian_peak_symmetry_and_edge():
    g = gaussian_weight_map((3, 4, 8, 9))  # 5 x 5 cells
    assert g[2, 2] == 1.0
    assert g.max() == 1.0
    np.testing.assert_array_equal(g, g[::-1, :])
    np.testing.assert_array_equal(g, g[:, ::-1])
    assert g[2, 0] == pytest.approx(math.exp(-2), abs=1e-15)
    assert g[2, 0] == pytest.approx(0.1353352832, abs=1e-10)
    assert g[0, 0] == pytest.approx(math.exp(-4), abs=1e-15)


def test_gaussian_single_cell_axis():
    np.testing.assert_array_equal(gaussian_weight_map((0, 0, 1, 1)), [[1.0]])
    g = gaussian_weight_map((0, 0, 1, 3))
    assert g.shape == (1, 3) and g[0, 1] == 1.0


# -------------------------------------------------------- cross-attention


def _hand_setup():
    q = np.zeros((2, 3))  # all logits 0
    k = np.ones((2, 3))
    v = np.array([[1.0, 2.0], [-3.0, 5.0]])
    return q, k, v


def test_guided_hand_case_plain_frame():
    q, k, v = _hand_setup()
    out, w = guided_cross_attention(q, k, v, (0, 0, 1, 1), (1, 2), {0}, lam=2.5, gamma_frame=1.0, return_weights=True)
    np.testing.assert_array_equal(w, [[3.5, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(out[0], 3.5 * v[0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(out[1], v[1], rtol=0, atol=1e-12)


def test_guided_hand_case_key_frame():
    q, k, v = _hand_setup()
    _, w = guided_cross_attention(q, k, v, (0, 0, 1, 1), (1, 2), {0}, lam=2.5, gamma_frame=1.2, return_weights=True)
    np.testing.assert_allclose(w[0], [4.0, 0.0], rtol=0, atol=1e-12)


def test_guided_lambda_zero_is_masked_softmax():
    rng = np.random.default_rng(0)
    q, k, v = rng.normal(size=(12, 5)), rng.normal(size=(4, 5)), rng.normal(size=(4, 3))
    cell_range, grid, fg = (1, 0, 3, 2), (3, 4), {1, 2}
    out = guided_cross_attention(q, k, v, cell_range, grid, fg, lam=0.0, gamma_frame=1.0)
    phi = partition_phi(cell_range, fg, grid, 4)
    logits = q @ k.T / math.sqrt(5)
    ref = np.zeros_like(logits)
    for i in range(12):
        keep = [j for j in range(4) if phi[i, j] != 1]
        e = np.exp(logits[i, keep] - logits[i, keep].max())
        ref[i, keep] = e / e.sum()
    np.testing.assert_allclose(out, ref @ v, rtol=1e-12, atol=1e-12)


def test_no_tokens_is_an_error():
    with pytest.raises(ValueError):
        guided_cross_attention(np.zeros((4, 2)), np.zeros((0, 2)), np.zeros((0, 2)), (0, 0, 1, 1), (2, 2), set(), 1.0)


@st.composite
def attention_cases(draw):
    h, w = draw(st.integers(1, 6)), draw(st.integers(1, 6))
    r0 = draw(st.integers(0, h - 1))
    c0 = draw(st.integers(0, w - 1))
    r1 = draw(st.integers(r0 + 1, h))
    c1 = draw(st.integers(c0 + 1, w))
    n_tok = draw(st.integers(2, 7))
    n_fg = draw(st.integers(1, n_tok - 1))
    fg = set(draw(st.permutations(range(n_tok)))[:n_fg])
    seed = draw(st.integers(0, 2**32 - 1))
    lam = draw(st.floats(0, 5))
    gamma = draw(st.floats(1, 2))
    return (h, w), (r0, c0, r1, c1), n_tok, fg, seed, lam, gamma


@settings(max_examples=60, deadline=None)
@given(attention_cases())
def test_guided_mass_and_masking(case):
    grid, cell_range, n_tok, fg, seed, lam, gamma = case
    rng = np.random.default_rng(seed)
    n = grid[0] * grid[1]
    q, k, v = rng.normal(size=(n, 4)), rng.normal(size=(n_tok, 4)), rng.normal(size=(n_tok, 2))
    _, w = guided_cross_attention(q, k, v, cell_range, grid, fg, lam, gamma, return_weights=True)
    phi = partition_phi(cell_range, fg, grid, n_tok)
    assert np.all(w[phi == 1] < 1e-12)
    g = np.zeros(grid)
    r0, c0, r1, c1 = cell_range
    g[r0:r1, c0:c1] = gaussian_weight_map(cell_range)
    m = np.where(phi == 2, g.reshape(-1)[:, None] * gamma, 0.0)
    np.testing.assert_allclose(w.sum(axis=1), 1 + lam * m.sum(axis=1), rtol=0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(attention_cases(), st.floats(0.1, 3))
def test_larger_lambda_only_raises_phi2_mass(case, extra):
    grid, cell_range, n_tok, fg, seed, lam, gamma = case
    rng = np.random.default_rng(seed)
    n = grid[0] * grid[1]
    q, k, v = rng.normal(size=(n, 4)), rng.normal(size=(n_tok, 4)), rng.normal(size=(n_tok, 2))
    _, w1 = guided_cross_attention(q, k, v, cell_range, grid, fg, lam, gamma, return_weights=True)
    _, w2 = guided_cross_attention(q, k, v, cell_range, grid, fg, lam + extra, gamma, return_weights=True)
    phi = partition_phi(cell_range, fg, grid, n_tok)
    assert np.all(w2[phi == 2] > w1[phi == 2])
    np.testing.assert_array_equal(w2[phi != 2], w1[phi != 2])


def test_out_of_box_rows_permutation_equivariant():
    rng = np.random.default_rng(4)
    grid, cell_range, fg = (4, 4), (0, 0, 2, 2), {1}
    q, k, v = rng.normal(size=(16, 3)), rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    inside = box_pixel_mask(cell_range, grid)
    outside = np.flatnonzero(~inside)
    perm = np.arange(16)
    perm[outside] = rng.permutation(outside)
    out = guided_cross_attention(q, k, v, cell_range, grid, fg, 2.5, 1.2)
    out_p = guided_cross_attention(q[perm], k, v, cell_range, grid, fg, 2.5, 1.2)
    np.testing.assert_array_equal(out_p, out[perm])


# ------------------------------------------------------ attention sharing


def test_sharing_hand_case_in_box():
    q = np.zeros((2, 3))
    k = np.zeros((2, 3))
    v = np.array([[1.0, 0.0], [0.0, 1.0]])  # V_FG, V_BG
    out = attention_sharing_kernel(q, k, v, np.array(True), 1.5, 2.0)
    # FG row weights [0.5*1.5, 0.5*2.0]
    np.testing.assert_allclose(out[0], [0.75, 1.0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(out[1], [1.0, 0.75], rtol=0, atol=1e-12)


def test_sharing_outside_box_ignores_mu():
    rng = np.random.default_rng(1)
    q, k, v = rng.normal(size=(5, 2, 4)), rng.normal(size=(5, 2, 4)), rng.normal(size=(5, 2, 3))
    plain = attention_sharing_kernel(q, k, v)
    np.testing.assert_array_equal(attention_sharing_kernel(q, k, v, np.zeros(5, bool), 1.7, 3.0), plain)
    np.testing.assert_array_equal(attention_sharing_kernel(q, k, v, np.ones(5, bool), 1.0, 1.0), plain)


def _proj(rng, ch=3, d=4):
    return Projections(rng.normal(size=(ch, d)), rng.normal(size=(ch, d)), rng.normal(size=(ch, ch)), rng.normal(size=(ch, ch)))


def test_oas_changes_only_in_box_pixels():
    rng = np.random.default_rng(2)
    fg, bg = rng.normal(size=(3, 5, 6, 3)), rng.normal(size=(3, 5, 6, 3))
    in_box = np.zeros((3, 5, 6), bool)
    in_box[:, 1:3, 2:5] = True
    proj = _proj(rng)
    f0, b0 = oriented_attention_sharing(fg, bg, None, 1.5, 2.0, proj)
    f1, b1 = oriented_attention_sharing(fg, bg, in_box, 1.5, 2.0, proj)
    np.testing.assert_array_equal(f1[~in_box], f0[~in_box])
    np.testing.assert_array_equal(b1[~in_box], b0[~in_box])
    assert not np.allclose(f1[in_box], f0[in_box])


def test_oas_unit_weights_equal_plain_sharing():
    rng = np.random.default_rng(3)
    fg, bg = rng.normal(size=(2, 4, 4, 3)), rng.normal(size=(2, 4, 4, 3))
    proj = _proj(rng)
    plain = oriented_attention_sharing(fg, bg, None, 1.5, 2.0, proj)
    unit = oriented_attention_sharing(fg, bg, np.ones((2, 4, 4), bool), 1.0, 1.0, proj)
    np.testing.assert_array_equal(plain[0], unit[0])
    np.testing.assert_array_equal(plain[1], unit[1])


# -------------------------------------------------------------- isolation


def test_temporal_single_frame_returns_value():
    rng = np.random.default_rng(5)
    q, k, v = rng.normal(size=(7, 1, 3)), rng.normal(size=(7, 1, 3)), rng.normal(size=(7, 1, 2))
    np.testing.assert_allclose(temporal_attention_kernel(q, k, v), v, rtol=0, atol=1e-15)


def test_temporal_two_frame_hand_case():
    q = np.eye(2)
    k = np.eye(2)
    v = np.array([[2.0, 0.0], [0.0, 4.0]])
    a = 1 / math.sqrt(2)
    p = math.exp(a) / (math.exp(a) + 1)
    expected = np.array([[2 * p, 4 * (1 - p)], [2 * (1 - p), 4 * p]])
    np.testing.assert_allclose(temporal_attention_kernel(q, k, v), expected, rtol=0, atol=1e-12)


def test_isolation_planes_independent():
    rng = np.random.default_rng(6)
    proj = _proj(rng)
    fg, bg = rng.normal(size=(4, 3, 3, 3)), rng.normal(size=(4, 3, 3, 3))
    f0, b0 = isolated_temporal_attention(fg, bg, proj)
    f1, _ = isolated_temporal_attention(fg, rng.normal(size=bg.shape) * 100, proj)
    _, b1 = isolated_temporal_attention(np.zeros_like(fg), bg, proj)
    np.testing.assert_array_equal(f0, f1)
    np.testing.assert_array_equal(b0, b1)


def test_masked_rows_are_rejected():
    with pytest.raises(ValueError):
        cross_attention_weights(np.zeros((2, 2)), np.zeros((2, 2)), np.ones((2, 2), bool))

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from siman import core
from siman.core import NormConfig, StyleStats

import oracles



@pytest.fixture(autouse=True)
def float64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def rand_map(rng, c, h, w, scale=1.0):
    return torch.from_numpy(rng.normal(size=(c, h, w)) * scale)


# ---------------------------------------------------------------- instance_norm

def test_instance_norm_constant_channel_is_zero():
    x = torch.full((2, 3, 4), 5.0)
    assert torch.equal(core.instance_norm(x), torch.zeros_like(x))


def test_instance_norm_symmetric_pair():
    x = torch.tensor([[[-1.0, 1.0]]])
    out = core.instance_norm(x)
    expected = 1 / math.sqrt(1 + 1e-5)
    assert torch.allclose(out, torch.tensor([[[-expected, expected]]]), atol=1e-12)
    assert torch.allclose(out, x, atol=1e-5)


def test_instance_norm_matches_two_pass_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 3))
    out = core.instance_norm(torch.from_numpy(x)).numpy()
    assert np.abs(out - oracles.instance_norm(x)).max() < 1e-6
    m, s = oracles.two_pass_mean_std(out)
    assert np.all(np.abs(m) < 1e-6)


def test_instance_norm_rejects_non_finite():
    x = torch.zeros(1, 2, 2)
    x[0, 0, 0] = float("nan")
    with pytest.raises(ValueError, match="non-finite"):
        core.instance_norm(x)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(2, 6), st.integers(0, 10_000))
def test_instance_norm_statistics(c, h, w, seed):
    x = rand_map(np.random.default_rng(seed), c, h, w, scale=3.0)
    out = core.instance_norm(x)
    mean = out.mean(dim=(-2, -1))
    std = out.std(dim=(-2, -1), unbiased=False)
    var_in = x.var(dim=(-2, -1), unbiased=False)
    ok = var_in > 0.05
    assert torch.all(mean.abs() < 1e-5)
    assert torch.all((std[ok] - 1).abs() < 1e-3)


# ---------------------------------------------------------------- local_stats

def test_local_stats_constant():
    x = torch.full((2, 4, 5), 7.0)
    s = core.local_stats(x)
    assert torch.equal(s.mu, x)
    assert torch.equal(s.sigma, torch.zeros_like(x))


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(1, 4), st.integers(1, 5), st.sampled_from(["replicate", "reflect", "zero"]))
def test_constant_maps_are_exact_for_any_value(value, h, w, mode):
    x = torch.full((2, h, w), value)
    assert torch.equal(core.instance_norm(x), torch.zeros_like(x))
    g = core.global_stats(x)
    assert torch.all(g.mu == value) and torch.all(g.sigma == 0)
    if mode != "zero":
        s = core.local_stats(x, NormConfig(neighborhood_pad=mode))
        assert torch.equal(s.mu, x) and torch.equal(s.sigma, torch.zeros_like(x))


def test_local_stats_center_window_hand_enumerated():
    x = torch.arange(1.0, 10.0).reshape(1, 3, 3)
    s = core.local_stats(x)
    assert s.mu[0, 1, 1].item() == pytest.approx(5.0, abs=1e-12)
    # sum of squared deviations of 1..9 about 5 is 60
    assert s.sigma[0, 1, 1].item() == pytest.approx(math.sqrt(60 / 9), abs=1e-12)


def test_local_stats_height_one_replicate_matches_padded_grid():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 1, 7))
    grid = np.zeros((3, 9))
    # explicit padded 3 x (W+2) grid: every row equals the edge-extended single row
    row = np.concatenate([[x[0, 0, 0]], x[0, 0], [x[0, 0, -1]]])
    grid[:] = row
    exp_mu = np.array([grid[:, j:j + 3].mean() for j in range(7)])
    exp_sd = np.array([grid[:, j:j + 3].std() for j in range(7)])
    s = core.local_stats(torch.from_numpy(x))
    assert np.abs(s.mu.numpy()[0, 0] - exp_mu).max() < 1e-12
    assert np.abs(s.sigma.numpy()[0, 0] - exp_sd).max() < 1e-12


@pytest.mark.parametrize("mode", ["replicate", "zero"])
def test_local_stats_matches_loop_oracle(mode):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4, 5))
    s = core.local_stats(torch.from_numpy(x), NormConfig(neighborhood_pad=mode))
    mu, sd = oracles.local_stats(x, mode)
    assert np.abs(s.mu.numpy() - mu).max() < 1e-12
    assert np.abs(s.sigma.numpy() - sd).max() < 1e-12


def test_local_stats_reflect_handles_degenerate_axes():
    x = torch.randn(2, 1, 1)
    s = core.local_stats(x, NormConfig(neighborhood_pad="reflect"))
    assert torch.allclose(s.mu, x)
    assert torch.all(s.sigma == 0)
    y = torch.randn(2, 3, 4)
    s = core.local_stats(y, NormConfig(neighborhood_pad="reflect"))
    # reflect at (0, 0) mirrors row/col 1
    win = y[:, [1, 0, 1]][:, :, [1, 0, 1]]
    assert torch.allclose(s.mu[:, 0, 0], win.mean(dim=(-2, -1)))


def test_norm_config_validation():
    with pytest.raises(ValueError):
        NormConfig(epsilon=0)
    with pytest.raises(ValueError):
        NormConfig(neighborhood_pad="wrap")


# ---------------------------------------------------------------- rearrange

def test_single_style_position_broadcasts():
    K = torch.randn(3, 1, 1)
    Q = torch.randn(3, 2, 4)
    V = StyleStats(torch.randn(3, 1, 1), torch.rand(3, 1, 1))
    out, A = core.similarity_rearrange(K, Q, V)
    assert torch.equal(A, torch.ones(1, 8))
    assert torch.allclose(out.mu, V.mu.expand(3, 2, 4))
    assert torch.allclose(out.sigma, V.sigma.expand(3, 2, 4))


def test_constant_values_survive_any_attention():
    K, Q = torch.randn(4, 3, 3), torch.randn(4, 2, 5)
    V = StyleStats(torch.full((4, 3, 3), 1.5), torch.full((4, 3, 3), 0.25))
    out, _ = core.similarity_rearrange(K, Q, V)
    assert torch.allclose(out.mu, torch.full((4, 2, 5), 1.5), atol=1e-12)
    assert torch.allclose(out.sigma, torch.full((4, 2, 5), 0.25), atol=1e-12)


def test_rearrange_hand_computed():
    # C=2, two style and two query positions laid out as 1 x 2 maps
    K = torch.tensor([[[1.0, 0.0]], [[0.0, 1.0]]])
    Q = torch.tensor([[[2.0, 0.0]], [[0.0, 1.0]]])
    mu = torch.tensor([[[10.0, 20.0]], [[1.0, 3.0]]])
    sd = torch.tensor([[[1.0, 2.0]], [[4.0, 8.0]]])
    out, A = core.similarity_rearrange(K, Q, StyleStats(mu, sd))
    r = math.sqrt(2)
    # K^T Q = [[2, 0], [0, 1]]
    a00 = math.exp(2 / r) / (math.exp(2 / r) + 1)
    a01 = 1 / (1 + math.exp(1 / r))
    expected_A = torch.tensor([[a00, a01], [1 - a00, 1 - a01]])
    assert torch.allclose(A, expected_A, atol=1e-12)
    assert out.mu[0, 0, 0].item() == pytest.approx(10 * a00 + 20 * (1 - a00), abs=1e-10)
    assert out.sigma[1, 0, 1].item() == pytest.approx(4 * a01 + 8 * (1 - a01), abs=1e-10)


def test_rearrange_channel_mismatch():
    with pytest.raises(ValueError, match="channel"):
        core.similarity_rearrange(torch.randn(2, 2, 2), torch.randn(3, 2, 2),
                                  StyleStats(torch.randn(2, 2, 2), torch.rand(2, 2, 2)))


def test_softmax_axis_is_over_style_positions():
    K, Q = torch.randn(3, 2, 3), torch.randn(3, 4, 1)
    A = core.attention_weights(K, Q)
    assert A.shape == (6, 4)
    assert torch.allclose(A.sum(dim=0), torch.ones(4), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(1, 4),
       st.integers(0, 10_000))
def test_attention_properties(c, hs, ws, hq, wq, seed):
    rng = np.random.default_rng(seed)
    K, Q = rand_map(rng, c, hs, ws, 2.0), rand_map(rng, c, hq, wq, 2.0)
    V = StyleStats(rand_map(rng, c, hs, ws), rand_map(rng, c, hs, ws).abs())
    out, A = core.similarity_rearrange(K, Q, V)
    assert torch.all(A >= 0) and torch.all(A <= 1)
    assert torch.allclose(A.sum(dim=0), torch.ones(hq * wq), atol=1e-6)
    # convex combination bounds per channel
    for ch in range(c):
        for name in ("mu", "sigma"):
            src = getattr(V, name)[ch]
            got = getattr(out, name)[ch]
            assert got.min() >= src.min() - 1e-9 and got.max() <= src.max() + 1e-9
    # permuting style positions jointly leaves results unchanged
    perm = torch.from_numpy(rng.permutation(hs * ws))
    Kp = K.flatten(-2)[:, perm].reshape(c, 1, hs * ws)
    Vp = StyleStats(V.mu.flatten(-2)[:, perm].reshape(c, 1, -1), V.sigma.flatten(-2)[:, perm].reshape(c, 1, -1))
    out_p, _ = core.similarity_rearrange(Kp, Q, Vp)
    assert torch.allclose(out_p.mu, out.mu, atol=1e-6)
    assert torch.allclose(out_p.sigma, out.sigma, atol=1e-6)


# ---------------------------------------------------------------- denormalize

def test_denormalize_neutral_and_zero():
    Qn = torch.randn(2, 3, 3)
    mu = torch.randn(2, 3, 3)
    assert torch.equal(core.denormalize(Qn, StyleStats(torch.zeros_like(Qn), torch.ones_like(Qn))), Qn)
    assert torch.equal(core.denormalize(torch.zeros_like(Qn), StyleStats(mu, torch.rand(2, 3, 3))), mu)


def test_denormalize_elementwise_oracle():
    rng = np.random.default_rng(3)
    Qn, mu, sd = (rng.normal(size=(3, 2, 4)) for _ in range(3))
    got = core.denormalize(*(torch.from_numpy(a) for a in (Qn,)), StyleStats(torch.from_numpy(mu), torch.from_numpy(sd)))
    assert np.abs(got.numpy() - oracles.denormalize(Qn, mu, sd)).max() < 1e-7


def test_denormalize_shape_mismatch():
    with pytest.raises(ValueError):
        core.denormalize(torch.zeros(1, 2, 2), StyleStats(torch.zeros(1, 2, 3), torch.zeros(1, 2, 3)))


# ---------------------------------------------------------------- siman / adain

def test_self_transfer_of_constant():
    x = torch.full((3, 2, 4), 0.7)
    out, _ = core.siman_transfer(x, x)
    assert torch.allclose(out, x, atol=1e-12)


def test_siman_degenerates_to_adain_for_constant_style():
    rng = np.random.default_rng(4)
    content = rand_map(rng, 3, 2, 5)
    style = torch.from_numpy(rng.normal(size=(3, 1, 1))).expand(3, 4, 3).clone()
    out, _ = core.siman_transfer(content, style)
    assert torch.allclose(out, core.adain(content, style), atol=1e-6)


def test_siman_composition_oracle():
    rng = np.random.default_rng(5)
    content, style = rng.normal(size=(4, 2, 5)), rng.normal(size=(4, 2, 5))
    out, A = core.siman_transfer(torch.from_numpy(content), torch.from_numpy(style))
    ref, refA = oracles.siman_transfer(content, style)
    assert np.abs(out.numpy() - ref).max() < 1e-6
    assert np.abs(A.numpy() - refA).max() < 1e-6


def test_siman_batched_matches_per_sample():
    c, s = torch.randn(3, 4, 2, 5), torch.randn(3, 4, 3, 3)
    out, A = core.siman_transfer(c, s)
    for i in range(3):
        o, a = core.siman_transfer(c[i], s[i])
        assert torch.allclose(out[i], o, atol=1e-12)
        assert torch.allclose(A[i], a, atol=1e-12)


def test_adain_cases():
    rng = np.random.default_rng(6)
    x = rand_map(rng, 3, 4, 4)
    assert torch.allclose(core.adain(x, x), x, atol=1e-4)
    const = torch.full((3, 4, 4), 2.0)
    style = rand_map(rng, 3, 2, 6)
    assert torch.allclose(core.adain(const, style), style.mean(dim=(-2, -1), keepdim=True).expand(3, 4, 4))
    c_np, s_np = rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 5, 2))
    got = core.adain(torch.from_numpy(c_np), torch.from_numpy(s_np)).numpy()
    assert np.abs(got - oracles.adain(c_np, s_np)).max() < 1e-6
    with pytest.raises(ValueError):
        core.adain(torch.randn(2, 2, 2), torch.randn(3, 2, 2))


# ---------------------------------------------------------------- interpolation

def _interp_inputs(seed, shape=(2, 2, 3)):
    rng = np.random.default_rng(seed)
    Q, K = rand_map(rng, *shape), rand_map(rng, *shape)
    src = StyleStats(rand_map(rng, *shape), rand_map(rng, *shape).abs())
    tgt = StyleStats(rand_map(rng, *shape), rand_map(rng, *shape).abs())
    return Q, K, src, tgt


def test_color_interpolate_endpoints_bit_exact():
    Q, K, src, tgt = _interp_inputs(7)
    assert torch.equal(core.color_interpolate(Q, K, src, tgt, 0.0), core.denormalize(Q, src))
    rearranged, _ = core.similarity_rearrange(K, Q, tgt)
    assert torch.equal(core.color_interpolate(Q, K, src, tgt, 1.0), core.denormalize(Q, rearranged))


def test_color_interpolate_midpoint_with_equal_sigma():
    Q, K, src, tgt = _interp_inputs(8)
    sigma = torch.full_like(src.sigma, 0.8)
    src, tgt = StyleStats(src.mu, sigma), StyleStats(tgt.mu, sigma)
    a = core.color_interpolate(Q, K, src, tgt, 0.0)
    b = core.color_interpolate(Q, K, src, tgt, 1.0)
    mid = core.color_interpolate(Q, K, src, tgt, 0.5)
    assert torch.allclose(mid, (a + b) / 2, atol=1e-12)


def test_glyph_interpolate_endpoints_and_affinity():
    Q, K, src, _ = _interp_inputs(9)
    q_styled = core.denormalize(Q, src)
    rearranged, _ = core.similarity_rearrange(Q, K, src)
    k_styled = core.denormalize(K, rearranged)
    assert torch.equal(core.glyph_interpolate(Q, K, src, 0.0), q_styled)
    assert torch.equal(core.glyph_interpolate(Q, K, src, 1.0), k_styled)
    frames = {a: core.glyph_interpolate(Q, K, src, a) for a in (0.0, 0.25, 0.5, 1.0)}
    for a in (0.25, 0.5):
        assert torch.allclose(frames[a], frames[0.0] + a * (frames[1.0] - frames[0.0]), atol=1e-12)


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_interpolation_alpha_range(alpha):
    Q, K, src, tgt = _interp_inputs(10)
    with pytest.raises(ValueError, match="alpha"):
        core.color_interpolate(Q, K, src, tgt, alpha)
    with pytest.raises(ValueError, match="alpha"):
        core.glyph_interpolate(Q, K, src, alpha)


def test_interpolations_match_oracles():
    Q, K, src, tgt = _interp_inputs(11, (3, 2, 2))
    n = lambda t: t.numpy()
    got = core.color_interpolate(Q, K, src, tgt, 0.3).numpy()
    ref = oracles.color_interpolate(n(Q), n(K), n(src.mu), n(src.sigma), n(tgt.mu), n(tgt.sigma), 0.3)
    assert np.abs(got - ref).max() < 1e-6
    got = core.glyph_interpolate(Q, K, src, 0.6).numpy()
    ref = oracles.glyph_interpolate(n(Q), n(K), n(src.mu), n(src.sigma), 0.6)
    assert np.abs(got - ref).max() < 1e-6


def test_siman_gradients_finite_on_constant_windows():
    style = torch.zeros(2, 3, 3, requires_grad=True)
    content = torch.randn(2, 3, 3, requires_grad=True)
    out, _ = core.siman_transfer(content, style)
    out.sum().backward()
    assert torch.isfinite(style.grad).all() and torch.isfinite(content.grad).all()

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inceptionnext.complexity import count_model
from inceptionnext.conv import ConvSpec, conv2d_reference, dwconv2d
from inceptionnext.errors import ConfigError, ShapeError
from inceptionnext.gradcheck import run_gradcheck
from inceptionnext.mixer import (
    ABLATIONS,
    BranchConfig,
    MixerParams,
    init_mixer_params,
    inception_dwconv,
    inception_dwconv_backward,
    inception_dwconv_sequential,
    split_indexes,
)
from inceptionnext.model import PRESETS
from inceptionnext.tensor import seeded_random

from oracles import embed_mixer_kernels


def embedded_oracle(x, params, cfg):
    c = x.shape[1]
    kern, bias = embed_mixer_kernels(params, cfg, c)
    k = kern.shape[-1]
    return conv2d_reference(x, kern.astype(x.dtype), bias.astype(x.dtype), ConvSpec.depthwise(c, k, k))


@pytest.mark.parametrize("c,ratio,expected", [(96, 1 / 8, (12, 12, 12, 60)),
                                              (64, 1 / 8, (8, 8, 8, 40)),
                                              (7, 1 / 8, (0, 0, 0, 7))])
def test_split_indexes(c, ratio, expected):
    assert split_indexes(c, BranchConfig(branch_ratio=ratio)) == expected


def test_config_validation():
    with pytest.raises(ConfigError):
        BranchConfig(band_kernel=10)
    with pytest.raises(ConfigError):
        BranchConfig(square_kernel=4)
    with pytest.raises(ConfigError):
        BranchConfig(branch_ratio=0.5)
    with pytest.raises(ConfigError):
        BranchConfig(band_mode="diagonal")


def test_delta_kernels_identity():
    cfg = BranchConfig()
    x = seeded_random((2, 32, 9, 9), 0, "normal")
    params = init_mixer_params(32, cfg)  # delta kernels, zero bias
    assert np.array_equal(inception_dwconv(x, params, cfg), x)


def test_random_defaults_match_embedded_oracle():
    cfg = BranchConfig()
    x = seeded_random((2, 32, 14, 14), 1, "normal")
    params = init_mixer_params(32, cfg, seed=2)
    assert split_indexes(32, cfg)[0] == 4
    out = inception_dwconv(x, params, cfg)
    assert np.max(np.abs(out - embedded_oracle(x, params, cfg))) <= 1e-5


def test_identity_branch_perturbation():
    cfg = BranchConfig()
    x = seeded_random((1, 32, 10, 10), 3, "normal")
    params = init_mixer_params(32, cfg, seed=4)
    base = inception_dwconv(x, params, cfg)
    x2 = x.copy()
    x2[0, 20, 4, 7] += 1.0
    diff = inception_dwconv(x2, params, cfg) != base
    assert diff.sum() == 1 and diff[0, 20, 4, 7]
    assert np.array_equal(base[:, 12:], x[:, 12:])


def test_degenerate_g_zero():
    cfg = BranchConfig()
    x = seeded_random((1, 7, 5, 5), 0, "normal")
    params = init_mixer_params(7, cfg, seed=1)
    assert np.array_equal(inception_dwconv(x, params, cfg), x)


def test_shape_mismatch():
    cfg = BranchConfig()
    params = init_mixer_params(16, cfg, seed=0)
    with pytest.raises(ShapeError):
        inception_dwconv(seeded_random((1, 32, 5, 5), 0), params, cfg)
    with pytest.raises(ShapeError):
        inception_dwconv(seeded_random((1, 16, 5, 5), 0), MixerParams(), cfg)


@st.composite
def branch_configs(draw):
    return BranchConfig(
        square_kernel=draw(st.sampled_from([1, 3, 5])),
        band_kernel=draw(st.sampled_from([3, 5, 7, 11])),
        branch_ratio=draw(st.sampled_from([1 / 16, 1 / 8, 1 / 4, 1 / 3])),
        square=draw(st.booleans()), horizontal=draw(st.booleans()), vertical=draw(st.booleans()),
    )


@given(cfg=branch_configs(), c=st.integers(1, 32), h=st.integers(1, 16), w=st.integers(1, 16),
       seed=st.integers(0, 2**31))
def test_shape_preservation_and_oracle(cfg, c, h, w, seed):
    x = seeded_random((1, c, h, w), seed, "normal", np.float64)
    params = init_mixer_params(c, cfg, seed=seed + 1, dtype=np.float64)
    out = inception_dwconv(x, params, cfg)
    assert out.shape == x.shape
    assert np.max(np.abs(out - embedded_oracle(x, params, cfg))) <= 1e-10


@given(branch=st.sampled_from(["square", "horizontal", "vertical"]), seed=st.integers(0, 1000))
def test_branch_locality(branch, seed):
    cfg = BranchConfig(band_kernel=5)
    c = 24
    g = 3
    x = seeded_random((1, c, 8, 8), seed, "normal")
    params = init_mixer_params(c, cfg, seed=seed + 1)
    base = inception_dwconv(x, params, cfg)
    slot, lo = {"square": ("hw", 0), "horizontal": ("w", g), "vertical": ("h", 2 * g)}[branch]
    getattr(params, f"w_{slot}")[:] = 0
    out = inception_dwconv(x, params, cfg)
    bias = getattr(params, f"b_{slot}")
    assert np.array_equal(out[:, lo:lo + g], np.broadcast_to(bias[None, :, None, None], (1, g, 8, 8)))
    mask = np.ones(c, bool)
    mask[lo:lo + g] = False
    assert np.array_equal(out[:, mask], base[:, mask])


class TestSequential:
    cfg = BranchConfig(band_kernel=7, band_mode="sequential")

    def test_delta_bands_identity(self):
        x = seeded_random((1, 24, 9, 9), 0, "normal")
        params = init_mixer_params(24, self.cfg)
        assert np.array_equal(inception_dwconv_sequential(x, params, self.cfg), x)

    def test_two_call_oracle(self):
        x = seeded_random((2, 24, 9, 9), 1, "normal")
        params = init_mixer_params(24, self.cfg, seed=2)
        out = inception_dwconv(x, params, self.cfg)
        g = 3
        band = dwconv2d(dwconv2d(x[:, g:2 * g], params.w_w, params.b_w), params.w_h, params.b_h)
        assert np.array_equal(out[:, g:2 * g], band)
        assert np.array_equal(out[:, 2 * g:], x[:, 2 * g:])
        assert np.array_equal(out[:, :g], dwconv2d(x[:, :g], params.w_hw, params.b_hw))

    def test_separable_outer_product(self):
        x = seeded_random((1, 24, 10, 11), 3, "normal", np.float64)
        params = init_mixer_params(24, self.cfg, seed=4, dtype=np.float64)
        params.b_w[:] = 0
        params.b_h[:] = 0
        g = 3
        out = inception_dwconv(x, params, self.cfg)
        u = params.w_w[:, 0, :]  # (g, k) horizontal
        v = params.w_h[:, :, 0]  # (g, k) vertical
        outer = np.einsum("gi,gj->gij", v, u)
        ref = conv2d_reference(x[:, g:2 * g], outer[:, None], None, ConvSpec.depthwise(g, 7, 7))
        assert np.max(np.abs(out[:, g:2 * g] - ref)) < 1e-12

    def test_param_count_equal_to_parallel(self):
        par = init_mixer_params(96, BranchConfig())
        seq = init_mixer_params(96, BranchConfig(band_mode="sequential"))
        assert sum(a.size for _, a in par.arrays()) == sum(a.size for _, a in seq.arrays())
        assert seq.w_w.size + seq.w_h.size == 2 * 11 * 12

    def test_wrong_mode(self):
        with pytest.raises(ConfigError):
            inception_dwconv_sequential(seeded_random((1, 8, 4, 4), 0),
                                        init_mixer_params(8, BranchConfig()), BranchConfig())


class TestBackward:
    @pytest.mark.parametrize("mode", ["parallel", "sequential"])
    def test_zero_grad(self, mode):
        cfg = BranchConfig(band_kernel=5, band_mode=mode)
        x = seeded_random((1, 16, 6, 6), 0, "normal")
        params = init_mixer_params(16, cfg, seed=1)
        gx, grads = inception_dwconv_backward(x, params, cfg, np.zeros_like(x))
        assert not np.any(gx)
        assert all(not np.any(g) for _, g in grads.arrays())

    def test_identity_passthrough(self):
        cfg = BranchConfig(band_kernel=5)
        x = seeded_random((1, 16, 6, 6), 0, "normal")
        params = init_mixer_params(16, cfg, seed=1)
        g = seeded_random(x.shape, 2, "normal")
        gx, _ = inception_dwconv_backward(x, params, cfg, g)
        assert np.array_equal(gx[:, 6:], g[:, 6:])

    @pytest.mark.parametrize("target", ["inception_dwconv", "inception_dwconv_sequential"])
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, target, seed):
        assert run_gradcheck(target, seed).max_error < 1e-6


def test_ablations_reachable_with_param_consequences():
    assert len(ABLATIONS) == 10  # baseline + nine variants
    base_cfg = PRESETS["inceptionnext_t"]
    from dataclasses import replace

    base = count_model(base_cfg).total_params
    params = {n: count_model(replace(base_cfg, mixer=m)).total_params for n, m in ABLATIONS.items()}
    sum_g = sum(d * c // 8 for d, c in zip(base_cfg.depths, base_cfg.dims))
    # a removed band branch drops k_b weights + 1 bias per branch channel
    assert base - params["remove_horizontal_band"] == 12 * sum_g
    assert base - params["remove_vertical_band"] == 12 * sum_g
    assert base - params["remove_square"] == 10 * sum_g
    assert params["sequential_bands"] == base
    assert params["band_kernel_13"] - base == 4 * sum_g
    assert base - params["band_kernel_7"] == 8 * sum_g

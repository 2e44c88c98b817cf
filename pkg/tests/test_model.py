import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inceptionnext.conv import dwconv2d, pointwise
from inceptionnext.errors import ConfigError, ShapeError
from inceptionnext.gradcheck import run_gradcheck
from inceptionnext.mixer import BranchConfig, init_mixer_params
from inceptionnext.model import (
    PRESETS,
    BlockParams,
    DepthwiseMixerConfig,
    DepthwiseParams,
    ModelConfig,
    NormParams,
    Stage,
    batchnorm2d,
    build_model,
    convnext_block,
    gelu,
    get_preset,
    metanext_block,
    model_forward,
)
from inceptionnext.tensor import checksum, seeded_random

from oracles import erf_gelu


def random_block(c, ratio, mixer_params, seed, dtype=np.float32, layerscale=True):
    r = lambda shape, s, scale=1.0: (seeded_random(shape, seed + s, "normal", dtype) * scale).astype(dtype)  # noqa: E731
    hidden = ratio * c
    norm = NormParams(1 + 0.1 * r((c,), 1), 0.1 * r((c,), 2), 0.1 * r((c,), 3),
                      (1 + 0.5 * seeded_random((c,), seed + 4, dtype=dtype)).astype(dtype))
    return BlockParams(mixer_params, norm, r((hidden, c), 5, c ** -0.5), r((hidden,), 6, 0.1),
                       r((c, hidden), 7, hidden ** -0.5), r((c,), 8, 0.1),
                       r((c,), 9) if layerscale else None)


class TestNormAndGelu:
    def test_identity_norm(self):
        x = seeded_random((2, 3, 4, 4), 0, "normal")
        out = batchnorm2d(x, NormParams.identity(3, eps=0.0))
        assert np.array_equal(out, x)

    def test_eval_stats(self):
        x = np.full((1, 2, 2, 2), 3.0)
        norm = NormParams(np.array([2.0, 1.0]), np.array([0.5, 0.0]), np.array([1.0, 3.0]),
                          np.array([4.0, 1.0]), eps=0.0)
        out = batchnorm2d(x, norm)
        assert np.allclose(out[0, 0], 2 * (3 - 1) / 2 + 0.5) and np.allclose(out[0, 1], 0)

    def test_train_mode_uses_batch_stats(self):
        x = seeded_random((4, 3, 5, 5), 1, "normal", np.float64) * 3 + 2
        out = batchnorm2d(x, NormParams.identity(3, eps=0.0, dtype=np.float64), mode="train")
        assert np.allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
        assert np.allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-10)

    def test_bad_shapes_and_mode(self):
        with pytest.raises(ShapeError):
            batchnorm2d(np.zeros((1, 3, 2, 2)), NormParams.identity(4))
        with pytest.raises(ValueError):
            batchnorm2d(np.zeros((1, 3, 2, 2)), NormParams.identity(3), mode="frozen")

    def test_gelu_values(self):
        assert gelu(np.float64(0.0)) == 0.0
        assert abs(gelu(np.float64(1.0)) - 0.841345) < 1e-6
        assert abs(gelu(np.float64(-10.0))) < 1e-20

    @given(st.floats(-8, 8))
    def test_gelu_matches_math_erf(self, v):
        assert abs(float(gelu(np.float64(v))) - erf_gelu(v)) < 1e-12


class TestBlock:
    cfg = BranchConfig(band_kernel=5)

    def test_layerscale_zero_is_identity(self):
        x = seeded_random((2, 16, 7, 7), 0, "normal")
        block = random_block(16, 4, init_mixer_params(16, self.cfg, seed=1), 2)
        block.layerscale[:] = 0
        assert np.array_equal(metanext_block(x, block, self.cfg), x)

    def test_zero_weights_is_identity(self):
        x = seeded_random((1, 16, 6, 6), 0, "normal")
        mixer = init_mixer_params(16, self.cfg)
        for _, a in mixer.arrays():
            a[:] = 0
        block = random_block(16, 4, mixer, 3)
        block.fc2_weight[:] = 0
        block.fc2_bias[:] = 0
        assert np.array_equal(metanext_block(x, block, self.cfg), x)

    def test_composition_oracle_bit_equal(self):
        x = seeded_random((2, 16, 6, 6), 0, "normal")
        block = random_block(16, 4, init_mixer_params(16, self.cfg, seed=1), 4)
        from inceptionnext.mixer import inception_dwconv

        y = inception_dwconv(x, block.mixer, self.cfg)
        y = batchnorm2d(y, block.norm)
        y = pointwise(gelu(pointwise(y, block.fc1_weight, block.fc1_bias)), block.fc2_weight, block.fc2_bias)
        expected = y * block.layerscale[None, :, None, None] + x
        assert np.array_equal(metanext_block(x, block, self.cfg), expected)

    def test_convnext_block_is_metanext_with_square_mixer(self):
        x = seeded_random((1, 8, 9, 9), 5, "normal")
        dw = DepthwiseParams(seeded_random((8, 7, 7), 6, "normal") * 0.1, seeded_random((8,), 7))
        block = random_block(8, 4, dw, 8)
        a = convnext_block(x, block, 7)
        b = metanext_block(x, block, DepthwiseMixerConfig(7))
        assert np.array_equal(a, b)
        y = batchnorm2d(dwconv2d(x, dw.weight, dw.bias), block.norm)
        y = pointwise(gelu(pointwise(y, block.fc1_weight, block.fc1_bias)), block.fc2_weight, block.fc2_bias)
        assert np.array_equal(a, y * block.layerscale[None, :, None, None] + x)

    def test_convnext_mixer_param_count(self):
        from inceptionnext.model import block_param_shapes

        shapes = block_param_shapes(96, 4, DepthwiseMixerConfig(7))
        assert np.prod(shapes["mixer.weight"]) == 4704 and shapes["mixer.bias"] == (96,)

    def test_shape_preserved(self):
        x = seeded_random((3, 16, 5, 8), 0, "normal")
        block = random_block(16, 3, init_mixer_params(16, self.cfg, seed=1), 2)
        assert metanext_block(x, block, self.cfg).shape == x.shape

    @pytest.mark.parametrize("target", ["metanext_block", "convnext_block"])
    @pytest.mark.parametrize("seed", range(2))
    def test_block_gradcheck(self, target, seed):
        assert run_gradcheck(target, seed).max_error < 1e-5


class TestPresets:
    @pytest.mark.parametrize("name,depths,dims,ratios", [
        ("inceptionnext_t", (3, 3, 9, 3), (96, 192, 384, 768), (4, 4, 4, 3)),
        ("inceptionnext_s", (3, 3, 27, 3), (96, 192, 384, 768), (4, 4, 4, 3)),
        ("inceptionnext_b", (3, 3, 27, 3), (128, 256, 512, 1024), (4, 4, 4, 3)),
    ])
    def test_four_stage_presets(self, name, depths, dims, ratios):
        cfg = get_preset(name)
        assert (cfg.depths, cfg.dims, cfg.mlp_ratios) == (depths, dims, ratios)
        assert cfg.stem_kernel == 4 and cfg.downsample_kernel == 2 and cfg.total_stride == 32
        assert cfg.mixer == BranchConfig(3, 11, 1 / 8)

    def test_isotropic(self):
        cfg = get_preset("inceptionnext_s_iso")
        assert cfg.isotropic and cfg.dims == (384,) and cfg.depths == (18,) and cfg.total_stride == 16

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            get_preset("inceptionnext_xl")

    def test_mismatched_lengths(self):
        with pytest.raises(ConfigError):
            ModelConfig("bad", (3, 3, 9, 3), (96, 192, 384), (4, 4, 4, 3))

    def test_json_roundtrip(self):
        for cfg in PRESETS.values():
            back = ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
            assert back == cfg

    def test_unknown_config_field(self):
        d = PRESETS["inceptionnext_t"].to_dict()
        d["dropout"] = 0.1
        with pytest.raises(ConfigError):
            ModelConfig.from_dict(d)


def small_config(**kw):
    base = dict(name="tiny", depths=(1, 1, 1, 1), dims=(8, 16, 16, 24), mlp_ratios=(2, 2, 2, 2),
                mixer=BranchConfig(band_kernel=5), num_classes=10, layerscale_init=0.5)
    base.update(kw)
    return ModelConfig(**base)


class TestForward:
    def test_shape_contract_t(self):
        model = build_model("inceptionnext_t", seed=0)
        x = seeded_random((1, 3, 224, 224), 1, "normal")
        logits, stages = model_forward(model, x, return_stages=True)
        assert logits.shape == (1, 1000)
        assert [s.shape[1:] for s in stages] == [(96, 56, 56), (192, 28, 28), (384, 14, 14), (768, 7, 7)]

    def test_indivisible_input(self):
        model = build_model(small_config())
        with pytest.raises(ShapeError, match="stride 32"):
            model_forward(model, np.zeros((1, 3, 48, 48), np.float32))
        with pytest.raises(ShapeError):
            model_forward(model, np.zeros((1, 4, 32, 32), np.float32))

    def test_batch_independence(self):
        model = build_model(small_config(), seed=3)
        x = seeded_random((4, 3, 32, 32), 4, "normal")
        full = model_forward(model, x)
        for i in range(4):
            assert np.max(np.abs(model_forward(model, x[i:i + 1])[0] - full[i])) <= 1e-5

    def test_thread_count_checksums(self):
        model = build_model(small_config(), seed=3)
        x = seeded_random((5, 3, 32, 32), 5, "normal")
        sums = {checksum(model_forward(model, x, threads=t)) for t in (1, 2, 8)}
        assert len(sums) == 1

    @pytest.mark.parametrize("head", ["mlp", "linear"])
    def test_zero_layerscale_equals_blockless_model(self, head):
        cfg = small_config(head=head, depths=(2, 1, 1, 2))
        model = build_model(cfg, seed=6)
        for stage in model.stages:
            for block in stage.blocks:
                block.layerscale[:] = 0
        stripped = dataclasses.replace(
            model, stages=[Stage([], s.downsample_norm, s.downsample_conv) for s in model.stages])
        x = seeded_random((2, 3, 32, 32), 7, "normal")
        assert np.array_equal(model_forward(model, x), model_forward(stripped, x))

    def test_seeded_build_is_deterministic(self):
        a = build_model(small_config(), seed=1).state_dict()
        b = build_model(small_config(), seed=1).state_dict()
        c = build_model(small_config(), seed=2).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert any(not np.array_equal(a[k], c[k]) for k in a if "layerscale" not in k)

    def test_convnext_comparator_forward(self):
        cfg = small_config(mixer=DepthwiseMixerConfig(3), head="linear")
        out = model_forward(build_model(cfg, seed=0), seeded_random((1, 3, 32, 32), 0))
        assert out.shape == (1, 10) and np.all(np.isfinite(out))

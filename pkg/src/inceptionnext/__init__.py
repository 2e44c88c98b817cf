"""Inception depthwise convolution, MetaNeXt blocks and InceptionNeXt models
on CPU with numpy, plus complexity accounting and microbenchmarks."""

from .complexity import ComplexityReport, analytic_conv_cost, count_layer, count_model, flops_curve
from .conv import (
    ConvSpec,
    conv2d_reference,
    dwconv2d,
    dwconv2d_backward,
    partial_dwconv,
    pointwise,
    pointwise_backward,
)
from .errors import ConfigError, ShapeError, WeightFileError
from .mixer import (
    BranchConfig,
    MixerParams,
    inception_dwconv,
    inception_dwconv_backward,
    inception_dwconv_sequential,
    split_indexes,
)
from .model import (
    BlockParams,
    DepthwiseMixerConfig,
    ModelConfig,
    NormParams,
    PRESETS,
    batchnorm2d,
    build_model,
    convnext_block,
    gelu,
    metanext_block,
    metanext_block_backward,
    model_forward,
)
from .tensor import concat_channels, global_avg_pool, seeded_random, split_channels
from .weights import load_weights, save_weights

__version__ = "0.1.0"

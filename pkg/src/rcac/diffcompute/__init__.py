"""Small dense-tensor numerics: layers, tape-based gradients, Adam."""

from rcac.diffcompute.checkpoint import load_arrays, save_arrays
from rcac.diffcompute.layers import conv_out_size, deconv_out_size
from rcac.diffcompute.net import (
    LayerSpec,
    Net,
    ParameterSet,
    TapeRecord,
    backward,
    conv2d,
    deconv2d,
    dense,
    flatten,
    forward,
    layernorm,
    permute,
    relu,
    reshape,
    tanh,
)
from rcac.diffcompute.optim import Adam, adam_update, soft_update

__all__ = [
    "Adam", "LayerSpec", "Net", "ParameterSet", "TapeRecord", "adam_update", "backward",
    "conv2d", "conv_out_size", "deconv2d", "deconv_out_size", "dense", "flatten", "forward",
    "layernorm", "load_arrays", "permute", "relu", "reshape", "save_arrays", "soft_update", "tanh",
]

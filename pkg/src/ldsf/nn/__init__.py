"""Small reverse-mode autodiff engine and layers used by both network streams."""
from .layers import add_se, channel_affine, conv, dense, se_block
from .params import (ParamStore, adam_step, checkpoint_bytes, glorot_uniform, load_checkpoint,
                     save_checkpoint, store_from_bytes)
from .tensor import (Tensor, add, as_tensor, concat, conv2d, div, dropout, elu, exp,
                     gather_rows, global_avg_pool, index, leaky_relu, log, log_softmax, matmul,
                     mean, mul, relu, reshape, segment_softmax, segment_sum, sigmoid, softmax,
                     stack, sub, tanh, transpose, tsum)

__all__ = [
    "Tensor", "ParamStore", "adam_step", "checkpoint_bytes", "store_from_bytes",
    "save_checkpoint", "load_checkpoint", "glorot_uniform", "dense", "channel_affine",
    "se_block", "add_se", "conv", "add", "sub", "mul", "div", "exp", "log", "tanh", "sigmoid",
    "relu", "leaky_relu", "elu", "softmax", "log_softmax", "segment_softmax", "segment_sum",
    "gather_rows", "index", "concat", "stack", "matmul", "mean", "tsum", "reshape",
    "transpose", "conv2d", "global_avg_pool", "dropout", "as_tensor",
]

"""Layer vocabulary built on the tensor ops."""
from __future__ import annotations

from .params import ParamStore
from .tensor import (Tensor, conv2d, global_avg_pool, matmul, mul, relu, reshape, sigmoid)


def dense(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, W)
    return y + b if b is not None else y


def channel_affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Per-channel scale and shift of (B, C, H, W) maps; stands in for batch norm."""
    c = scale.shape[0]
    return x * reshape(scale, (1, c, 1, 1)) + reshape(shift, (1, c, 1, 1))


def add_se(store: ParamStore, prefix: str, channels: int, reduction: int) -> None:
    hidden = max(1, channels // reduction)
    store.add(f"{prefix}/w1", (channels, hidden))
    store.add(f"{prefix}/b1", (hidden,), init="zeros")
    store.add(f"{prefix}/w2", (hidden, channels))
    store.add(f"{prefix}/b2", (channels,), init="zeros")


def se_block(x: Tensor, store: ParamStore, prefix: str) -> Tensor:
    """Squeeze-excitation: GAP -> dense -> ReLU -> dense -> sigmoid gates on channels."""
    s = global_avg_pool(x)
    h = relu(dense(s, store[f"{prefix}/w1"], store[f"{prefix}/b1"]))
    gate = sigmoid(dense(h, store[f"{prefix}/w2"], store[f"{prefix}/b2"]))
    b, c = gate.shape
    return mul(x, reshape(gate, (b, c, 1, 1)))


def conv(x: Tensor, k: Tensor, stride: int = 1) -> Tensor:
    """Same-padding convolution for odd kernels."""
    return conv2d(x, k, stride=stride, pad=k.shape[2] // 2)

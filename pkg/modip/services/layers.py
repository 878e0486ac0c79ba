"""Forward and backward passes of the network layers.

Activations are arrays of shape (C, X, Y, Z). Convolution weights have shape
(C_out, C_in, k, k, k). Every backward function takes the gradient of the
layer output and the cache saved by its forward.
"""

import itertools
from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-5


@dataclass
class ConvCache:
    padded: np.ndarray
    pad: int


def conv3d_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, ConvCache]:
    """Stride-1 convolution with zero padding k // 2 (same-size output)"""
    c_out, c_in, kx, ky, kz = weight.shape
    if x.shape[0] != c_in:
        raise ValueError(f"conv expects {c_in} input channels, got {x.shape[0]}")
    pad = kx // 2
    _, nx, ny, nz = x.shape
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad))) if pad else x
    out = np.empty((c_out, nx * ny * nz), dtype=x.dtype)
    out[:] = bias[:, None]
    for i, j, k in itertools.product(range(kx), range(ky), range(kz)):
        window = padded[:, i : i + nx, j : j + ny, k : k + nz].reshape(c_in, -1)
        out += weight[:, :, i, j, k] @ window
    return out.reshape(c_out, nx, ny, nz), ConvCache(padded, pad)


def conv3d_backward(
    grad_out: np.ndarray,
    cache: ConvCache,
    weight: np.ndarray,
    need_input_grad: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_weight, grad_bias)"""
    c_out, c_in, kx, ky, kz = weight.shape
    _, nx, ny, nz = grad_out.shape
    g = grad_out.reshape(c_out, -1)
    grad_bias = g.sum(axis=1)
    grad_weight = np.empty_like(weight)
    grad_padded = np.zeros_like(cache.padded) if need_input_grad else None
    for i, j, k in itertools.product(range(kx), range(ky), range(kz)):
        window = cache.padded[:, i : i + nx, j : j + ny, k : k + nz].reshape(c_in, -1)
        grad_weight[:, :, i, j, k] = g @ window.T
        if need_input_grad:
            grad_padded[:, i : i + nx, j : j + ny, k : k + nz] += (
                weight[:, :, i, j, k].T @ g
            ).reshape(c_in, nx, ny, nz)
    if not need_input_grad:
        return None, grad_weight, grad_bias
    p = cache.pad
    grad_x = grad_padded[:, p : p + nx, p : p + ny, p : p + nz] if p else grad_padded
    return grad_x, grad_weight, grad_bias


@dataclass
class NormCache:
    normalized: np.ndarray
    inv_std: np.ndarray


def instance_norm_forward(
    x: np.ndarray, scale: np.ndarray, shift: np.ndarray
) -> tuple[np.ndarray, NormCache]:
    """Per-channel normalization over the spatial axes with a learnable affine"""
    axes = (1, 2, 3)
    mean = x.mean(axis=axes, keepdims=True)
    centered = x - mean
    var = (centered**2).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + NORM_EPS)
    normalized = centered * inv_std
    out = scale[:, None, None, None] * normalized + shift[:, None, None, None]
    return out, NormCache(normalized, inv_std)


def instance_norm_backward(
    grad_out: np.ndarray, cache: NormCache, scale: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_scale, grad_shift)"""
    axes = (1, 2, 3)
    grad_shift = grad_out.sum(axis=axes)
    grad_scale = (grad_out * cache.normalized).sum(axis=axes)
    grad_norm = grad_out * scale[:, None, None, None]
    mean_grad = grad_norm.mean(axis=axes, keepdims=True)
    mean_grad_norm = (grad_norm * cache.normalized).mean(axis=axes, keepdims=True)
    grad_x = cache.inv_std * (grad_norm - mean_grad - cache.normalized * mean_grad_norm)
    return grad_x, grad_scale, grad_shift


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    active = x > 0
    return np.where(active, x, 0), active


def relu_backward(grad_out: np.ndarray, active: np.ndarray) -> np.ndarray:
    return np.where(active, grad_out, 0)


def _pool_windows(x: np.ndarray) -> np.ndarray:
    """(C, X, Y, Z) -> (C, X/2, Y/2, Z/2, 8), window offsets in (dx, dy, dz) order"""
    c, nx, ny, nz = x.shape
    blocks = x.reshape(c, nx // 2, 2, ny // 2, 2, nz // 2, 2)
    return blocks.transpose(0, 1, 3, 5, 2, 4, 6).reshape(c, nx // 2, ny // 2, nz // 2, 8)


def _unpool_windows(windows: np.ndarray) -> np.ndarray:
    c, hx, hy, hz, _ = windows.shape
    blocks = windows.reshape(c, hx, hy, hz, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3, 6)
    return blocks.reshape(c, 2 * hx, 2 * hy, 2 * hz)


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2x2 max pooling; ties resolve to the first offset"""
    windows = _pool_windows(x)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(grad_out: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    windows = np.zeros(grad_out.shape + (8,), dtype=grad_out.dtype)
    np.put_along_axis(windows, argmax[..., None], grad_out[..., None], axis=-1)
    return _unpool_windows(windows)


def upsample_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour x2 on every spatial axis"""
    return x.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)


def upsample_backward(grad_out: np.ndarray) -> np.ndarray:
    return _pool_windows(grad_out).sum(axis=-1)

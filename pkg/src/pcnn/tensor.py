"""Dense rank-4 tensor operations with explicit adjoints.

Tensors are plain ``numpy.ndarray`` objects in N, C, H, W order. Kernels are
laid out as (out_ch, in_ch, kh, kw). Every function is pure and keeps the
dtype of its inputs, so float64 operands can be used for gradient checks
while training runs in float32.

``conv2d`` is a cross-correlation (the kernel is not flipped), as in every
mainstream deep-learning framework.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


def as_tensor(x, dtype=DTYPE) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=dtype)


def conv_output_shape(input_shape, kernel_shape, stride: int = 1, pad: int = 0):
    n, c, h, w = input_shape
    o, ci, kh, kw = kernel_shape
    if ci != c:
        raise ShapeError(f"kernel {tuple(kernel_shape)} expects {ci} input channels, input is {tuple(input_shape)}")
    if stride < 1 or pad < 0:
        raise ValueError(f"invalid stride={stride} / pad={pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {tuple(kernel_shape)} does not fit input {tuple(input_shape)} with pad={pad}")
    return n, o, ho, wo


def _check4(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4, got shape {x.shape}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    # -> (N*Ho*Wo, C*kh*kw), columns ordered (c, dy, dx) to match kernel.reshape(O, -1)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """2-D cross-correlation of ``x`` (N,C,H,W) with ``kernel`` (O,C,kh,kw)."""
    return conv2d_cols(x, kernel, stride, pad)[0]


def conv2d_cols(x: np.ndarray, kernel: np.ndarray, stride: int = 1, pad: int = 0):
    """``conv2d`` that also returns the unfolded input, reusable by ``conv2d_backward``."""
    _check4(x, "input")
    _check4(kernel, "kernel")
    n, o, ho, wo = conv_output_shape(x.shape, kernel.shape, stride, pad)
    kh, kw = kernel.shape[2:]
    cols = _im2col(x, kh, kw, stride, pad)
    out = cols @ kernel.reshape(o, -1).T
    return np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)), cols


def conv2d_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray,
                    stride: int = 1, pad: int = 0, cols: np.ndarray | None = None,
                    need_input_grad: bool = True) -> tuple[np.ndarray | None, np.ndarray]:
    """Gradients of ``sum(conv2d(x, kernel) * grad_out)`` w.r.t. ``x`` and ``kernel``."""
    _check4(x, "input")
    _check4(kernel, "kernel")
    expected = conv_output_shape(x.shape, kernel.shape, stride, pad)
    if tuple(grad_out.shape) != expected:
        raise ShapeError(f"grad_out has shape {tuple(grad_out.shape)}, conv output is {expected}")
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    _, _, ho, wo = expected

    g = grad_out.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    if cols is None:
        cols = _im2col(x, kh, kw, stride, pad)
    grad_kernel = (g.T @ cols).reshape(kernel.shape)
    if not need_input_grad:
        return None, grad_kernel

    dcols = (g @ kernel.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.result_type(x, kernel, grad_out))
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for dy in range(kh):
        for dx in range(kw):
            dxp[:, :, dy:dy + hspan:stride, dx:dx + wspan:stride] += dcols[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
    grad_input = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return np.ascontiguousarray(grad_input), grad_kernel


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard operands differ: {a.shape} vs {b.shape}")
    return a * b


def channel_concat(tensors: Sequence[np.ndarray]) -> np.ndarray:
    if not tensors:
        raise ShapeError("channel_concat needs at least one tensor")
    first = tensors[0]
    for t in tensors:
        _check4(t, "concat operand")
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ShapeError(f"cannot concatenate {first.shape} with {t.shape} along channels")
    return np.concatenate(tensors, axis=1)


def channel_slice(x: np.ndarray, start: int, stop: int) -> np.ndarray:
    return x[:, start:stop]


def channel_split(x: np.ndarray, groups: int) -> list[np.ndarray]:
    """Split the channel axis into ``groups`` equal contiguous chunks."""
    if x.shape[1] % groups:
        raise ShapeError(f"{x.shape[1]} channels cannot be split into {groups} equal groups")
    step = x.shape[1] // groups
    return [x[:, j * step:(j + 1) * step] for j in range(groups)]


def total(x: np.ndarray) -> float:
    return float(np.sum(x, dtype=np.float64))


def mean(x: np.ndarray) -> float:
    return float(np.mean(x, dtype=np.float64))


def l1_norm(x: np.ndarray) -> float:
    return float(np.sum(np.abs(x), dtype=np.float64))


def max_pool2d(x: np.ndarray, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping k x k max pooling. Returns the output and the winning window offsets."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by pool size {k}")
    views = [x[:, :, dy::k, dx::k] for dy in range(k) for dx in range(k)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)
    idx = np.full(out.shape, k * k - 1, dtype=np.int8)
    # walk backwards so the first maximum in scan order wins ties
    for t in range(k * k - 2, -1, -1):
        idx[views[t] == out] = t
    return out, idx


def max_pool2d_backward(grad_out: np.ndarray, idx: np.ndarray, k: int = 2) -> np.ndarray:
    n, c, hk, wk = grad_out.shape
    grad = np.zeros((n, c, hk, k, wk, k), dtype=grad_out.dtype)
    for t in range(k * k):
        dy, dx = divmod(t, k)
        grad[:, :, :, dy, :, dx] = np.where(idx == t, grad_out, 0)
    return grad.reshape(n, c, hk * k, wk * k)

"""Projection convolution layer.

A layer holds ``I`` full-precision kernels ``C`` of shape (in_ch, kh, kw) and
``J`` projection matrices ``W`` of shape (kh, kw). Each forward pass

1. estimates the binary set from ``C``,
2. quantizes ``C`` once per projection: ``Chat[j] = P(mean(W[j]) * C)``,
3. convolves the j-th channel group of the input with ``Chat[j]``,
4. concatenates the J group outputs along channels (j-major order).

The layer therefore maps ``in_ch * J`` channels to ``I * J`` channels. The
per-output-kernel concatenation ``D_i = Chat[0, i] (+) ... (+) Chat[J-1, i]``
is what gets exported for inference; ``W`` and ``C`` are training-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import Module, Param, fan_in_uniform
from .projection import DiscreteSet, compute_omega, project_kernel


def duplicate_projection(w: np.ndarray, in_ch: int, mode: str = "exact") -> np.ndarray:
    """Replicate a (kh, kw) projection matrix across ``in_ch`` channels.

    ``mode="mean"`` replicates the scalar mean of ``w`` instead, which is what
    the forward pass uses; the backward formulas use ``mode="exact"``.
    """
    w = np.asarray(w)
    if w.ndim != 2:
        raise T.ShapeError(f"projection matrix must be 2-D, got {w.shape}")
    if in_ch < 1:
        raise ValueError(f"in_ch must be >= 1, got {in_ch}")
    if mode == "exact":
        return np.ascontiguousarray(np.broadcast_to(w, (in_ch,) + w.shape))
    if mode == "mean":
        return np.full((in_ch,) + w.shape, np.mean(w, dtype=np.float64), dtype=w.dtype)
    raise ValueError(f"unknown duplication mode {mode!r}")


def binarize_activations(x: np.ndarray) -> np.ndarray:
    """sign(x) with sign(0) = +1."""
    x = np.asarray(x)
    return np.where(x >= 0, 1, -1).astype(x.dtype if np.issubdtype(x.dtype, np.floating) else T.DTYPE)


@dataclass
class LayerCache:
    x: np.ndarray  # raw input
    xb: np.ndarray  # input after optional binarization
    omega: DiscreteSet
    w_exact: np.ndarray  # (J, in_ch, kh, kw)
    w_mean: np.ndarray  # (J, in_ch, kh, kw)
    chat: np.ndarray  # (J, I, in_ch, kh, kw)
    out_shape: tuple
    d_chat: np.ndarray | None = None  # filled by backward, same shape as chat
    cols: list | None = field(default=None, repr=False)  # unfolded group inputs

    @property
    def d(self) -> np.ndarray:
        """Concatenated kernels D, shape (I, J*in_ch, kh, kw)."""
        j, i, c, kh, kw = self.chat.shape
        return self.chat.transpose(1, 0, 2, 3, 4).reshape(i, j * c, kh, kw)


class ProjConv(Module):
    def __init__(self, in_ch: int, out_ch: int, k: int = 3, J: int = 1, stride: int = 1, pad: int = 1,
                 binarize_input: bool = True, omega_norm: str = "mean", rng: np.random.Generator | None = None,
                 w_init: str = "uniform", freeze_w: bool = False, name: str = ""):
        """``in_ch`` and ``out_ch`` are per projection group; the layer consumes
        ``in_ch * J`` channels and produces ``out_ch * J``."""
        if J < 1:
            raise ValueError(f"J must be >= 1, got {J}")
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.in_ch, self.out_ch, self.k, self.J = in_ch, out_ch, k, J
        self.stride, self.pad = stride, pad
        self.binarize_input = binarize_input
        self.omega_norm = omega_norm
        self.C = Param(fan_in_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k), kind="C")
        if w_init == "uniform":
            w = rng.uniform(0.9, 1.1, size=(J, k, k)).astype(T.DTYPE)
        elif w_init == "ones":
            w = np.ones((J, k, k), T.DTYPE)
        else:
            raise ValueError(f"unknown projection init {w_init!r}")
        self.W = Param(w, kind="W", trainable=not freeze_w)
        self.cache: LayerCache | None = None

    def params(self):
        return {"C": self.C, "W": self.W}

    def inference_param_count(self) -> int:
        return self.J * self.C.size

    @property
    def in_channels(self) -> int:
        return self.in_ch * self.J

    @property
    def out_channels(self) -> int:
        return self.out_ch * self.J

    def omega(self) -> DiscreteSet:
        om = compute_omega(self.C.value, self.omega_norm)
        # round the magnitude to the working dtype so members are exactly representable
        return DiscreteSet.binary(self.C.value.dtype.type(om.scale))

    def quantize(self, omega: DiscreteSet | None = None):
        """Return (omega, w_exact, w_mean, chat) for the current parameters."""
        omega = omega or self.omega()
        C, W = self.C.value, self.W.value
        w_exact = np.stack([duplicate_projection(W[j], self.in_ch, "exact") for j in range(self.J)])
        w_mean = np.stack([duplicate_projection(W[j], self.in_ch, "mean") for j in range(self.J)])
        chat = np.stack([project_kernel(C, np.broadcast_to(w_mean[j], C.shape), omega) for j in range(self.J)])
        return omega, w_exact, w_mean, chat

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise T.ShapeError(f"{self.name or 'ProjConv'} expects {self.in_channels} input channels, got {x.shape}")
        xb = binarize_activations(x) if self.binarize_input else x
        omega, w_exact, w_mean, chat = self.quantize()
        outs, cols = [], []
        for j, xj in enumerate(T.channel_split(xb, self.J)):
            o, c = T.conv2d_cols(xj, chat[j], self.stride, self.pad)
            outs.append(o)
            cols.append(c)
        out = T.channel_concat(outs)
        self.cache = LayerCache(x, xb, omega, w_exact, w_mean, chat, out.shape, cols=cols)
        return out

    def backward(self, grad):
        """Backpropagate the task-loss gradient: stores dL/dChat and returns dL/dx."""
        cache = self.cache
        if cache is None:
            raise RuntimeError(f"{self.name or 'ProjConv'}: backward called without a matching forward")
        if grad.shape != cache.out_shape:
            raise T.ShapeError(f"grad {grad.shape} does not match output {cache.out_shape}")
        gins, dchat = [], []
        for j, (xj, gj) in enumerate(zip(T.channel_split(cache.xb, self.J), T.channel_split(grad, self.J))):
            gx, gk = T.conv2d_backward(xj, cache.chat[j], gj, self.stride, self.pad, cols=cache.cols[j])
            gins.append(gx)
            dchat.append(gk)
        cache.d_chat = np.stack(dchat)
        gx = T.channel_concat(gins)
        if self.binarize_input:
            gx = gx * (np.abs(cache.x) <= 1)
        return gx


def forward(layer: ProjConv, x: np.ndarray, train: bool = True) -> tuple[np.ndarray, LayerCache]:
    out = layer.forward(x, train)
    return out, layer.cache

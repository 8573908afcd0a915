"""Minimal layer objects with hand-written backward passes.

Each module caches what its backward pass needs during ``forward`` and
returns the input gradient from ``backward``. Parameter gradients are left in
``Param.grad``; nothing is updated here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T


@dataclass(eq=False)
class Param:
    value: np.ndarray
    kind: str = "other"  # "C" (latent kernels), "W" (projection matrices) or "other"
    decay: bool = True
    trainable: bool = True
    grad: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.value.size)


class Module:
    name: str = ""

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, Param]:
        return {}

    def children(self) -> list["Module"]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def inference_param_count(self) -> int:
        """Parameters that survive into the exported model."""
        return sum(p.size for p in self.params().values())

    def __call__(self, x, train: bool = True):
        return self.forward(x, train)


def named_modules(root: Module, prefix: str = "") -> Iterator[tuple[str, Module]]:
    yield prefix, root
    for i, child in enumerate(root.children()):
        name = child.name or str(i)
        yield from named_modules(child, f"{prefix}.{name}" if prefix else name)


def named_params(root: Module) -> Iterator[tuple[str, Param]]:
    for path, mod in named_modules(root):
        for pname, p in mod.params().items():
            yield (f"{path}.{pname}" if path else pname), p


def named_buffers(root: Module) -> Iterator[tuple[str, np.ndarray]]:
    for path, mod in named_modules(root):
        for bname, b in mod.buffers().items():
            yield (f"{path}.{bname}" if path else bname), b


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(T.DTYPE)


class Conv2d(Module):
    """Full-precision convolution (used for the first layer of a network)."""

    def __init__(self, in_ch: int, out_ch: int, k: int = 3, stride: int = 1, pad: int = 1,
                 bias: bool = False, rng: np.random.Generator | None = None, name: str = ""):
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.stride, self.pad = stride, pad
        self.weight = Param(fan_in_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k))
        self.bias = Param(np.zeros(out_ch, T.DTYPE), decay=False) if bias else None
        self.input_grad = True  # the builder switches this off for a network's first layer
        self._x = self._cols = None

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def forward(self, x, train=True):
        self._x = x
        out, self._cols = T.conv2d_cols(x, self.weight.value, self.stride, self.pad)
        if self.bias is not None:
            out += self.bias.value[None, :, None, None]
        return out

    def backward(self, grad):
        gx, gw = T.conv2d_backward(self._x, self.weight.value, grad, self.stride, self.pad,
                                   cols=self._cols, need_input_grad=self.input_grad)
        self.weight.grad = gw
        if self.bias is not None:
            self.bias.grad = grad.sum(axis=(0, 2, 3))
        return gx


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None,
                 name: str = ""):
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.weight = Param(fan_in_uniform(rng, (out_features, in_features), in_features))
        self.bias = Param(np.zeros(out_features, T.DTYPE), decay=False)
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, train=True):
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad):
        self.weight.grad = grad.T @ self._x
        self.bias.grad = grad.sum(axis=0)
        return grad @ self.weight.value


class BatchNorm2d(Module):
    """Per-channel affine normalization with running statistics."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, name: str = ""):
        self.name = name
        self.eps, self.momentum = eps, momentum
        self.gamma = Param(np.ones(channels, T.DTYPE), decay=False)
        self.beta = Param(np.zeros(channels, T.DTYPE), decay=False)
        self.running_mean = np.zeros(channels, T.DTYPE)
        self.running_var = np.ones(channels, T.DTYPE)
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train=True):
        if train:
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.size // x.shape[1]
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * var * m / max(m - 1, 1)
        else:
            mu, var = self.running_mean, self.running_var
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
        self._cache = (xhat, inv)
        return xhat * self.gamma.value[None, :, None, None] + self.beta.value[None, :, None, None]

    def backward(self, grad):
        xhat, inv = self._cache
        self.gamma.grad = (grad * xhat).sum(axis=(0, 2, 3))
        self.beta.grad = grad.sum(axis=(0, 2, 3))
        gxhat = grad * self.gamma.value[None, :, None, None]
        m = grad.size // grad.shape[1]
        term = m * gxhat - gxhat.sum(axis=(0, 2, 3), keepdims=True) \
            - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return term * (inv[None, :, None, None] / m)


class MaxPool2d(Module):
    def __init__(self, k: int = 2, name: str = ""):
        self.name = name
        self.k = k
        self._idx = None

    def forward(self, x, train=True):
        out, self._idx = T.max_pool2d(x, self.k)
        return out

    def backward(self, grad):
        return T.max_pool2d_backward(grad, self._idx, self.k)


class GlobalAvgPool(Module):
    def __init__(self, name: str = ""):
        self.name = name
        self._shape = None

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._shape
        return np.broadcast_to(grad[:, :, None, None] / (h * w), self._shape).astype(grad.dtype)


class Flatten(Module):
    def __init__(self, name: str = ""):
        self.name = name
        self._shape = None

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Sequential(Module):
    def __init__(self, *layers: Module, name: str = ""):
        self.name = name
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def inference_param_count(self):
        return sum(layer.inference_param_count() for layer in self.layers)


class Residual(Module):
    """Pre-activation residual block: ``y = main(pre(x)) + (shortcut(pre(x)) or x)``."""

    def __init__(self, pre: Module, main: Module, shortcut: Module | None = None, name: str = ""):
        self.name = name
        pre.name = pre.name or "pre"
        main.name = main.name or "main"
        self.pre, self.main, self.shortcut = pre, main, shortcut
        if shortcut is not None:
            shortcut.name = shortcut.name or "shortcut"

    def children(self):
        kids = [self.pre, self.main]
        if self.shortcut is not None:
            kids.append(self.shortcut)
        return kids

    def forward(self, x, train=True):
        o = self.pre.forward(x, train)
        y = self.main.forward(o, train)
        return y + (self.shortcut.forward(o, train) if self.shortcut is not None else x)

    def backward(self, grad):
        go = self.main.backward(grad)
        if self.shortcut is not None:
            return self.pre.backward(go + self.shortcut.backward(grad))
        return self.pre.backward(go) + grad

    def inference_param_count(self):
        return sum(c.inference_param_count() for c in self.children())

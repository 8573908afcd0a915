"""Network builders: a small MNIST CNN and a WRN-22-style CIFAR network."""

from __future__ import annotations

import numpy as np

from .layers import (BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Linear, MaxPool2d, Module, Residual,
                     Sequential, named_modules)
from .proj_conv import ProjConv

ARCHS = ("small-cnn", "wrn-22")


class UnknownArchError(ValueError):
    pass


def proj_layers(model: Module) -> list[ProjConv]:
    return [m for _, m in named_modules(model) if isinstance(m, ProjConv)]


def param_count(model: Module) -> int:
    """Parameters of the inference model (quantized kernels D, full-precision layers, norm affine)."""
    return model.inference_param_count()


def training_param_count(model: Module) -> int:
    from .layers import named_params
    return sum(p.size for _, p in named_params(model))



def small_cnn(J: int = 1, width: int = 16, in_ch: int = 1, classes: int = 10, image: int = 28,
              first_last_full_precision: bool = True, rng=None, **opts) -> Sequential:
    """conv - BN - pool - projconv - BN - pool - projconv - BN - fc.

    With ``first_last_full_precision=False`` the first convolution is also a
    projection layer (on the raw, unbinarized image); the classifier is always
    full precision.
    """
    rng = rng or np.random.default_rng(0)
    if first_last_full_precision:
        first = Conv2d(in_ch, width * J, rng=rng, name="conv1")
        first.input_grad = False
    else:
        first = ProjConv(in_ch, width * J, J=1, rng=rng, name="conv1", **{**opts, "binarize_input": False})
    return Sequential(
        first,
        BatchNorm2d(width * J, name="bn1"),
        MaxPool2d(2, name="pool1"),
        ProjConv(width, width, J=J, rng=rng, name="conv2", **opts),
        BatchNorm2d(width * J, name="bn2"),
        MaxPool2d(2, name="pool2"),
        ProjConv(width, width, J=J, rng=rng, name="conv3", **opts),
        BatchNorm2d(width * J, name="bn3"),
        Flatten(name="flatten"),
        Linear(width * J * (image // 4) ** 2, classes, rng=rng, name="fc"),
    )


def _wrn_block(in_ch, out_ch, stride, J, rng, opts, name):
    pre = BatchNorm2d(in_ch * J, name="bn_a")
    main = Sequential(
        ProjConv(in_ch, out_ch, J=J, stride=stride, rng=rng, name="conv_a", **opts),
        BatchNorm2d(out_ch * J, name="bn_b"),
        ProjConv(out_ch, out_ch, J=J, rng=rng, name="conv_b", **opts),
        name="main",
    )
    shortcut = None
    if stride != 1 or in_ch != out_ch:
        shortcut = ProjConv(in_ch, out_ch, k=1, J=J, stride=stride, pad=0, rng=rng, name="shortcut", **opts)
    return Residual(pre, main, shortcut, name=name)


def wrn(depth: int = 22, i: int = 16, J: int = 1, in_ch: int = 3, classes: int = 10, rng=None,
        **opts) -> Sequential:
    """Pre-activation wide ResNet with widening factor 1 and stage widths i-i-2i-4i."""
    if (depth - 4) % 6:
        raise ValueError(f"WRN depth must be 6n+4, got {depth}")
    n = (depth - 4) // 6
    rng = rng or np.random.default_rng(0)
    widths = [i, i, 2 * i, 4 * i]
    first = Conv2d(in_ch, widths[0] * J, rng=rng, name="conv1")
    first.input_grad = False
    layers: list[Module] = [first]
    prev = widths[0]
    for stage, (w, stride) in enumerate(zip(widths[1:], (1, 2, 2)), start=1):
        for b in range(n):
            layers.append(_wrn_block(prev, w, stride if b == 0 else 1, J, rng, opts, f"stage{stage}_block{b}"))
            prev = w
    layers += [
        BatchNorm2d(prev * J, name="bn_final"),
        GlobalAvgPool(name="avgpool"),
        Linear(prev * J, classes, rng=rng, name="fc"),
    ]
    return Sequential(*layers)


def build_model(arch: str, J: int = 1, *, seed: int = 0, width: int = 16, i: int = 16,
                first_last_full_precision: bool = True, omega_norm: str = "mean",
                w_init: str = "uniform", freeze_w: bool = False, binarize_activations: bool = True,
                in_ch: int | None = None, image: int | None = None, classes: int = 10) -> Sequential:
    rng = np.random.default_rng(seed)
    opts = dict(omega_norm=omega_norm, w_init=w_init, freeze_w=freeze_w, binarize_input=binarize_activations)
    if arch == "small-cnn":
        return small_cnn(J=J, width=width, in_ch=in_ch or 1, image=image or 28, classes=classes,
                         first_last_full_precision=first_last_full_precision, rng=rng, **opts)
    if arch in ("wrn-22", "wrn-22-like"):
        if not first_last_full_precision:
            raise ValueError("wrn-22 keeps its first and last layers full precision")
        return wrn(22, i=i, J=J, in_ch=in_ch or 3, classes=classes, rng=rng, **opts)
    raise UnknownArchError(f"unknown arch {arch!r}; expected one of {ARCHS}")

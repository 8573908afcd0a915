"""Task loss, projection loss, the kernel/projection gradients, and momentum SGD.

Notation in this module: ``C`` latent kernels (I, in, kh, kw), ``Wt[j]`` the
projection matrix ``W[j]`` replicated across input channels, ``chat[j]`` the
quantized kernels and ``d[j]`` the task-loss gradient at ``chat[j]``. The
projection residual of group j is ``R[j] = Wt[j] * (C + eta * d[j]) - chat[j]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .proj_conv import LayerCache, ProjConv


@dataclass(frozen=True)
class LossBreakdown:
    l_s: float
    l_p: float
    lam: float

    @property
    def total(self) -> float:
        return self.l_s + self.l_p


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits)
    if logits.ndim == 4:
        logits = logits.reshape(logits.shape[0], -1)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"label out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -float(np.mean(logp[np.arange(n), labels], dtype=np.float64))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return loss, (grad / n).astype(logits.dtype)


def _residual(C, w_exact, chat, d_chat, eta):
    # (J, I, in, kh, kw)
    return w_exact[:, None] * (C[None] + eta * d_chat) - chat


def layer_projection_loss(C, w_exact, chat, d_chat, eta: float, lam: float) -> float:
    """``lam/2 * sum_{i,j} |chat[j,i] - Wt[j] * (C[i] + eta * d[j,i])|^2`` for one layer."""
    r = _residual(C, w_exact, chat, d_chat, eta)
    return 0.5 * lam * float(np.sum(np.square(r, dtype=np.float64)))


def projection_loss(layers: Iterable[ProjConv], eta: float, lam: float, d_chats=None) -> float:
    """Projection loss summed over layers, using each layer's cached quantities.

    ``d_chats`` overrides the cached task-loss gradients (one array per layer).
    """
    layers = list(layers)
    d_chats = [None] * len(layers) if d_chats is None else list(d_chats)
    total = 0.0
    for layer, d in zip(layers, d_chats):
        cache = layer.cache
        d = cache.d_chat if (d is None and cache is not None) else d
        if cache is None or d is None:
            raise RuntimeError(f"{layer.name or 'ProjConv'}: missing forward/backward cache")
        total += layer_projection_loss(layer.C.value, cache.w_exact, cache.chat, d, eta, lam)
    return total


def grad_C_task(layer: ProjConv, cache: LayerCache, d_chat: np.ndarray) -> np.ndarray:
    """Straight-through chain term: ``sum_j d[j] * 1[-1 <= Wt[j]*C <= 1] * Wt[j]``."""
    C = layer.C.value
    wc = cache.w_exact[:, None] * C[None]
    mask = (wc >= -1) & (wc <= 1)
    return np.sum(d_chat * mask * cache.w_exact[:, None], axis=0)


def grad_C_proj(layer: ProjConv, cache: LayerCache, d_chat: np.ndarray, eta: float, lam: float) -> np.ndarray:
    """``lam * sum_j R[j] * Wt[j]``."""
    r = _residual(layer.C.value, cache.w_exact, cache.chat, d_chat, eta)
    return lam * np.sum(r * cache.w_exact[:, None], axis=0)


def grad_W_task(layer: ProjConv, cache: LayerCache, d_chat: np.ndarray) -> np.ndarray:
    """``sum_h (sum_i d[j] * 1[-1 <= Wt[j]*C <= 1] * C)_h`` -> (J, kh, kw)."""
    C = layer.C.value
    wc = cache.w_exact[:, None] * C[None]
    mask = (wc >= -1) & (wc <= 1)
    return np.sum(d_chat * mask * C[None], axis=(1, 2))


def grad_W_proj(layer: ProjConv, cache: LayerCache, d_chat: np.ndarray, eta: float, lam: float) -> np.ndarray:
    """``lam * sum_h (sum_i R[j] * (C + eta * d[j]))_h`` -> (J, kh, kw)."""
    C = layer.C.value
    shifted = C[None] + eta * d_chat
    r = cache.w_exact[:, None] * shifted - cache.chat
    return lam * np.sum(r * shifted, axis=(1, 2))


def grad_C(layer: ProjConv, cache: LayerCache, d_chat: np.ndarray, eta: float, lam: float,
           with_projection: bool = True) -> np.ndarray:
    g = grad_C_task(layer, cache, d_chat)
    if with_projection:
        g = g + grad_C_proj(layer, cache, d_chat, eta, lam)
    return g.astype(layer.C.value.dtype)


def grad_W(layer: ProjConv, cache: LayerCache, d_chat: np.ndarray, eta: float, lam: float,
           with_projection: bool = True) -> np.ndarray:
    g = grad_W_task(layer, cache, d_chat)
    if with_projection:
        g = g + grad_W_proj(layer, cache, d_chat, eta, lam)
    return g.astype(layer.W.value.dtype)


def sgd_update(param: np.ndarray, grad: np.ndarray, state: np.ndarray | None, lr: float,
               momentum: float = 0.0, weight_decay: float = 0.0) -> tuple[np.ndarray, np.ndarray | None]:
    """One momentum-SGD step. Returns the new parameter and velocity buffer.

    ``v <- momentum * v + (grad + weight_decay * param)``; ``param <- param - lr * v``.
    With zero momentum and decay this is the plain ``param - lr * grad`` step.
    """
    g = grad + weight_decay * param if weight_decay else grad
    if momentum:
        if state is None:
            state = np.zeros_like(param)
        if state.shape != param.shape:
            raise ValueError(f"momentum buffer {state.shape} does not match parameter {param.shape}")
        state = momentum * state + g
        g = state
    return (param - lr * g).astype(param.dtype), state

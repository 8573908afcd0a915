"""Discrete sets, the nearest-member projection, and per-layer set estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import ShapeError


class DegenerateSetError(ValueError):
    """A discrete set would not be strictly increasing."""


@dataclass(frozen=True)
class DiscreteSet:
    """Sorted quantization targets ``a_1 < a_2 < ... < a_U``."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise DegenerateSetError(f"need at least two values, got {vals}")
        if not all(np.isfinite(vals)):
            raise DegenerateSetError(f"non-finite value in {vals}")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise DegenerateSetError(f"values must be strictly increasing, got {vals}")

    @classmethod
    def binary(cls, a: float) -> "DiscreteSet":
        a = abs(float(a))
        return cls((-a, a))

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def is_binary(self) -> bool:
        return len(self.values) == 2 and self.values[1] == -self.values[0]

    @property
    def scale(self) -> float:
        """Magnitude ``a`` of a symmetric binary set."""
        if not self.is_binary:
            raise ValueError("scale is only defined for symmetric binary sets")
        return self.values[1]

    def __contains__(self, x) -> bool:
        return float(x) in self.values


def project_scalar(x: float, omega: DiscreteSet) -> float:
    """Nearest member of ``omega``; a tie between two members picks the larger one."""
    best = omega.values[0]
    best_d = abs(x - best)
    for a in omega.values[1:]:
        d = abs(x - a)
        if d <= best_d:
            best, best_d = a, d
    return best


def project(x, omega: DiscreteSet, dtype=None) -> np.ndarray:
    """Elementwise ``project_scalar`` over an array.

    Each entry is compared against its two bracketing members; an exact tie
    goes up, matching ``project_scalar``.
    """
    x = np.asarray(x)
    dtype = dtype or (x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)
    vals = np.asarray(omega.values, dtype=np.float64)
    if omega.is_binary:
        # the only midpoint is 0
        return np.where(x >= 0, vals[1], vals[0]).astype(dtype)
    hi = np.clip(np.searchsorted(vals, x, side="left"), 1, len(vals) - 1)
    lo_v, hi_v = vals[hi - 1], vals[hi]
    # comparing distances directly avoids rounding in a computed midpoint
    return np.where(np.abs(x - hi_v) <= np.abs(x - lo_v), hi_v, lo_v).astype(dtype)


def compute_omega(kernels: Iterable[np.ndarray] | np.ndarray, normalize: str = "mean") -> DiscreteSet:
    """Binary set ``{-a, +a}`` estimated from the full-precision kernels of one layer.

    ``kernels`` is either a list of per-output kernels or one stacked array
    whose leading axis indexes kernels. ``normalize="mean"`` makes ``a`` the
    mean absolute kernel entry; ``normalize="per_kernel"`` divides the summed
    L1 norms by the kernel count only.
    """
    if isinstance(kernels, np.ndarray):
        stack = [kernels[i] for i in range(kernels.shape[0])]
    else:
        stack = list(kernels)
    if not stack:
        raise ValueError("compute_omega needs at least one kernel")
    count = len(stack)
    l1 = sum(float(np.sum(np.abs(k), dtype=np.float64)) for k in stack)
    if normalize == "mean":
        a = l1 / sum(k.size for k in stack)
    elif normalize == "per_kernel":
        a = l1 / count
    else:
        raise ValueError(f"unknown normalization {normalize!r}")
    if not a > 0:
        raise DegenerateSetError("all kernel entries are zero; the binary set would collapse to {0}")
    return DiscreteSet.binary(a)


def project_kernel(c: np.ndarray, w_dup: np.ndarray, omega: DiscreteSet) -> np.ndarray:
    """Quantize ``w_dup * c`` elementwise onto ``omega``."""
    c = np.asarray(c)
    w_dup = np.asarray(w_dup)
    if c.shape != w_dup.shape:
        raise ShapeError(f"kernel {c.shape} and duplicated projection {w_dup.shape} differ")
    return project(w_dup * c, omega, dtype=c.dtype)


def in_set(x: np.ndarray, omega: DiscreteSet) -> np.ndarray:
    return np.isin(x, np.asarray(omega.values, dtype=np.asarray(x).dtype))


def band_fraction(c: np.ndarray, omega: DiscreteSet, tol: float = 0.25) -> float:
    """Fraction of entries within ``tol * a`` of a member of a binary set."""
    a = omega.scale
    dist = np.min(np.abs(np.asarray(c, dtype=np.float64)[..., None] - np.array([-a, a])), axis=-1)
    return float(np.mean(dist <= tol * a))


def midpoint_distance(x: np.ndarray, omega: DiscreteSet) -> np.ndarray:
    """Distance of each entry to the nearest projection decision boundary."""
    vals = np.asarray(omega.values, dtype=np.float64)
    mids = (vals[:-1] + vals[1:]) / 2
    return np.min(np.abs(np.asarray(x, dtype=np.float64)[..., None] - mids), axis=-1)

"""Kernel functions and a per-dataset Gram matrix cache."""

from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import NumericError, ValidationError

__all__ = [
    "Linear",
    "Polynomial",
    "Rbf",
    "Precomputed",
    "Kernel",
    "kernel_matrix",
    "gram_matrix",
    "parse_kernel",
    "kernel_descriptor",
]


@dataclass(frozen=True)
class Linear:
    def __call__(self, A, B):
        return np.atleast_2d(A) @ np.atleast_2d(B).T


@dataclass(frozen=True)
class Polynomial:
    """``(scale * <a, b>) ** degree``; the quadratic kernel is scale=0.5, degree=2."""

    scale: float = 1.0
    degree: int = 2

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValidationError("polynomial degree must be a positive integer")

    def __call__(self, A, B):
        return (self.scale * (np.atleast_2d(A) @ np.atleast_2d(B).T)) ** int(self.degree)


@dataclass(frozen=True)
class Rbf:
    """``exp(-||a - b||^2 / (2 width^2))``."""

    width: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValidationError("RBF width must be positive")

    def __call__(self, A, B):
        A, B = np.atleast_2d(A), np.atleast_2d(B)
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.width**2))


@dataclass(frozen=True, eq=False)
class Precomputed:
    gram: np.ndarray

    def __post_init__(self):
        G = np.array(self.gram, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValidationError("precomputed Gram matrix must be square")
        if not np.all(np.isfinite(G)):
            raise NumericError("precomputed Gram matrix has non-finite entries")
        if np.max(np.abs(G - G.T), initial=0.0) > 1e-9:
            raise ValidationError("precomputed Gram matrix must be symmetric")
        G.setflags(write=False)
        object.__setattr__(self, "gram", G)

    def __call__(self, A, B):
        raise ValidationError("a precomputed kernel can only be evaluated on dataset indices")


Kernel = Union[Linear, Polynomial, Rbf, Precomputed]


def kernel_descriptor(kernel: Kernel) -> str:
    if isinstance(kernel, Linear):
        return "linear"
    if isinstance(kernel, Polynomial):
        return f"poly:{kernel.scale!r}:{int(kernel.degree)}"
    if isinstance(kernel, Rbf):
        return f"rbf:{kernel.width!r}"
    if isinstance(kernel, Precomputed):
        return "precomputed"
    raise ValidationError(f"unknown kernel {kernel!r}")


def parse_kernel(text: str) -> Kernel:
    """Inverse of :func:`kernel_descriptor` (``precomputed`` excluded)."""
    parts = text.strip().lower().split(":")
    try:
        if parts[0] == "linear" and len(parts) == 1:
            return Linear()
        if parts[0] in ("poly", "polynomial") and len(parts) == 3:
            return Polynomial(float(parts[1]), int(parts[2]))
        if parts[0] == "quadratic" and len(parts) == 1:
            return Polynomial(0.5, 2)
        if parts[0] == "rbf" and len(parts) == 2:
            return Rbf(float(parts[1]))
    except ValueError:
        pass
    raise ValidationError(
        f"bad kernel {text!r}; use linear, quadratic, poly:<scale>:<degree> or rbf:<width>"
    )


def kernel_matrix(kernel: Kernel, A, B) -> np.ndarray:
    K = np.asarray(kernel(np.asarray(A, float), np.asarray(B, float)), dtype=float)
    if not np.all(np.isfinite(K)):
        raise NumericError("kernel evaluation produced non-finite values")
    return K


_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()
_lock = threading.Lock()


def gram_matrix(ds, kernel: Kernel) -> np.ndarray:
    """Full Gram matrix of ``ds`` under ``kernel``, computed once and cached."""
    if isinstance(kernel, Precomputed):
        if kernel.gram.shape[0] != len(ds):
            raise ValidationError(
                f"precomputed Gram is {kernel.gram.shape[0]}x{kernel.gram.shape[0]}, dataset has {len(ds)} samples"
            )
        return kernel.gram
    key = kernel_descriptor(kernel)
    with _lock:
        hit = _cache.get(ds, {}).get(key)
    if hit is not None:
        return hit
    if not np.all(np.isfinite(ds.features)):
        raise NumericError("dataset has non-finite features")
    K = kernel_matrix(kernel, ds.features, ds.features)
    K = 0.5 * (K + K.T)
    K.setflags(write=False)
    with _lock:
        _cache.setdefault(ds, {})[key] = K
    return K

"""Differentiable geometric losses shared by the heads, VPC, and trainer.

These mirror the numpy kernels in :mod:`pointadapt.geometry` but run on
the tape so gradients reach the network. Squared distances come from the
|a|^2 + |b|^2 - 2ab expansion and are clamped at zero against negative
round-off; values agree with the geometry module to ~1e-12.
"""

from __future__ import annotations

import numpy as np

from pointadapt import autodiff as ad
from pointadapt.errors import InvalidInputError


def pairwise_sqdist(a, b):
    """(B, n, 3) x (B, m, 3) -> (B, n, m) squared distances, clamped >= 0."""
    a = ad.as_tensor(a)
    b = ad.as_tensor(b)
    sq_a = ad.sum_(ad.mul(a, a), axis=-1, keepdims=True)          # (B, n, 1)
    sq_b = ad.sum_(ad.mul(b, b), axis=-1, keepdims=True)          # (B, m, 1)
    cross = ad.matmul(a, ad.swap_last(b))                          # (B, n, m)
    d = ad.add(ad.sub(sq_a, ad.mul(cross, 2.0)), ad.swap_last(sq_b))
    return ad.clip(d, 0.0, None)


def chamfer_squared(a, b):
    """Per-sample symmetric squared Chamfer distance, shape (B,).

    Same convention as :func:`pointadapt.geometry.chamfer_distance`:
    per-point means within each direction, directions summed.
    """
    a = ad.as_tensor(a)
    b = ad.as_tensor(b)
    if a.ndim != 3 or b.ndim != 3:
        raise InvalidInputError("chamfer_squared expects (B, n, 3) tensors")
    d = pairwise_sqdist(a, b)
    return ad.add(
        ad.mean_(ad.min_(d, axis=2), axis=1), ad.mean_(ad.min_(d, axis=1), axis=1)
    )


def unidirectional_chamfer_squared(partial, pred):
    """Per-sample mean squared nearest-neighbor distance, partial -> pred."""
    d = pairwise_sqdist(partial, pred)
    return ad.mean_(ad.min_(d, axis=2), axis=1)

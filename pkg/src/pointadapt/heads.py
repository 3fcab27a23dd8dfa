"""Decoder outputs -> point clouds.

A shared offset head turns each decoder layer's dynamic slots into a
per-layer prediction (coarse points plus learned offsets), keeping slot
correspondence across layers so the layer ensemble can be voted point by
point. The final dense cloud comes from one of two interchangeable
refiners: a fold-based upsampler (fixed 2D grid deformed per token) or a
split-based one (each parent point spawns children from learned
displacements). Both take the final layer's tokens and the coarse cloud
and return N * up_factor points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pointadapt import autodiff as ad
from pointadapt.diffops import chamfer_squared
from pointadapt.errors import InvalidInputError
from pointadapt.geometry import farthest_point_sample, lexicographic_min_index
from pointadapt.layers import LayerNorm, Mlp, scoped


@dataclass
class PredictionSet:
    """All clouds produced for one batch, in slot correspondence."""

    coarse: ad.Tensor          # (B, N, 3)
    per_layer: list            # L tensors, each (B, N, 3)
    voted_mean: ad.Tensor      # (B, N, 3)
    final: ad.Tensor           # (B, N * up_factor, 3)

    @property
    def n_layers(self):
        return len(self.per_layer)


class PerLayerPointHead:
    """Shared map from dynamic tokens to 3D offsets around the coarse points.

    Sharing one head across layers keeps the per-layer predictions in a
    common output space, which the layer-voting mean relies on.
    """

    def __init__(self, dim, rng):
        self.norm = LayerNorm(dim)
        self.offset = Mlp([dim, dim // 2, 3], rng)

    def __call__(self, dec, coarse):
        return [
            ad.add(coarse, self.offset(self.norm(layer_tokens)))
            for layer_tokens in dec.dynamic_out
        ]

    def params(self):
        return {**scoped("norm", self.norm.params()), **scoped("offset", self.offset.params())}


def _fold_grid(up_factor):
    """First up_factor points of a near-square lattice in [-0.5, 0.5]^2."""
    side = int(np.ceil(np.sqrt(up_factor)))
    lin = np.linspace(-0.5, 0.5, side) if side > 1 else np.zeros(1)
    gx, gy = np.meshgrid(lin, lin, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)[:up_factor]


class FoldRefiner:
    """Deform a fixed 2D grid around each coarse point, conditioned on its token."""

    def __init__(self, dim, up_factor, rng):
        if up_factor < 1:
            raise InvalidInputError(f"up_factor must be >= 1, got {up_factor}")
        self.up_factor = up_factor
        self.grid = _fold_grid(up_factor)
        self.norm = LayerNorm(dim)
        self.fold = Mlp([dim + 2, dim, dim // 2, 3], rng)

    def __call__(self, tokens, coarse):
        b, n, d = tokens.shape
        u = self.up_factor
        t = ad.mul(
            ad.reshape(self.norm(tokens), (b, n, 1, d)), np.ones((1, 1, u, 1))
        )
        grid = np.broadcast_to(self.grid.reshape(1, 1, u, 2), (b, n, u, 2))
        offsets = self.fold(ad.concat([t, ad.Tensor(grid)], axis=-1))
        dense = ad.add(ad.reshape(coarse, (b, n, 1, 3)), offsets)
        return ad.reshape(dense, (b, n * u, 3))

    def params(self):
        return {**scoped("norm", self.norm.params()), **scoped("fold", self.fold.params())}


class SplitRefiner:
    """Snowflake-style splitting: each parent spawns up_factor children.

    Child displacements are conditioned on the parent token, the parent
    coordinate, a max-pooled context over all tokens, and a learned
    per-child embedding that differentiates the children.
    """

    def __init__(self, dim, up_factor, rng, child_dim=8):
        if up_factor < 1:
            raise InvalidInputError(f"up_factor must be >= 1, got {up_factor}")
        self.up_factor = up_factor
        self.child_dim = child_dim
        self.child_embed = ad.parameter(rng.normal(0.0, 0.1, size=(up_factor, child_dim)))
        self.norm = LayerNorm(dim)
        self.split = Mlp([dim + 3 + dim + child_dim, dim, dim // 2, 3], rng)

    def __call__(self, tokens, coarse):
        b, n, d = tokens.shape
        u = self.up_factor
        normed = self.norm(tokens)
        context = ad.max_(normed, axis=1)                            # (B, d)
        tile = np.ones((1, 1, u, 1))
        t = ad.mul(ad.reshape(normed, (b, n, 1, d)), tile)
        parent = ad.mul(ad.reshape(coarse, (b, n, 1, 3)), tile)
        ctx = ad.mul(ad.reshape(context, (b, 1, 1, d)), np.ones((1, n, u, 1)))
        kids = ad.mul(
            ad.reshape(self.child_embed, (1, 1, u, self.child_dim)),
            np.ones((b, n, 1, 1)),
        )
        disp = self.split(ad.concat([t, parent, ctx, kids], axis=-1))
        dense = ad.add(parent, disp)
        return ad.reshape(dense, (b, n * u, 3))

    def params(self):
        return {
            "child_embed": self.child_embed,
            **scoped("norm", self.norm.params()),
            **scoped("split", self.split.params()),
        }


def make_refiner(kind, dim, up_factor, rng):
    if kind == "fold":
        return FoldRefiner(dim, up_factor, rng)
    if kind == "spd":
        return SplitRefiner(dim, up_factor, rng)
    raise InvalidInputError(f"unknown refiner {kind!r} (use 'fold' or 'spd')")


def completion_loss(pred, gt_batch):
    """Supervised objective: CD(coarse, FPS(gt, N)) + CD(final, gt), per-sample mean.

    ``gt_batch`` is a (B, m, 3) array of ground-truth completes.
    """
    gt = np.asarray(gt_batch, dtype=np.float64)
    if gt.ndim != 3:
        raise InvalidInputError("gt_batch must be (B, m, 3)")
    n = pred.coarse.shape[1]
    gt_coarse = np.stack(
        [g[farthest_point_sample(g, n, lexicographic_min_index(g))] for g in gt]
    )
    loss = ad.add(
        chamfer_squared(pred.coarse, ad.Tensor(gt_coarse)),
        chamfer_squared(pred.final, ad.Tensor(gt)),
    )
    return ad.mean_(loss)

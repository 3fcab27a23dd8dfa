"""Partial cloud -> point-proxy token sequence.

Centers are chosen by farthest-point sampling seeded at the
lexicographically smallest coordinate (so the result is a function of the
point set, not of input order). Features come from two edge-convolution
stages: stage one builds a local feature per input point from its
k-neighborhood, stage two pools edge features of those stage-one features
at each center. Positions are a learned map of the raw center coordinates
only, which keeps them domain-agnostic.

With ``relative_only`` (the default) stage one sees only neighbor-minus-
point offsets, making the tokens exactly invariant to rigid translation;
absolute placement enters the sequence through the positions instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pointadapt import autodiff as ad
from pointadapt.errors import InvalidInputError
from pointadapt.geometry import farthest_point_sample, knn_indices, lexicographic_min_index
from pointadapt.layers import Mlp, scoped


@dataclass
class TokenSequence:
    """Per-proxy tokens and positions (B, N, d) plus raw centers (B, N, 3)."""

    tokens: ad.Tensor
    positions: ad.Tensor
    centers: np.ndarray

    def __post_init__(self):
        if self.tokens.shape != self.positions.shape:
            raise InvalidInputError(
                f"tokens {self.tokens.shape} and positions {self.positions.shape} differ"
            )
        if not np.isfinite(self.tokens.value).all() or not np.isfinite(
            self.positions.value
        ).all():
            raise InvalidInputError("token sequence contains non-finite entries")

    @property
    def n_tokens(self):
        return self.tokens.shape[1]


def _tile_like(x, k):
    """Broadcast (B, n, 1, c) -> (B, n, k, c) through the tape."""
    return ad.mul(x, np.ones((1, 1, k, 1)))


class ProxyExtractor:
    """Edge-conv feature extractor producing the encoder token sequence."""

    def __init__(self, n_proxies, embed_dim, knn_k, rng, relative_only=True):
        self.n_proxies = n_proxies
        self.embed_dim = embed_dim
        self.knn_k = knn_k
        self.relative_only = relative_only
        d1 = max(embed_dim // 2, 4)
        self.stage1_dim = d1
        in1 = 3 if relative_only else 6
        self.edge1 = Mlp([in1, d1, d1], rng)
        self.edge2 = Mlp([2 * d1, embed_dim, embed_dim], rng)
        self.pos_map = Mlp([3, embed_dim, embed_dim], rng)

    def params(self):
        return {
            **scoped("edge1", self.edge1.params()),
            **scoped("edge2", self.edge2.params()),
            **scoped("pos", self.pos_map.params()),
        }

    def __call__(self, partial_batch):
        """(B, n, 3) array -> TokenSequence with n_proxies tokens."""
        pts = np.asarray(partial_batch, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise InvalidInputError(f"expected (B, n, 3), got {pts.shape}")
        b, n, _ = pts.shape
        if n < self.n_proxies:
            raise InvalidInputError(
                f"cloud has {n} points, fewer than n_proxies={self.n_proxies}"
            )
        if self.knn_k > n:
            raise InvalidInputError(f"knn_k={self.knn_k} exceeds cloud size {n}")

        neighbor_idx = np.stack([knn_indices(p, p, self.knn_k) for p in pts])
        center_idx = np.stack(
            [
                farthest_point_sample(p, self.n_proxies, lexicographic_min_index(p))
                for p in pts
            ]
        )
        center_neighbor_idx = np.stack(
            [knn_indices(p, p[ci], self.knn_k) for p, ci in zip(pts, center_idx)]
        )
        coords = ad.Tensor(pts)

        # stage 1: per-point feature from its neighborhood
        neighbors = ad.take_pairs(coords, neighbor_idx)          # (B, n, k, 3)
        anchors = ad.reshape(coords, (b, n, 1, 3))
        rel = ad.sub(neighbors, anchors)
        if self.relative_only:
            edge_in = rel
        else:
            edge_in = ad.concat([_tile_like(anchors, self.knn_k), rel], axis=-1)
        point_feat = ad.max_(self.edge1(edge_in), axis=2)        # (B, n, d1)

        # stage 2: pooled edge features of stage-1 features at each center
        center_feat = ad.take_pairs(point_feat, center_idx)      # (B, N, d1)
        neigh_feat = ad.take_pairs(point_feat, center_neighbor_idx)  # (B, N, k, d1)
        center_exp = ad.reshape(center_feat, (b, self.n_proxies, 1, self.stage1_dim))
        edge2_in = ad.concat(
            [_tile_like(center_exp, self.knn_k), ad.sub(neigh_feat, center_exp)],
            axis=-1,
        )
        tokens = ad.max_(self.edge2(edge2_in), axis=2)           # (B, N, d)

        centers = np.stack([p[ci] for p, ci in zip(pts, center_idx)])
        positions = self.pos_map(ad.Tensor(centers))
        return TokenSequence(tokens=tokens, positions=positions, centers=centers)

"""Transformer encoder-decoder over proxy tokens with domain slots.

Slot 0 of both the encoder and the decoder sequence is a single learned
domain token (one per model, shared across the batch) that attends and is
attended to without masking, so it can aggregate domain-level context for
the adversarial discriminators. Slots 1..N carry the point proxies
(encoder) / dynamic queries (decoder); only those feed the completion
heads.

Blocks are pre-norm multi-head self-attention with GELU feed-forward; the
decoder adds cross-attention to the encoder's token outputs and records
its dynamic slots after every layer so the prediction heads can treat the
layers as an ensemble of experts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pointadapt import autodiff as ad
from pointadapt.errors import ConfigError
from pointadapt.layers import (
    FeedForward,
    LayerNorm,
    Linear,
    Mlp,
    MultiHeadAttention,
    scoped,
)


class DomainTokens:
    """The learned encoder domain proxy and decoder domain query (+positions)."""

    def __init__(self, dim, rng):
        self.dim = dim
        scale = 0.02
        self.enc_token = ad.parameter(rng.normal(0.0, scale, size=dim))
        self.enc_pos = ad.parameter(rng.normal(0.0, scale, size=dim))
        self.dec_token = ad.parameter(rng.normal(0.0, scale, size=dim))
        self.dec_pos = ad.parameter(rng.normal(0.0, scale, size=dim))

    def params(self):
        return {
            "enc_token": self.enc_token,
            "enc_pos": self.enc_pos,
            "dec_token": self.dec_token,
            "dec_pos": self.dec_pos,
        }


def _prepend_slot(vectors, token, position, positions):
    """concat([slot0; vectors]) + concat([slot0_pos; positions])."""
    b = vectors.shape[0]
    d = vectors.shape[2]
    if token.shape != (d,):
        raise ConfigError(
            f"domain token dim {token.shape} does not match sequence dim {d}"
        )
    ones = np.ones((b, 1, 1))
    slot = ad.mul(ad.reshape(token, (1, 1, d)), ones)
    slot_pos = ad.mul(ad.reshape(position, (1, 1, d)), ones)
    content = ad.concat([slot, vectors], axis=1)
    pos = ad.concat([slot_pos, positions], axis=1)
    return ad.add(content, pos)


def build_encoder_input(seq, domain_tokens):
    """Token sequence + domain proxy -> (B, N+1, d) encoder input."""
    return _prepend_slot(
        seq.tokens, domain_tokens.enc_token, domain_tokens.enc_pos, seq.positions
    )


def build_decoder_input(queries, domain_tokens, pos_prime):
    """Dynamic queries + domain query -> (B, N+1, d) decoder input."""
    return _prepend_slot(
        queries, domain_tokens.dec_token, domain_tokens.dec_pos, pos_prime
    )


@dataclass
class EncoderOutput:
    proxy_out: ad.Tensor      # slot 0, (B, d)
    token_out: ad.Tensor      # slots 1..N, (B, N, d)
    global_feature: ad.Tensor  # pooled over tokens, (B, d)
    pos_prime: ad.Tensor      # decoder positions derived from token_out, (B, N, d)


@dataclass
class DecoderOutput:
    query_out: ad.Tensor       # slot 0 after the final layer, (B, d)
    dynamic_out: list = field(default_factory=list)  # per layer, (B, N, d)


class _Block:
    """Pre-norm self-attention (+ optional cross-attention) + feed-forward."""

    def __init__(self, dim, heads, ffn_dim, rng, cross=False):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.cross = None
        if cross:
            self.norm_cross = LayerNorm(dim)
            self.cross = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, rng)

    def __call__(self, x, memory=None):
        h = self.norm1(x)
        x = ad.add(x, self.attn(h, h))
        if self.cross is not None:
            x = ad.add(x, self.cross(self.norm_cross(x), memory))
        x = ad.add(x, self.ffn(self.norm2(x)))
        return x

    def params(self):
        out = {
            **scoped("norm1", self.norm1.params()),
            **scoped("attn", self.attn.params()),
            **scoped("norm2", self.norm2.params()),
            **scoped("ffn", self.ffn.params()),
        }
        if self.cross is not None:
            out.update(scoped("norm_cross", self.norm_cross.params()))
            out.update(scoped("cross", self.cross.params()))
        return out


class TransformerEncoder:
    def __init__(self, dim, layers, heads, ffn_dim, rng, pool="max"):
        if pool not in ("max", "mean"):
            raise ConfigError(f"pool must be max or mean, got {pool!r}")
        self.blocks = [_Block(dim, heads, ffn_dim, rng) for _ in range(layers)]
        self.final_norm = LayerNorm(dim)
        self.pos_prime_map = Linear(dim, dim, rng)
        self.pool = pool

    def __call__(self, x):
        """(B, N+1, d) -> EncoderOutput; sequence length is preserved."""
        for block in self.blocks:
            x = block(x)
        x = self.final_norm(x)
        proxy_out = x[:, 0, :]
        token_out = x[:, 1:, :]
        if self.pool == "max":
            pooled = ad.max_(token_out, axis=1)
        else:
            pooled = ad.mean_(token_out, axis=1)
        pos_prime = self.pos_prime_map(token_out)
        return EncoderOutput(proxy_out, token_out, pooled, pos_prime)

    def params(self):
        out = {}
        for i, block in enumerate(self.blocks):
            out.update(scoped(f"block{i}", block.params()))
        out.update(scoped("final_norm", self.final_norm.params()))
        out.update(scoped("pos_prime", self.pos_prime_map.params()))
        return out


class QueryGenerator:
    """Global feature -> coarse completion points and one query per point."""

    def __init__(self, dim, n_queries, rng):
        self.n_queries = n_queries
        self.dim = dim
        self.coarse_map = Mlp([dim, dim, n_queries * 3], rng)
        self.query_map = Mlp([3 + dim, dim, dim], rng)

    def __call__(self, enc):
        b = enc.global_feature.shape[0]
        coarse = ad.reshape(self.coarse_map(enc.global_feature), (b, self.n_queries, 3))
        tiled = ad.mul(
            ad.reshape(enc.global_feature, (b, 1, self.dim)),
            np.ones((1, self.n_queries, 1)),
        )
        queries = self.query_map(ad.concat([coarse, tiled], axis=-1))
        return coarse, queries

    def params(self):
        return {
            **scoped("coarse", self.coarse_map.params()),
            **scoped("query", self.query_map.params()),
        }


class TransformerDecoder:
    def __init__(self, dim, layers, heads, ffn_dim, rng):
        self.blocks = [
            _Block(dim, heads, ffn_dim, rng, cross=True) for _ in range(layers)
        ]
        self.final_norm = LayerNorm(dim)

    @property
    def n_layers(self):
        return len(self.blocks)

    def __call__(self, x, enc):
        """(B, N+1, d) + encoder output -> DecoderOutput.

        ``dynamic_out[l]`` is the raw residual stream of slots 1..N after
        layer ``l``; slot 0 is reported after the final norm.
        """
        dynamic = []
        for block in self.blocks:
            x = block(x, memory=enc.token_out)
            dynamic.append(x[:, 1:, :])
        final = self.final_norm(x)
        return DecoderOutput(query_out=final[:, 0, :], dynamic_out=dynamic)

    def params(self):
        out = {}
        for i, block in enumerate(self.blocks):
            out.update(scoped(f"block{i}", block.params()))
        out.update(scoped("final_norm", self.final_norm.params()))
        return out

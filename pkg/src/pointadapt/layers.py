"""Learned building blocks on top of the autodiff tape.

Each layer owns its parameter tensors and exposes ``params()`` returning a
flat name -> Tensor dict; containers prefix child names with dots. There
is no framework beyond that.
"""

from __future__ import annotations

import numpy as np

from pointadapt import autodiff as ad


def scoped(prefix, params):
    return {f"{prefix}.{k}": v for k, v in params.items()}


def xavier_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    def __init__(self, d_in, d_out, rng, bias=True):
        self.w = ad.parameter(xavier_uniform(rng, d_in, d_out))
        self.b = ad.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        out = ad.matmul(x, self.w)
        return out if self.b is None else ad.add(out, self.b)

    def params(self):
        out = {"w": self.w}
        if self.b is not None:
            out["b"] = self.b
        return out


class Mlp:
    """Stacked Linear layers with GELU between them (none after the last)."""

    def __init__(self, dims, rng, bias=True):
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, bias=bias) for i in range(len(dims) - 1)
        ]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.gelu(x)
        return x

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(scoped(f"l{i}", layer.params()))
        return out


class LayerNorm:
    def __init__(self, dim, eps=1e-5):
        self.gamma = ad.parameter(np.ones(dim))
        self.beta = ad.parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        mu = ad.mean_(x, axis=-1, keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.mean_(ad.mul(centered, centered), axis=-1, keepdims=True)
        normed = ad.div(centered, ad.sqrt(ad.add(var, self.eps)))
        return ad.add(ad.mul(normed, self.gamma), self.beta)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}


class MultiHeadAttention:
    """Standard scaled dot-product attention over (B, T, d) sequences."""

    def __init__(self, dim, heads, rng):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def _split(self, x, b, t):
        # (B, T, d) -> (B, H, T, dh)
        return ad.transpose(
            ad.reshape(x, (b, t, self.heads, self.head_dim)), (0, 2, 1, 3)
        )

    def attention_weights(self, queries, keys_values):
        b, tq = queries.shape[0], queries.shape[1]
        tk = keys_values.shape[1]
        q = self._split(self.wq(queries), b, tq)
        k = self._split(self.wk(keys_values), b, tk)
        scores = ad.div(ad.matmul(q, ad.swap_last(k)), np.sqrt(self.head_dim))
        return ad.softmax(scores, axis=-1)

    def __call__(self, queries, keys_values):
        b, tq = queries.shape[0], queries.shape[1]
        tk = keys_values.shape[1]
        q = self._split(self.wq(queries), b, tq)
        k = self._split(self.wk(keys_values), b, tk)
        v = self._split(self.wv(keys_values), b, tk)
        scores = ad.div(ad.matmul(q, ad.swap_last(k)), np.sqrt(self.head_dim))
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(attn, v)  # (B, H, Tq, dh)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, tq, self.dim))
        return self.wo(merged)

    def params(self):
        out = {}
        for name, sub in (("q", self.wq), ("k", self.wk), ("v", self.wv), ("o", self.wo)):
            out.update(scoped(name, sub.params()))
        return out


class FeedForward:
    def __init__(self, dim, hidden, rng):
        self.up = Linear(dim, hidden, rng)
        self.down = Linear(hidden, dim, rng)

    def __call__(self, x):
        return self.down(ad.gelu(self.up(x)))

    def params(self):
        return {**scoped("up", self.up.params()), **scoped("down", self.down.params())}

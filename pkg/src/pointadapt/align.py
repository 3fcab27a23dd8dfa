"""Adversarial alignment: gradient reversal, discriminators, domain losses.

Four discriminators share one architecture and differ only in what they
read: the encoder/decoder domain slots (global alignment) or the
encoder/decoder token sequences (token-wise alignment). All four losses
are standard binary cross-entropy against the domain label; the min-max
comes from passing features through gradient reversal before the
discriminator, so a single optimizer trains both sides.
"""

from __future__ import annotations

import numpy as np

from pointadapt import autodiff as ad
from pointadapt.autodiff import grad_reverse
from pointadapt.layers import Mlp, scoped

DISCRIMINATOR_IDS = ("enc_q", "dec_q", "enc_k", "dec_k")

_CLAMP = 1e-7


class Discriminator:
    """Small learned map from a d-vector to a probability in (0, 1).

    The output is clamped 1e-7 away from both boundaries so the BCE log
    terms stay finite no matter how confident the map becomes.
    """

    def __init__(self, dim, rng, identity="enc_q"):
        if identity not in DISCRIMINATOR_IDS:
            raise ValueError(f"identity must be one of {DISCRIMINATOR_IDS}")
        self.identity = identity
        self.net = Mlp([dim, dim // 2, max(dim // 4, 2), 1], rng)

    def __call__(self, x):
        logits = self.net(x)
        return ad.clip(ad.sigmoid(logits), _CLAMP, 1.0 - _CLAMP)

    def params(self):
        return scoped(self.identity, self.net.params())


def _bce(prob, lam):
    """-[lam log p + (1 - lam) log(1 - p)], elementwise."""
    lam = np.asarray(lam, dtype=np.float64)
    pos = ad.mul(ad.log(prob), lam)
    neg = ad.mul(ad.log(ad.sub(1.0, prob)), 1.0 - lam)
    return ad.mul(ad.add(pos, neg), -1.0)


def loss_domain_token(disc, tokens, lam):
    """BCE of a (B, d) batch of domain-slot vectors against labels (B,)."""
    prob = ad.reshape(disc(tokens), (tokens.shape[0],))
    return ad.mean_(_bce(prob, lam))


def loss_token_wise(disc, tokens, lam):
    """Token-averaged BCE of a (B, N, d) sequence against labels (B,)."""
    b, n, _ = tokens.shape
    prob = ad.reshape(disc(tokens), (b, n))
    lam = np.asarray(lam, dtype=np.float64).reshape(b, 1)
    return ad.mean_(_bce(prob, lam))


def eta_schedule(step, total_steps, eta_max, warmup_frac):
    """Linear gradient-reversal warm-up from 0 to eta_max, then constant."""
    if eta_max < 0:
        raise ValueError("eta_max must be >= 0")
    warmup = max(int(total_steps * warmup_frac), 1)
    return eta_max * min(step / warmup, 1.0)

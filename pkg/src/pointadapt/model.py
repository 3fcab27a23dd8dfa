"""The completion model: backbone + encoder-decoder + heads in one object.

One forward pass takes a (B, n, 3) batch of partial clouds and produces
everything downstream consumers need: the proxy token sequence, encoder
outputs (for alignment and probing), decoder outputs (for alignment), and
the full :class:`~pointadapt.heads.PredictionSet` (coarse cloud, per-layer
predictions, their vote, final dense cloud).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from pointadapt import autodiff as ad
from pointadapt.backbone import ProxyExtractor
from pointadapt.errors import ConfigError
from pointadapt.heads import PerLayerPointHead, PredictionSet, make_refiner
from pointadapt.layers import scoped
from pointadapt.seq2seq import (
    DomainTokens,
    QueryGenerator,
    TransformerDecoder,
    TransformerEncoder,
    build_decoder_input,
    build_encoder_input,
)
from pointadapt.vpc import vote_mean


@dataclass
class ModelConfig:
    """Architecture knobs; defaults are the desk-scale configuration."""

    n_proxies: int = 64
    embed_dim: int = 128
    knn_k: int = 8
    enc_layers: int = 4
    dec_layers: int = 4
    heads: int = 4
    ffn_dim: int = 256
    head: str = "spd"          # 'fold' | 'spd'
    up_factor: int = 8
    n_input: int = 256         # partials are resampled to this many points
    pool: str = "max"
    relative_features: bool = True

    def __post_init__(self):
        if self.head not in ("fold", "spd"):
            raise ConfigError(f"head must be 'fold' or 'spd', got {self.head!r}")
        if self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")
        for key in ("n_proxies", "embed_dim", "knn_k", "enc_layers", "dec_layers",
                    "heads", "ffn_dim", "up_factor", "n_input"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")


@dataclass
class ModelOutput:
    token_seq: object          # backbone TokenSequence
    enc: object                # seq2seq EncoderOutput
    coarse: ad.Tensor
    queries: ad.Tensor
    dec: object                # seq2seq DecoderOutput
    pred: PredictionSet


class CompletionModel:
    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
        d = cfg.embed_dim
        self.backbone = ProxyExtractor(
            cfg.n_proxies, d, cfg.knn_k, rng, relative_only=cfg.relative_features
        )
        self.domain_tokens = DomainTokens(d, rng)
        self.encoder = TransformerEncoder(
            d, cfg.enc_layers, cfg.heads, cfg.ffn_dim, rng, pool=cfg.pool
        )
        self.query_gen = QueryGenerator(d, cfg.n_proxies, rng)
        self.decoder = TransformerDecoder(d, cfg.dec_layers, cfg.heads, cfg.ffn_dim, rng)
        self.point_head = PerLayerPointHead(d, rng)
        self.refiner = make_refiner(cfg.head, d, cfg.up_factor, rng)

    def forward(self, partial_batch):
        seq = self.backbone(partial_batch)
        enc = self.encoder(build_encoder_input(seq, self.domain_tokens))
        coarse, queries = self.query_gen(enc)
        dec = self.decoder(
            build_decoder_input(queries, self.domain_tokens, enc.pos_prime), enc
        )
        per_layer = self.point_head(dec, coarse)
        pred = PredictionSet(
            coarse=coarse,
            per_layer=per_layer,
            voted_mean=vote_mean(per_layer),
            final=self.refiner(dec.dynamic_out[-1], coarse),
        )
        return ModelOutput(seq, enc, coarse, queries, dec, pred)

    __call__ = forward

    def complete(self, partial_batch):
        """Inference-only forward; returns the final clouds as an array."""
        with ad.no_grad():
            return self.forward(partial_batch).pred.final.value

    def params(self):
        return {
            **scoped("backbone", self.backbone.params()),
            **scoped("domain", self.domain_tokens.params()),
            **scoped("encoder", self.encoder.params()),
            **scoped("querygen", self.query_gen.params()),
            **scoped("decoder", self.decoder.params()),
            **scoped("pointhead", self.point_head.params()),
            **scoped("refiner", self.refiner.params()),
        }

    def state_dict(self):
        return {name: p.value.copy() for name, p in self.params().items()}

    def load_state_dict(self, state):
        params = self.params()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ConfigError(
                f"state mismatch: missing {sorted(missing)[:4]}, extra {sorted(extra)[:4]}"
            )
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ConfigError(
                    f"shape mismatch for {name}: {arr.shape} vs {p.value.shape}"
                )
            p.value = arr.copy()

    def config_dict(self):
        return asdict(self.cfg)

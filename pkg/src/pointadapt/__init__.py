"""Domain-adaptive point cloud completion at desk scale.

A numpy library implementing transformer encoder-decoder completion with
adversarial sequence-feature alignment (domain-token and token-wise
discriminators behind gradient reversal), decoder-layer prediction voting
with consistency-gated pseudo-labels, a procedural two-domain benchmark,
and full training/evaluation tooling.
"""

from pointadapt import geometry
from pointadapt.errors import (
    ConfigError,
    InvalidInputError,
    NonFiniteLossError,
    ParseError,
)

__all__ = [
    "geometry",
    "ConfigError",
    "InvalidInputError",
    "NonFiniteLossError",
    "ParseError",
]

__version__ = "0.1.0"

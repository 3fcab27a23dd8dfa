"""Measure domain separability of encoder features with a linear probe.

A probe accuracy near 1.0 means source and target produce clearly
separated feature clouds; near 0.5 means they are indistinguishable.
This demo contrasts an untrained model on two artificial cases; the
ablation study (demo 05) applies the same probe to trained checkpoints.

Run with: python3 demos/04_domain_probe.py
"""

import tempfile
from pathlib import Path

import numpy as np

from pointadapt.benchmark import SampleSet
from pointadapt.evaluate import probe_alignment
from pointadapt.model import CompletionModel, ModelConfig


def sample_set(offset, n, seed, label):
    rng = np.random.default_rng(seed)
    return SampleSet(
        ids=[f"d{label}_{i}" for i in range(n)],
        categories=["box"] * n,
        partials=[rng.normal(size=(96, 3)) + offset for _ in range(n)],
        completes=None,
        domain_label=label,
    )


model = CompletionModel(
    ModelConfig(n_proxies=16, embed_dim=32, knn_k=6, enc_layers=2, dec_layers=2,
                heads=2, ffn_dim=64, up_factor=4, n_input=96,
                relative_features=False),
    seed=0,
)

# Case 1: both domains draw from the same distribution -> chance accuracy.
same = probe_alignment(
    model, sample_set(0.0, 32, seed=1, label=0), sample_set(0.0, 32, seed=2, label=1)
)
print(f"same distribution     -> probe accuracy {same.accuracy:.3f} (chance ~ 0.5)")

# Case 2: target features shifted far away -> trivially separable.
apart = probe_alignment(
    model, sample_set(0.0, 32, seed=1, label=0), sample_set(8.0, 32, seed=2, label=1)
)
print(f"separated distribution -> probe accuracy {apart.accuracy:.3f} (~1.0)")

# The report also carries a 2D principal-component projection of every
# feature, tagged by domain, as plain plot-ready data.
out = Path(tempfile.mkdtemp(prefix="probe_demo_")) / "probe.csv"
apart.to_csv(out)
print(f"\nprojection written to {out}; first lines:")
print("\n".join(out.read_text().splitlines()[:5]))

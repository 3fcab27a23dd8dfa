"""Voted prediction consistency: layer voting, the consistency loss, and
consistency-gated pseudo-labels for target samples.

Decoder layers act as an ensemble of experts. Their point-wise mean is
the voted prediction; the mean Chamfer distance between the vote and each
layer is both a training loss and a per-sample quality score. Scores
collected over a target epoch set a percentile threshold; target samples
scoring at or below it get their (detached) final prediction stored as a
pseudo complete cloud, refreshed on every later harvest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pointadapt import autodiff as ad
from pointadapt.diffops import chamfer_squared
from pointadapt.errors import ConfigError, InvalidInputError


def vote_mean(per_layer):
    """Point-wise arithmetic mean of L slot-corresponding clouds."""
    if len(per_layer) < 1:
        raise InvalidInputError("vote_mean requires at least one layer")
    tensors = [ad.as_tensor(t) for t in per_layer]
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise InvalidInputError(
                f"per-layer cardinality mismatch: {t.shape} vs {shape}"
            )
    return ad.mean_(ad.stack(tensors, axis=0), axis=0)


def consistency_scores(pred):
    """Per-sample consistency: mean over layers of CD(vote, layer), shape (B,)."""
    total = None
    for layer in pred.per_layer:
        cd = chamfer_squared(pred.voted_mean, layer)
        total = cd if total is None else ad.add(total, cd)
    return ad.mul(total, 1.0 / pred.n_layers)


def consistency_loss(pred):
    """Batch-mean consistency score (zero iff all layers agree exactly)."""
    return ad.mean_(consistency_scores(pred))


def update_threshold(scores, percentile=30.0):
    """Percentile of the recent score window; lower scores are better."""
    scores = np.asarray(list(scores), dtype=np.float64)
    if scores.size == 0:
        raise ConfigError("cannot update threshold from an empty score window")
    if not 0.0 <= percentile <= 100.0:
        raise ConfigError(f"percentile must be in [0, 100], got {percentile}")
    return float(np.percentile(scores, percentile))


@dataclass
class PseudoLabelEntry:
    cloud: np.ndarray
    score: float
    epoch: int


@dataclass
class PseudoLabelStore:
    """Map target-sample id -> newest qualifying prediction."""

    entries: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, sample_id):
        return sample_id in self.entries

    def get(self, sample_id):
        return self.entries.get(sample_id)


def harvest_pseudo_labels(sample_ids, scores, finals, tau, store, epoch=0):
    """Store detached final clouds for samples scoring <= tau; returns count.

    Re-harvested ids overwrite their previous entry, so the store always
    holds the newest qualifying prediction per sample.
    """
    finals = np.asarray(finals, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    harvested = 0
    for sample_id, score, cloud in zip(sample_ids, scores, finals):
        if score <= tau:
            store.entries[sample_id] = PseudoLabelEntry(
                cloud=cloud.copy(), score=float(score), epoch=epoch
            )
            harvested += 1
    return harvested


def pseudo_label_loss(sample_ids, finals, store):
    """Mean CD between predictions and stored pseudo labels.

    Samples absent from the store contribute nothing; with no stored
    sample in the batch the loss is a constant zero.
    """
    present = [i for i, sid in enumerate(sample_ids) if sid in store]
    if not present:
        return ad.Tensor(0.0)
    pred = ad.take_rows(finals, np.asarray(present))
    labels = np.stack([store.get(sample_ids[i]).cloud for i in present])
    return ad.mean_(chamfer_squared(pred, ad.Tensor(labels)))

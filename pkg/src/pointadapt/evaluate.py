"""Evaluation and reporting: per-category metric tables, domain probe, completion.

The metric table has one row per category plus an unweighted Avg row;
values carry the conventional scales (CD and UCD x 1e4, UHD x 1e2). The
domain probe measures how separable source and target encoder features
are: a linear classifier fit on a fixed seeded split, reported by held-out
accuracy, plus a 2D principal-component projection emitted as plain data
for external plotting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import LogisticRegression

from pointadapt import autodiff as ad, dataio
from pointadapt.errors import InvalidInputError
from pointadapt.geometry import (
    CD_SCALE,
    UCD_SCALE,
    UHD_SCALE,
    chamfer_distance,
    resample,
    unidirectional_chamfer,
    unidirectional_hausdorff,
)
from pointadapt.trainer import prepare_inputs

ALL_METRICS = ("cd", "ucd", "uhd")

_SCALES = {"cd": CD_SCALE, "ucd": UCD_SCALE, "uhd": UHD_SCALE}


@dataclass
class MetricTable:
    """Scaled per-category metric means plus the Avg row."""

    metrics: tuple
    rows: dict          # category -> {metric: scaled value}
    avg: dict           # metric -> scaled value

    def to_csv(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("category," + ",".join(self.metrics) + "\n")
            for category in self.rows:
                cells = ",".join(f"{self.rows[category][m]:.6f}" for m in self.metrics)
                fh.write(f"{category},{cells}\n")
            fh.write("Avg," + ",".join(f"{self.avg[m]:.6f}" for m in self.metrics) + "\n")

    def format_text(self):
        names = {"cd": "CD(x1e4)", "ucd": "UCD(x1e4)", "uhd": "UHD(x1e2)"}
        width = max(len(c) for c in list(self.rows) + ["category", "Avg"]) + 2
        header = "category".ljust(width) + "".join(
            names[m].rjust(12) for m in self.metrics
        )
        lines = [header, "-" * len(header)]
        for category in self.rows:
            lines.append(
                category.ljust(width)
                + "".join(f"{self.rows[category][m]:12.4f}" for m in self.metrics)
            )
        lines.append(
            "Avg".ljust(width) + "".join(f"{self.avg[m]:12.4f}" for m in self.metrics)
        )
        return "\n".join(lines)


def evaluate(model, eval_set, metrics=ALL_METRICS, batch=16):
    """Complete every partial in ``eval_set`` and aggregate metrics per category.

    UCD/UHD run in the partial -> prediction direction against the
    original (un-resampled) partials.
    """
    metrics = tuple(m.lower() for m in metrics)
    for m in metrics:
        if m not in ALL_METRICS:
            raise InvalidInputError(f"unknown metric {m!r} (use {ALL_METRICS})")
    if eval_set.completes is None:
        missing = ", ".join(eval_set.ids[:5])
        raise InvalidInputError(
            f"eval split has no ground-truth completes (ids {missing}, ...)"
        )
    inputs = prepare_inputs(eval_set, model.cfg.n_input)
    per_sample = []
    for start in range(0, len(eval_set), batch):
        finals = model.complete(inputs[start:start + batch])
        for offset, pred in enumerate(finals):
            i = start + offset
            row = {}
            if "cd" in metrics:
                row["cd"] = chamfer_distance(pred, eval_set.completes[i]).scaled
            if "ucd" in metrics:
                row["ucd"] = unidirectional_chamfer(eval_set.partials[i], pred).scaled
            if "uhd" in metrics:
                row["uhd"] = unidirectional_hausdorff(eval_set.partials[i], pred).scaled
            per_sample.append(row)

    categories = sorted(set(eval_set.categories))
    rows = {}
    for category in categories:
        idx = [i for i, c in enumerate(eval_set.categories) if c == category]
        rows[category] = {
            m: float(np.mean([per_sample[i][m] for i in idx])) for m in metrics
        }
    avg = {m: float(np.mean([rows[c][m] for c in categories])) for m in metrics}
    return MetricTable(metrics=metrics, rows=rows, avg=avg)


@dataclass
class ProbeReport:
    """Linear domain-probe accuracy plus a 2D feature projection."""

    accuracy: float
    projection: np.ndarray  # (n, 3) columns: x, y, domain label

    def to_csv(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"# probe_accuracy={self.accuracy:.6f}\n")
            fh.write("x,y,domain\n")
            for x, y, lam in self.projection:
                fh.write(f"{x:.6f},{y:.6f},{int(lam)}\n")


def encoder_features(model, sample_set, batch=16):
    """Pooled encoder features (n, d) for every sample in a split."""
    inputs = prepare_inputs(sample_set, model.cfg.n_input)
    chunks = []
    with ad.no_grad():
        for start in range(0, len(sample_set), batch):
            out = model(inputs[start:start + batch])
            chunks.append(out.enc.global_feature.value)
    return np.concatenate(chunks, axis=0)


def _split_indices(n, test_frac, seed):
    # a pure function of (seed, n): equal-sized domains get the same split
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9B0BE, n]))
    order = rng.permutation(n)
    n_test = max(int(round(n * test_frac)), 1)
    return order[n_test:], order[:n_test]


def probe_alignment(model, source_set, target_set, seed=0, test_frac=0.25):
    """Fit a linear domain probe on frozen encoder features.

    Accuracy near chance means the domains are indistinguishable in
    feature space; high accuracy means they remain separated.
    """
    if len(source_set) == 0 or len(target_set) == 0:
        raise InvalidInputError("both splits must be nonempty")
    feats_s = encoder_features(model, source_set)
    feats_t = encoder_features(model, target_set)
    train_s, test_s = _split_indices(len(feats_s), test_frac, seed)
    train_t, test_t = _split_indices(len(feats_t), test_frac, seed)
    x_train = np.concatenate([feats_s[train_s], feats_t[train_t]])
    y_train = np.concatenate([np.zeros(len(train_s)), np.ones(len(train_t))])
    x_test = np.concatenate([feats_s[test_s], feats_t[test_t]])
    y_test = np.concatenate([np.zeros(len(test_s)), np.ones(len(test_t))])

    mu, sigma = x_train.mean(axis=0), x_train.std(axis=0) + 1e-8
    probe = LogisticRegression(max_iter=500, C=1.0)
    probe.fit((x_train - mu) / sigma, y_train)
    accuracy = float(probe.score((x_test - mu) / sigma, y_test))

    feats = np.concatenate([feats_s, feats_t])
    labels = np.concatenate([np.zeros(len(feats_s)), np.ones(len(feats_t))])
    centered = feats - feats.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:2].T
    projection = np.column_stack([coords, labels])
    return ProbeReport(accuracy=accuracy, projection=projection)


def complete_file(model, in_path, out_path):
    """Complete a single cloud file and write the dense result."""
    cloud = dataio.read_cloud(in_path)
    resampled = resample(cloud, model.cfg.n_input, seed=0)
    final = model.complete(resampled[None])[0]
    dataio.write_cloud(final, out_path)
    return final

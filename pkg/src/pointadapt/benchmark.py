"""Two-domain synthetic benchmark: occlusion, directory layout, manifest.

The source domain carries paired partial/complete clouds; the target
domain carries unpaired partials for training plus a held-out eval split
whose completes exist only for metric computation. The two domains must
differ in at least one of occlusion mode, resolution, or noise level,
otherwise there is no gap to adapt across.

Layout under the output root::

    source/train/{partial,complete}/NNNN_cat.ply
    target/train/partial/NNNN_cat.ply
    target/eval/{partial,complete}/NNNN_cat.ply
    manifest.json            # configs + per-shape seeds

Re-running with the manifest's seeds reproduces every file byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from pointadapt import dataio
from pointadapt.errors import ConfigError, InvalidInputError
from pointadapt.geometry import as_cloud, normalize_unit_sphere, resample
from pointadapt.shapes import CATEGORIES, generate_complete, sample_shape_spec

OCCLUSION_MODES = ("halfspace", "viewcone", "patch")

MIN_PARTIAL_POINTS = 64

SPLITS = ("source_train", "target_train", "target_eval")


@dataclass
class DomainConfig:
    """How one domain degrades complete shapes into partial scans."""

    occlusion: str
    occlusion_fraction: float
    resolution: int
    noise_sigma: float
    domain_label: int

    def __post_init__(self):
        if self.occlusion not in OCCLUSION_MODES:
            raise ConfigError(
                f"occlusion must be one of {OCCLUSION_MODES}, got {self.occlusion!r}"
            )
        if not 0.0 <= self.occlusion_fraction <= 0.6:
            raise ConfigError(
                f"occlusion_fraction must be in [0, 0.6], got {self.occlusion_fraction}"
            )
        if self.resolution < 1:
            raise ConfigError(f"resolution must be >= 1, got {self.resolution}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.domain_label not in (0, 1):
            raise ConfigError(f"domain_label must be 0 or 1, got {self.domain_label}")


def configs_differ(source, target):
    """True when the configs create an actual domain gap."""
    return (
        source.occlusion != target.occlusion
        or source.resolution != target.resolution
        or source.noise_sigma != target.noise_sigma
    )


def occlude(complete, cfg, seed, direction=None):
    """Remove a fraction of points, resample to the domain resolution, add noise.

    ``direction`` pins the halfspace/viewcone axis (unit vector) for tests;
    by default it is drawn from the seeded generator. With zero noise the
    output is a sub-multiset of ``complete``.
    """
    complete = as_cloud(complete, "complete")
    n = complete.shape[0]
    n_remove = int(round(cfg.occlusion_fraction * n))
    n_keep = n - n_remove
    if n_keep < MIN_PARTIAL_POINTS:
        raise InvalidInputError(
            f"occlusion fraction {cfg.occlusion_fraction} leaves {n_keep} points "
            f"(< {MIN_PARTIAL_POINTS})"
        )
    rng = np.random.default_rng(seed)
    if direction is None:
        direction = rng.normal(size=3)
        direction = direction / np.linalg.norm(direction)
    else:
        direction = np.asarray(direction, dtype=np.float64)
        direction = direction / np.linalg.norm(direction)

    if cfg.occlusion == "halfspace":
        # keep the n_keep points deepest below the cut plane
        proj = complete @ direction
        keep = np.argsort(proj, kind="stable")[:n_keep]
    elif cfg.occlusion == "viewcone":
        # remove the cone of points nearest the view direction
        centered = complete - complete.mean(axis=0)
        norms = np.linalg.norm(centered, axis=1)
        norms[norms == 0.0] = 1.0
        cos_angle = (centered / norms[:, None]) @ direction
        keep = np.argsort(cos_angle, kind="stable")[:n_keep]
    else:  # patch
        anchor = int(rng.integers(n))
        d = ((complete - complete[anchor]) ** 2).sum(axis=1)
        keep = np.argsort(d, kind="stable")[n_remove:]
    kept = complete[np.sort(keep)]
    partial = resample(kept, cfg.resolution, seed=int(rng.integers(2**63)))
    if cfg.noise_sigma > 0:
        partial = partial + rng.normal(0.0, cfg.noise_sigma, size=partial.shape)
    return partial


def _shape_seeds(master_seed, split, category, index):
    """Three stable child seeds (spec, complete, occlude) for one shape."""
    ss = np.random.SeedSequence(
        [master_seed, SPLITS.index(split), CATEGORIES.index(category), index]
    )
    return [int(s) for s in ss.generate_state(3)]


def _make_shape(category, seeds, n_complete, cfg):
    spec_seed, complete_seed, occlude_seed = seeds
    spec = sample_shape_spec(category, np.random.default_rng(spec_seed))
    complete = normalize_unit_sphere(generate_complete(spec, n_complete, complete_seed))
    partial = occlude(complete, cfg, occlude_seed)
    return spec, complete, partial


def build_benchmark(
    out_dir,
    source_cfg,
    target_cfg,
    per_category,
    seed,
    n_complete=256,
    categories=CATEGORIES,
):
    """Generate and write the full benchmark; returns the manifest dict."""
    if not configs_differ(source_cfg, target_cfg):
        raise ConfigError(
            "source and target configs must differ in occlusion mode, "
            "resolution, or noise_sigma"
        )
    if source_cfg.domain_label != 0 or target_cfg.domain_label != 1:
        raise ConfigError("source must have domain_label 0 and target 1")
    for name, cfg in (("source", source_cfg), ("target", target_cfg)):
        if not 0.05 <= cfg.occlusion_fraction <= 0.6:
            raise ConfigError(
                f"{name} occlusion_fraction must be in [0.05, 0.6] for a benchmark"
            )
    if per_category < 1:
        raise ConfigError("per_category must be >= 1")

    out = Path(out_dir)
    split_dirs = {
        "source_train": ("source/train", True),
        "target_train": ("target/train", False),
        "target_eval": ("target/eval", True),
    }
    split_cfg = {
        "source_train": source_cfg,
        "target_train": target_cfg,
        "target_eval": target_cfg,
    }
    shapes = []
    for split, (rel, with_complete) in split_dirs.items():
        (out / rel / "partial").mkdir(parents=True, exist_ok=True)
        if with_complete:
            (out / rel / "complete").mkdir(parents=True, exist_ok=True)
        cfg = split_cfg[split]
        counter = 0
        for category in categories:
            for i in range(per_category):
                seeds = _shape_seeds(seed, split, category, i)
                _, complete, partial = _make_shape(category, seeds, n_complete, cfg)
                fname = f"{counter:04d}_{category}.ply"
                dataio.write_cloud(partial, out / rel / "partial" / fname)
                if with_complete:
                    dataio.write_cloud(complete, out / rel / "complete" / fname)
                shapes.append(
                    {
                        "split": split,
                        "category": category,
                        "index": i,
                        "file": fname,
                        "seeds": seeds,
                    }
                )
                counter += 1
    manifest = {
        "version": 1,
        "master_seed": seed,
        "n_complete": n_complete,
        "per_category": per_category,
        "categories": list(categories),
        "source_cfg": asdict(source_cfg),
        "target_cfg": asdict(target_cfg),
        "shapes": shapes,
    }
    with open(out / "manifest.json", "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


@dataclass
class SampleSet:
    """One loaded split: parallel lists of ids, categories, clouds."""

    ids: list
    categories: list
    partials: list
    completes: list | None
    domain_label: int

    def __len__(self):
        return len(self.ids)


def load_manifest(data_dir):
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no manifest.json under {data_dir}")
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def load_split(data_dir, split):
    """Load one split per the manifest into memory."""
    manifest = load_manifest(data_dir)
    rel = {
        "source_train": "source/train",
        "target_train": "target/train",
        "target_eval": "target/eval",
    }[split]
    with_complete = split != "target_train"
    label = 0 if split == "source_train" else 1
    root = Path(data_dir) / rel
    ids, cats, partials, completes = [], [], [], []
    for entry in manifest["shapes"]:
        if entry["split"] != split:
            continue
        ids.append(f"{split}/{entry['file']}")
        cats.append(entry["category"])
        partials.append(dataio.read_cloud(root / "partial" / entry["file"]))
        if with_complete:
            completes.append(dataio.read_cloud(root / "complete" / entry["file"]))
    return SampleSet(ids, cats, partials, completes if with_complete else None, label)


def load_partial_dir(split_dir):
    """Load bare partials from a split directory (no manifest needed)."""
    root = Path(split_dir) / "partial"
    if not root.is_dir():
        raise ConfigError(f"{split_dir} has no partial/ subdirectory")
    files = sorted(os.listdir(root))
    if not files:
        raise ConfigError(f"{root} is empty")
    ids = [f"{split_dir}/{f}" for f in files]
    cats = [os.path.splitext(f)[0].split("_", 1)[-1] for f in files]
    partials = [dataio.read_cloud(root / f) for f in files]
    return SampleSet(ids, cats, partials, None, 1)

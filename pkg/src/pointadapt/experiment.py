"""The desk-scale adaptation experiment: five ablation variants, N seeds.

Builds (or reuses) a synthetic two-domain benchmark, trains the variant
ladder -- source-only, +token alignment, +domain-query alignment, both,
full (both + voting/pseudo-labels) -- across seeds, and reports
best-checkpoint target CD per category plus the feature-space domain
probe for every run. The output table has one row per variant, one
column per category plus Avg, matching the shape of an ablation table.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from pointadapt.benchmark import DomainConfig, build_benchmark, load_split
from pointadapt.evaluate import evaluate, probe_alignment
from pointadapt.model import ModelConfig
from pointadapt.trainer import (
    LossWeights,
    TrainConfig,
    config_from_flat,
    config_to_flat,
    load_checkpoint,
    train,
)

# toggle sets for the ablation ladder, in comparison order
VARIANTS = {
    "source_only": dict(
        use_ptfa_enc=False, use_ptfa_dec=False,
        use_dqfa_enc=False, use_dqfa_dec=False, use_vpc=False,
    ),
    "ptfa": dict(use_dqfa_enc=False, use_dqfa_dec=False, use_vpc=False),
    "dqfa": dict(use_ptfa_enc=False, use_ptfa_dec=False, use_vpc=False),
    "ptfa_dqfa": dict(use_vpc=False),
    "full": dict(),
}

VARIANT_ORDER = tuple(VARIANTS)


def default_benchmark_configs():
    source = DomainConfig(
        occlusion="halfspace", occlusion_fraction=0.35,
        resolution=192, noise_sigma=0.0, domain_label=0,
    )
    target = DomainConfig(
        occlusion="viewcone", occlusion_fraction=0.35,
        resolution=128, noise_sigma=0.015, domain_label=1,
    )
    return source, target


def default_train_config(seed=0, epochs=30):
    return TrainConfig(
        epochs=epochs,
        seed=seed,
        lr=1e-3,
        weight_decay=5e-5,
        batch_size=8,
        grl_eta_max=0.5,
        grl_warmup_frac=0.2,
        vpc_percentile=30.0,
        pseudo_weight=0.5,
        pseudo_start_epoch=10,
        eval_every=5,
        weights=LossWeights(),
        model=ModelConfig(
            n_proxies=32, embed_dim=64, knn_k=8, enc_layers=4, dec_layers=4,
            heads=4, ffn_dim=128, head="spd", up_factor=8, n_input=160,
        ),
    )


def ensure_benchmark(bench_dir, per_category=50, seed=7, n_complete=256):
    """Build the benchmark unless the directory already holds one."""
    bench = Path(bench_dir)
    if (bench / "manifest.json").exists():
        return bench
    source, target = default_benchmark_configs()
    build_benchmark(
        bench, source, target,
        per_category=per_category, seed=seed, n_complete=n_complete,
    )
    return bench


def variant_config(base_cfg, variant, seed):
    flat = config_to_flat(base_cfg)
    flat.update(VARIANTS[variant])
    flat["seed"] = seed
    return config_from_flat(flat)


def run_variant(bench_dir, out_dir, base_cfg, variant, seed, quiet=True):
    """Train one (variant, seed) run; returns its metrics record."""
    cfg = variant_config(base_cfg, variant, seed)
    t0 = time.time()
    summary = train(bench_dir, out_dir, cfg, quiet=quiet)
    model, *_ = load_checkpoint(Path(out_dir) / "checkpoint_best.npz")
    eval_set = load_split(bench_dir, "target_eval")
    table = evaluate(model, eval_set, metrics=("cd",))
    probe = probe_alignment(
        model,
        load_split(bench_dir, "source_train"),
        load_split(bench_dir, "target_train"),
        seed=0,
    )
    table.to_csv(Path(out_dir) / "eval_table.csv")
    return {
        "variant": variant,
        "seed": seed,
        "best_cd": summary["best_cd"],
        "final_cd": summary["final_cd"],
        "avg_cd_scaled": table.avg["cd"],
        "per_category_cd": {c: table.rows[c]["cd"] for c in table.rows},
        "probe_accuracy": probe.accuracy,
        "pseudo_labels": summary["pseudo_labels"],
        "wall_seconds": time.time() - t0,
    }


def run_matrix(bench_dir, out_root, seeds=(0, 1, 2), base_cfg=None,
               variants=VARIANT_ORDER, quiet=True):
    """Run the full variant x seed grid; writes results.json and the table."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    base_cfg = base_cfg or default_train_config()
    runs = []
    for variant in variants:
        for seed in seeds:
            run_dir = out_root / f"{variant}_seed{seed}"
            record = run_variant(bench_dir, run_dir, base_cfg, variant, seed,
                                 quiet=quiet)
            runs.append(record)
            if not quiet:
                print(
                    f"{variant} seed {seed}: CD {record['avg_cd_scaled']:.2f} "
                    f"probe {record['probe_accuracy']:.3f} "
                    f"({record['wall_seconds']:.0f}s)"
                )
            _write_results(out_root, runs, variants, seeds)
    return summarize(runs, variants, seeds)


def summarize(runs, variants=VARIANT_ORDER, seeds=(0, 1, 2)):
    """Median-over-seeds CD and probe accuracy per variant."""
    summary = {}
    for variant in variants:
        records = [r for r in runs if r["variant"] == variant]
        if not records:
            continue
        summary[variant] = {
            "median_cd": float(np.median([r["avg_cd_scaled"] for r in records])),
            "median_probe": float(np.median([r["probe_accuracy"] for r in records])),
            "cds": [r["avg_cd_scaled"] for r in records],
            "probes": [r["probe_accuracy"] for r in records],
        }
    return summary


def format_ablation_table(runs, variants=VARIANT_ORDER):
    """Variant rows x category columns (+Avg), medians over seeds."""
    categories = sorted(
        {c for r in runs for c in r["per_category_cd"]}
    )
    width = max(len(v) for v in variants) + 2
    header = "variant".ljust(width) + "".join(
        c.rjust(11) for c in categories
    ) + "Avg".rjust(11) + "probe".rjust(9)
    lines = [header, "-" * len(header)]
    for variant in variants:
        records = [r for r in runs if r["variant"] == variant]
        if not records:
            continue
        cells = []
        for category in categories:
            cells.append(
                float(np.median([r["per_category_cd"][category] for r in records]))
            )
        avg = float(np.median([r["avg_cd_scaled"] for r in records]))
        probe = float(np.median([r["probe_accuracy"] for r in records]))
        lines.append(
            variant.ljust(width)
            + "".join(f"{c:11.2f}" for c in cells)
            + f"{avg:11.2f}" + f"{probe:9.3f}"
        )
    return "\n".join(lines)


def _write_results(out_root, runs, variants, seeds):
    with open(out_root / "results.json", "w", encoding="ascii") as fh:
        json.dump(
            {"runs": runs, "summary": summarize(runs, variants, seeds)},
            fh, indent=1,
        )
    with open(out_root / "ablation_table.txt", "w", encoding="ascii") as fh:
        fh.write(format_ablation_table(runs, variants) + "\n")

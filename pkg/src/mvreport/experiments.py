"""Desk-scale analysis runs: the ablation ladder, domain-shift grids,
embedding geometry, and temperature sweeps.

All runs share the same synthetic dataset and splits (the data seed lives in
the config and is not varied), so mode and temperature comparisons are
controlled; only the training seed varies across repeats.  Trend assertions
elsewhere use means over seeds plus a sign count, never single runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ABLATION_MODES, TrainConfig
from .metrics import METRIC_HEADERS, MetricReport
from .training import Trainer

INPUT_CONDITIONS = ("frontal", "lateral", "both")


@dataclass
class AblationResult:
    seeds: list[int]
    metrics: dict[str, dict[int, MetricReport]]          # mode -> seed -> report
    checkpoints: dict[str, dict[int, Path]] = field(default_factory=dict)

    def mean_metric(self, mode: str, name: str = "B-1") -> float:
        rows = [self.metrics[mode][s].as_dict()[name] for s in self.seeds]
        return sum(rows) / len(rows)

    def per_seed(self, mode: str, name: str = "B-1") -> list[float]:
        return [self.metrics[mode][s].as_dict()[name] for s in self.seeds]


@dataclass
class DomainShiftResult:
    seeds: list[int]
    # model label -> condition -> seed -> report
    metrics: dict[str, dict[str, dict[int, MetricReport]]]

    def mean_metric(self, label: str, condition: str, name: str = "B-1") -> float:
        rows = [self.metrics[label][condition][s].as_dict()[name] for s in self.seeds]
        return sum(rows) / len(rows)

    def gap(self, label: str, name: str = "B-1") -> float:
        """Mean (both - worst single view) over seeds."""
        gaps = []
        for s in self.seeds:
            both = self.metrics[label]["both"][s].as_dict()[name]
            worst = min(self.metrics[label][c][s].as_dict()[name]
                        for c in ("frontal", "lateral"))
            gaps.append(both - worst)
        return sum(gaps) / len(gaps)


def train_one(config: TrainConfig, seed: int, out_dir: Path | None = None,
              with_rl: bool = False) -> tuple[MetricReport, Path | None, Trainer]:
    cfg = config.replace(seed=seed, rl_epochs=config.rl_epochs if with_rl else 0)
    trainer = Trainer(cfg)
    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / f"{cfg.ablation_mode}-s{seed}"
    result = trainer.train(run_dir)
    return result["test"], (run_dir / "checkpoint.pt" if run_dir else None), trainer


def run_ablation(config: TrainConfig, seeds: list[int], out_dir: str | Path,
                 modes: tuple[str, ...] = ABLATION_MODES,
                 with_rl: bool = False) -> AblationResult:
    """Train every wiring per seed on the shared dataset and score the test
    split.  Trend runs default to the pretraining phase only; pass
    ``with_rl=True`` for the full regime."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = AblationResult(seeds=list(seeds), metrics={}, checkpoints={})
    for mode in modes:
        result.metrics[mode] = {}
        result.checkpoints[mode] = {}
        for seed in seeds:
            report, ckpt, _ = train_one(config.replace(ablation_mode=mode), seed,
                                        out_dir, with_rl)
            result.metrics[mode][seed] = report
            result.checkpoints[mode][seed] = ckpt
    _write_metric_table(out_dir / "ablation.csv",
                        [(mode, seed, result.metrics[mode][seed])
                         for mode in modes for seed in seeds],
                        key_headers=("mode", "seed"))
    return result


def run_domain_shift(checkpoints: dict[str, dict[int, Path]],
                     out_dir: str | Path) -> DomainShiftResult:
    """Evaluate each checkpoint under frontal-only, lateral-only, and
    both-view input conditions on the same test split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = sorted(checkpoints)
    seeds = sorted(next(iter(checkpoints.values())))
    result = DomainShiftResult(seeds=list(seeds), metrics={})
    rows = []
    for label in labels:
        result.metrics[label] = {c: {} for c in INPUT_CONDITIONS}
        for seed in seeds:
            trainer = Trainer.from_checkpoint(checkpoints[label][seed])
            for condition in INPUT_CONDITIONS:
                report = trainer.evaluate("test", views=condition)
                result.metrics[label][condition][seed] = report
                rows.append((f"{label}/{condition}", seed, report))
    _write_metric_table(out_dir / "domain_shift.csv", rows,
                        key_headers=("model/views", "seed"))
    return result


def paired_view_distances(trainer: Trainer, split: str = "test") -> np.ndarray:
    """Cosine distance between the two views' semantic embeddings, per case."""
    model = trainer.model
    model.eval()
    cases = {"train": trainer.split.train, "val": trainer.split.val,
             "test": trainer.split.test}[split]
    dists = []
    with torch.no_grad():
        for start in range(0, len(cases), 32):
            batch = trainer.collate(cases[start:start + 32])
            f_f, f_l = model.view_features(batch)
            x_f, x_l = model.contrastive_embeddings(f_f, f_l, batch["tokens"],
                                                    batch["lengths"])
            cos = torch.nn.functional.cosine_similarity(x_f, x_l, dim=1)
            dists.extend((1.0 - cos).tolist())
    return np.asarray(dists)


def pca_2d(points: np.ndarray) -> np.ndarray:
    """Principal-component projection of (N, P) points to (N, 2)."""
    centered = points - points.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def run_embedding_analysis(checkpoint: str | Path, out_dir: str | Path,
                           split: str = "test") -> dict:
    """Paired-view distance statistics plus 2-D scatter coordinates."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer.from_checkpoint(checkpoint)
    model = trainer.model
    model.eval()
    cases = {"train": trainer.split.train, "val": trainer.split.val,
             "test": trainer.split.test}[split]
    xs, tags, ids = [], [], []
    with torch.no_grad():
        for start in range(0, len(cases), 32):
            batch = trainer.collate(cases[start:start + 32])
            f_f, f_l = model.view_features(batch)
            x_f, x_l = model.contrastive_embeddings(f_f, f_l, batch["tokens"],
                                                    batch["lengths"])
            xs.append(torch.cat([x_f, x_l]).numpy())
            tags.extend(["frontal"] * x_f.shape[0] + ["lateral"] * x_l.shape[0])
            ids.extend(batch["case_ids"] * 2)
    points = np.concatenate(xs)
    coords = pca_2d(points)
    dists = paired_view_distances(trainer, split)
    stats = {
        "mean_paired_distance": float(dists.mean()),
        "std_paired_distance": float(dists.std()),
        "n_pairs": int(dists.shape[0]),
    }
    with (out_dir / "embedding_scatter.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "view", "pc1", "pc2"])
        for cid, tag, (a, b) in zip(ids, tags, coords):
            writer.writerow([cid, tag, f"{a:.6f}", f"{b:.6f}"])
    (out_dir / "embedding_stats.json").write_text(json.dumps(stats, indent=2))
    return stats


def run_temperature_sweep(config: TrainConfig, param: str, values: list[float],
                          seeds: list[int], out_dir: str | Path,
                          with_rl: bool = False) -> list[dict]:
    """Train per (value, seed) and tabulate test metrics against the value."""
    if param not in ("tau_c", "tau_s"):
        raise ValueError(f"sweep param must be tau_c or tau_s, got {param!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        for seed in seeds:
            cfg = config.replace(**{param: float(value)})
            report, _, _ = train_one(cfg, seed, out_dir=None, with_rl=with_rl)
            rows.append({"param": param, "value": float(value), "seed": seed,
                         **report.as_dict()})
    with (out_dir / f"sweep_{param}.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["param", "value", "seed", *METRIC_HEADERS])
        writer.writeheader()
        writer.writerows(rows)
    return rows


def _write_metric_table(path: Path, rows: list[tuple], key_headers: tuple[str, ...]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*key_headers, *METRIC_HEADERS])
        for *keys, report in rows:
            writer.writerow([*keys, *(f"{v:.4f}" for v in report.as_row())])
